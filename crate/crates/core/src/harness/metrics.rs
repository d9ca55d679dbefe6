//! Relative errors between a multiscale and a fine pressure field.

use crate::error::{Error, Result};
use crate::fem::{assemble_weighted_mass, assemble_weighted_stiffness};
use crate::grid::FineGrid;
use crate::harness::config::H1Norm;
use crate::sparse::CsrMatrix;

fn relative_error(p_ms: &[f64], p_ref: &[f64], m: &CsrMatrix, what: &str) -> Result<f64> {
    if p_ms.len() != p_ref.len() || p_ref.len() != m.nrows() {
        return Err(Error::Dimension {
            context: "relative error",
            expected: m.nrows(),
            actual: p_ms.len().min(p_ref.len()),
        });
    }
    let reference = m.quad_form(p_ref);
    if !(reference > 0.0) {
        return Err(Error::NumericRange(format!("reference {what} norm is zero")));
    }
    let diff: Vec<f64> = p_ms.iter().zip(p_ref).map(|(a, b)| a - b).collect();
    Ok((m.quad_form(&diff).max(0.0) / reference).sqrt())
}

/// `‖p_ms − p_ref‖_M / ‖p_ref‖_M`, `M` the unweighted mass matrix.
pub fn relative_l2_error(p_ms: &[f64], p_ref: &[f64], mass: &CsrMatrix) -> Result<f64> {
    relative_error(p_ms, p_ref, mass, "L2")
}

/// `‖p_ms − p_ref‖_A / ‖p_ref‖_A`, `A` a stiffness (or stiffness plus mass) matrix.
pub fn relative_h1_error(p_ms: &[f64], p_ref: &[f64], stiffness: &CsrMatrix) -> Result<f64> {
    relative_error(p_ms, p_ref, stiffness, "H1")
}

/// Norm matrices for one fine grid.
#[derive(Debug, Clone)]
pub struct ErrorNorms {
    pub mass: CsrMatrix,
    pub energy: CsrMatrix,
}

impl ErrorNorms {
    /// `mobility` is `κ/μ` per cell.
    pub fn new(fine: &FineGrid, mobility: &[f64], h1: H1Norm) -> Result<Self> {
        let ones = vec![1.0; fine.num_cells()];
        let mass = assemble_weighted_mass(fine, &ones)?;
        let energy = match h1 {
            H1Norm::Weighted => assemble_weighted_stiffness(fine, mobility)?,
            H1Norm::Plain => {
                let mut a = assemble_weighted_stiffness(fine, &ones)?;
                // same sparsity pattern, so the values add entrywise
                for (x, m) in a.values_mut().iter_mut().zip(mass.values()) {
                    *x += m;
                }
                a
            }
        };
        Ok(Self { mass, energy })
    }

    pub fn l2(&self, p_ms: &[f64], p_ref: &[f64]) -> Result<f64> {
        relative_l2_error(p_ms, p_ref, &self.mass)
    }

    pub fn h1(&self, p_ms: &[f64], p_ref: &[f64]) -> Result<f64> {
        relative_h1_error(p_ms, p_ref, &self.energy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_dof() -> CsrMatrix {
        CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
    }

    #[test]
    fn trivial_cases() {
        let m = two_dof();
        let p = [3.0, -1.0];
        assert_eq!(relative_l2_error(&p, &p, &m).unwrap(), 0.0);
        let twice = [6.0, -2.0];
        assert!((relative_l2_error(&twice, &p, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_l2_error(&p, &[0.0, 0.0], &m).is_err());
    }

    #[test]
    fn two_dof_hand_case() {
        // e = (1, 2), p = (1, 0): eᵀMe = 2 + 4 + 12 = 18, pᵀMp = 2
        let m = two_dof();
        let e = relative_l2_error(&[2.0, 2.0], &[1.0, 0.0], &m).unwrap();
        assert!((e - 3.0).abs() < 1e-14);
    }

    #[test]
    fn seminorm_ignores_constant_shift() {
        let fine = FineGrid::new(3, 3, 3, 1.0).unwrap();
        let mob: Vec<f64> = (0..fine.num_cells()).map(|c| 1.0 + c as f64).collect();
        let norms = ErrorNorms::new(&fine, &mob, H1Norm::Weighted).unwrap();
        let p: Vec<f64> = (0..fine.num_nodes()).map(|n| fine.node_coords(n)[0] + 0.3 * n as f64).collect();
        let shifted: Vec<f64> = p.iter().map(|v| v + 5.0).collect();
        assert!(norms.h1(&shifted, &p).unwrap() < 1e-12);
        assert!(norms.l2(&shifted, &p).unwrap() > 0.1);

        let plain = ErrorNorms::new(&fine, &mob, H1Norm::Plain).unwrap();
        assert!(plain.h1(&shifted, &p).unwrap() > 0.1);
    }

    #[test]
    fn weighted_energy_of_linear_field() {
        // p = x: ∫ κ/μ |∇p|² = Σ_c mob_c h³
        let fine = FineGrid::new(2, 2, 2, 0.5).unwrap();
        let mob = [2.0, 7.0, 1.0, 3.0, 5.0, 0.5, 4.0, 6.5];
        let norms = ErrorNorms::new(&fine, &mob, H1Norm::Weighted).unwrap();
        let p: Vec<f64> = (0..fine.num_nodes()).map(|n| fine.node_coords(n)[0]).collect();
        let expected = 29.0 * 0.125;
        assert!((norms.energy.quad_form(&p) - expected).abs() < 1e-14);
        let q: Vec<f64> = p.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((norms.h1(&q, &p).unwrap() - 2.0).abs() < 1e-14);
    }
}
