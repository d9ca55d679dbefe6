//! Galerkin Newton time loop on the multiscale space: `RᵀJR δ = −RᵀF`,
//! `p ← p + R δ`.

use std::time::Instant;

use faer::Mat;

use crate::error::{Error, Result};
use crate::fem::{Discretization, NewtonConfig, Timings};
use crate::grid::TwoScaleMesh;
use crate::linsolve::dense_solve;
use crate::offline::{OfflineSpace, ProjectionMatrix};
use crate::online::{enrich_and_update, UpdateSchedule};
use crate::sparse::{norm2, CsrMatrix};

/// `R` and `Rᵀ` in CSR form for repeated triple products.
#[derive(Debug, Clone)]
pub struct Projector {
    r: CsrMatrix,
    rt: CsrMatrix,
    rt_abs: CsrMatrix,
}

impl Projector {
    pub fn new(r: &ProjectionMatrix) -> Self {
        let rt = r.transpose_csr();
        let mut rt_abs = rt.clone();
        rt_abs.values_mut().iter_mut().for_each(|v| *v = v.abs());
        Self {
            r: rt.transpose(),
            rt,
            rt_abs,
        }
    }

    pub fn dim(&self) -> usize {
        self.rt.nrows()
    }

    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.rt.mul_vec(v)
    }

    pub fn prolong(&self, x: &[f64]) -> Vec<f64> {
        self.r.mul_vec(x)
    }

    /// `(RᵀJR, RᵀF)`.
    pub fn project(&self, j: &CsrMatrix, f: &[f64]) -> Result<(Mat<f64>, Vec<f64>)> {
        if j.nrows() != self.r.nrows() || f.len() != self.r.nrows() {
            return Err(Error::Dimension {
                context: "Galerkin projection",
                expected: self.r.nrows(),
                actual: j.nrows().max(f.len()),
            });
        }
        let jr = j.matmul(&self.r)?;
        let coarse = self.rt.matmul(&jr)?;
        Ok((coarse.to_faer_dense(), self.rt.mul_vec(f)))
    }

    /// `ε ‖ |R|ᵀ |J| |p| ‖`, the rounding floor of `RᵀF`.
    fn roundoff_floor(&self, j: &CsrMatrix, p: &[f64]) -> f64 {
        let mut acc = vec![0.0; p.len()];
        for (r, out) in acc.iter_mut().enumerate() {
            let (cols, vals) = j.row(r);
            *out = cols.iter().zip(vals).map(|(&c, v)| v.abs() * p[c].abs()).sum();
        }
        f64::EPSILON * norm2(&self.rt_abs.mul_vec(&acc))
    }
}

/// `(RᵀJR, RᵀF)` for a one-off projection.
pub fn project_system(r: &ProjectionMatrix, j: &CsrMatrix, f: &[f64]) -> Result<(Mat<f64>, Vec<f64>)> {
    Projector::new(r).project(j, f)
}

/// One backward-Euler step in the span of `R`, starting from `p_prev`.
pub fn gmsfem_step(
    disc: &Discretization,
    r: &ProjectionMatrix,
    p_prev: &[f64],
    cfg: &NewtonConfig,
    step: usize,
    timings: &mut Timings,
) -> Result<(Vec<f64>, usize)> {
    if r.nrows() != disc.num_dofs() {
        return Err(Error::Dimension {
            context: "projection rows",
            expected: disc.num_dofs(),
            actual: r.nrows(),
        });
    }
    let proj = Projector::new(r);
    let mut p = p_prev.to_vec();
    for &(n, v) in disc.dirichlet() {
        p[n] = v;
    }

    let t = Instant::now();
    let mut sys = disc.system(&p, p_prev)?;
    let mut scale = norm2(&proj.restrict(&disc.accumulation(&p)?));
    timings.assembly += t.elapsed();
    let mut g = proj.restrict(&sys.residual);
    let mut norm = norm2(&g);
    let mut iterations = 0;
    loop {
        let floor = proj.roundoff_floor(&sys.jacobian, &p);
        if norm <= (cfg.tol * scale).max(floor) {
            log::trace!(
                "coarse step {step}: converged after {iterations} iterations, fine residual {:e}",
                disc.free_norm(&sys.residual)
            );
            return Ok((p, iterations));
        }
        if iterations == cfg.max_iter {
            return Err(Error::NewtonDivergence {
                step,
                residual: norm / scale,
                iterations,
            });
        }
        iterations += 1;

        let t = Instant::now();
        let (a, _) = proj.project(&sys.jacobian, &sys.residual)?;
        timings.projection += t.elapsed();
        let t = Instant::now();
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta_h = dense_solve(&a, &rhs)?;
        let delta = proj.prolong(&delta_h);
        timings.solve += t.elapsed();

        let t = Instant::now();
        let mut alpha = cfg.damping;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = p.iter().zip(&delta).map(|(x, d)| x + alpha * d).collect();
            let trial_sys = disc.system(&trial, p_prev)?;
            let trial_g = proj.restrict(&trial_sys.residual);
            let trial_norm = norm2(&trial_g);
            if trial_norm <= norm || halvings == cfg.max_halvings {
                p = trial;
                sys = trial_sys;
                g = trial_g;
                norm = trial_norm;
                break;
            }
            alpha *= 0.5;
            halvings += 1;
        }
        scale = norm2(&proj.restrict(&disc.accumulation(&p)?));
        timings.assembly += t.elapsed();
    }
}

/// Multiscale trajectory.
#[derive(Debug, Clone)]
pub struct CoarseSolution {
    /// `p_H^n` on the fine grid, `n = 0..=Nt`.
    pub states: Vec<Vec<f64>>,
    /// Newton iterations per step.
    pub newton_iterations: Vec<usize>,
    /// Coarse dimension used at each step.
    pub dims: Vec<usize>,
    pub timings: Timings,
    /// Projection matrix at the end of the run.
    pub projection: ProjectionMatrix,
}

impl CoarseSolution {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("at least the initial state")
    }

    pub fn newton_total(&self) -> usize {
        self.newton_iterations.iter().sum()
    }

    /// Largest coarse dimension used.
    pub fn dim(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(self.projection.dim())
    }
}

/// Full multiscale run: online enrichment at scheduled steps, then a Galerkin
/// Newton solve per step. `p_H^0` is the fine initial pressure.
pub fn solve_gmsfem(
    disc: &Discretization,
    mesh: &TwoScaleMesh,
    offline: &OfflineSpace,
    schedule: &UpdateSchedule,
    cfg: &NewtonConfig,
) -> Result<CoarseSolution> {
    cfg.validate()?;
    schedule.validate(disc.problem.time.steps)?;
    let mut r = offline.projection.clone();
    let mut timings = Timings::default();
    let mut states = vec![disc.initial_state()?];
    let mut newton_iterations = Vec::new();
    let mut dims = Vec::new();
    for step in 1..=disc.problem.time.steps {
        let p_prev = states.last().unwrap().clone();
        if schedule.is_update_step(step) {
            let t = Instant::now();
            let mut inner = Timings::default();
            let report = enrich_and_update(&mut r, schedule, disc, mesh, offline, &p_prev, step, cfg, &mut inner)?;
            timings.basis += t.elapsed();
            log::debug!(
                "step {step}: {} online vectors added, {} skipped, dim {}",
                report.added,
                report.skipped,
                r.dim()
            );
        }
        if r.dim() == 0 {
            return Err(Error::config("the coarse space is empty"));
        }
        let (p, its) = gmsfem_step(disc, &r, &p_prev, cfg, step, &mut timings)?;
        log::debug!("coarse step {step}: {its} Newton iterations, dim {}", r.dim());
        newton_iterations.push(its);
        dims.push(r.dim());
        states.push(p);
    }
    Ok(CoarseSolution {
        states,
        newton_iterations,
        dims,
        timings,
        projection: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offline::{BasisColumn, ColumnKind, ColumnMeta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_csr(rng: &mut ChaCha8Rng, n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if rng.random_range(0.0..1.0) < 0.3 || i == j {
                    t.push((i, j, rng.random_range(-1.0..1.0)));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    fn dense_columns(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ProjectionMatrix {
        let mut r = ProjectionMatrix::new(n);
        for c in 0..m {
            r.push(
                BasisColumn::from_entries((0..n).map(|i| (i, rng.random_range(-1.0..1.0)))),
                ColumnMeta {
                    neighborhood: c,
                    kind: ColumnKind::Offline { index: 0 },
                },
            );
        }
        r
    }

    #[test]
    fn projection_special_cases_and_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20;
        let j = random_csr(&mut rng, n);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let id = ProjectionMatrix::identity(n, &vec![false; n]);
        let (a, g) = project_system(&id, &j, &f).unwrap();
        for r in 0..n {
            assert_eq!(g[r], f[r]);
            for c in 0..n {
                assert_eq!(a[(r, c)], j.get(r, c));
            }
        }

        let mut ones = ProjectionMatrix::new(n);
        ones.push(
            BasisColumn::from_entries((0..n).map(|i| (i, 1.0))),
            ColumnMeta {
                neighborhood: 0,
                kind: ColumnKind::Offline { index: 0 },
            },
        );
        let (a, g) = project_system(&ones, &j, &f).unwrap();
        let total: f64 = j.values().iter().sum();
        assert!((a[(0, 0)] - total).abs() < 1e-12 * total.abs().max(1.0));
        assert!((g[0] - f.iter().sum::<f64>()).abs() < 1e-12);

        let r = dense_columns(&mut rng, n, 5);
        let (a, g) = project_system(&r, &j, &f).unwrap();
        let rd: Vec<Vec<f64>> = r.columns().iter().map(|c| c.to_dense(n)).collect();
        let jd = j.to_dense();
        for p in 0..5 {
            let gp: f64 = (0..n).map(|i| rd[p][i] * f[i]).sum();
            assert!((g[p] - gp).abs() <= 1e-12 * gp.abs().max(1.0));
            for q in 0..5 {
                let mut v = 0.0;
                for i in 0..n {
                    for k in 0..n {
                        v += rd[p][i] * jd[i][k] * rd[q][k];
                    }
                }
                assert!((a[(p, q)] - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }
}
