//! Fine-grid Q1 discretization, backward-Euler Newton residual and Jacobian,
//! and the fine reference time loop.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FineGrid;
use crate::linsolve::SparseLu;
use crate::model::{FluidProps, ProblemSpec};
use crate::sparse::{norm2, CsrMatrix};

pub type ElementMatrix = [[f64; 8]; 8];

const M1: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
const S1: [[f64; 2]; 2] = [[1.0, -1.0], [-1.0, 1.0]];

fn kron3(x: &[[f64; 2]; 2], y: &[[f64; 2]; 2], z: &[[f64; 2]; 2]) -> ElementMatrix {
    let mut out = [[0.0; 8]; 8];
    for (a, row) in out.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = x[a & 1][b & 1] * y[(a >> 1) & 1][(b >> 1) & 1] * z[(a >> 2) & 1][(b >> 2) & 1];
        }
    }
    out
}

/// `∫ ∇φ_a · ∇φ_b` over a cube of edge `h`.
pub fn element_stiffness(h: f64) -> ElementMatrix {
    let mut k = [[0.0; 8]; 8];
    for part in [kron3(&S1, &M1, &M1), kron3(&M1, &S1, &M1), kron3(&M1, &M1, &S1)] {
        for a in 0..8 {
            for b in 0..8 {
                k[a][b] += h * part[a][b];
            }
        }
    }
    k
}

/// `∫ φ_a φ_b` over a cube of edge `h`.
pub fn element_mass(h: f64) -> ElementMatrix {
    let mut m = kron3(&M1, &M1, &M1);
    let h3 = h.powi(3);
    m.iter_mut().flatten().for_each(|v| *v *= h3);
    m
}

fn mat_vec8(k: &ElementMatrix, x: &[f64; 8]) -> [f64; 8] {
    let mut y = [0.0; 8];
    for a in 0..8 {
        y[a] = (0..8).map(|b| k[a][b] * x[b]).sum();
    }
    y
}

/// Sparsity pattern of the fine Q1 operator with per-cell scatter slots.
#[derive(Debug, Clone)]
pub struct FineAssembler {
    fine: FineGrid,
    pattern: CsrMatrix,
    slots: Vec<[usize; 64]>,
}

impl FineAssembler {
    pub fn new(fine: &FineGrid) -> Self {
        let mut triplets = Vec::with_capacity(fine.num_cells() * 64);
        for c in 0..fine.num_cells() {
            let nodes = fine.cell_nodes(c);
            for &r in &nodes {
                for &col in &nodes {
                    triplets.push((r, col, 0.0));
                }
            }
        }
        let pattern = CsrMatrix::from_triplets(fine.num_nodes(), fine.num_nodes(), &triplets);
        let slots = (0..fine.num_cells())
            .map(|c| {
                let nodes = fine.cell_nodes(c);
                let mut s = [0usize; 64];
                for a in 0..8 {
                    for b in 0..8 {
                        s[8 * a + b] = pattern.position(nodes[a], nodes[b]).expect("pattern entry");
                    }
                }
                s
            })
            .collect();
        Self {
            fine: *fine,
            pattern,
            slots,
        }
    }

    pub fn fine(&self) -> &FineGrid {
        &self.fine
    }

    /// Zero matrix with the full Q1 pattern.
    pub fn zero_matrix(&self) -> CsrMatrix {
        self.pattern.clone()
    }

    pub fn scatter(&self, target: &mut CsrMatrix, cell: usize, local: &ElementMatrix) {
        let vals = target.values_mut();
        let s = &self.slots[cell];
        for a in 0..8 {
            for b in 0..8 {
                vals[s[8 * a + b]] += local[a][b];
            }
        }
    }

    fn check_weights(&self, w: &[f64], strict: bool) -> Result<()> {
        if w.len() != self.fine.num_cells() {
            return Err(Error::Dimension {
                context: "cell weights",
                expected: self.fine.num_cells(),
                actual: w.len(),
            });
        }
        for (cell, &value) in w.iter().enumerate() {
            let bad = if strict { !(value > 0.0) } else { !(value >= 0.0) };
            if bad || !value.is_finite() {
                return Err(Error::Assembly { cell, value });
            }
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Assembly { cell: 0, value: 0.0 });
        }
        Ok(())
    }

    /// `Σ_c w_c K^e`.
    pub fn stiffness(&self, w: &[f64]) -> Result<CsrMatrix> {
        self.check_weights(w, true)?;
        Ok(self.weighted(w, &element_stiffness(self.fine.h)))
    }

    /// `Σ_c w_c M^e`.
    pub fn mass(&self, w: &[f64]) -> Result<CsrMatrix> {
        self.check_weights(w, false)?;
        Ok(self.weighted(w, &element_mass(self.fine.h)))
    }

    fn weighted(&self, w: &[f64], elem: &ElementMatrix) -> CsrMatrix {
        let mut out = self.zero_matrix();
        for (c, &wc) in w.iter().enumerate() {
            let mut local = *elem;
            local.iter_mut().flatten().for_each(|v| *v *= wc);
            self.scatter(&mut out, c, &local);
        }
        out
    }
}

pub fn assemble_weighted_stiffness(fine: &FineGrid, w: &[f64]) -> Result<CsrMatrix> {
    FineAssembler::new(fine).stiffness(w)
}

pub fn assemble_weighted_mass(fine: &FineGrid, w: &[f64]) -> Result<CsrMatrix> {
    FineAssembler::new(fine).mass(w)
}

/// Residual and Jacobian at one state.
#[derive(Debug, Clone)]
pub struct NonlinearSystem {
    pub residual: Vec<f64>,
    pub jacobian: CsrMatrix,
}

/// Discrete backward-Euler operator of one problem on the fine grid.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub problem: ProblemSpec,
    assembler: FineAssembler,
    kel: ElementMatrix,
    mobility: Vec<f64>,
    load: Vec<f64>,
    dirichlet: Vec<(usize, f64)>,
    is_dirichlet: Vec<bool>,
}

impl Discretization {
    pub fn new(problem: &ProblemSpec) -> Result<Self> {
        problem.validate()?;
        let fine = problem.fine;
        let dirichlet = problem.boundary.dirichlet_nodes(&fine);
        let mut is_dirichlet = vec![false; fine.num_nodes()];
        for &(n, _) in &dirichlet {
            is_dirichlet[n] = true;
        }
        let mu = problem.fluid.mu;
        Ok(Self {
            assembler: FineAssembler::new(&fine),
            kel: element_stiffness(fine.h),
            mobility: problem.permeability.values().iter().map(|k| k / mu).collect(),
            load: problem.load_vector(),
            dirichlet,
            is_dirichlet,
            problem: problem.clone(),
        })
    }

    pub fn fine(&self) -> &FineGrid {
        &self.problem.fine
    }

    pub fn fluid(&self) -> &FluidProps {
        &self.problem.fluid
    }

    pub fn dt(&self) -> f64 {
        self.problem.time.dt
    }

    pub fn assembler(&self) -> &FineAssembler {
        &self.assembler
    }

    /// Cell-wise `κ/μ`.
    pub fn mobility(&self) -> &[f64] {
        &self.mobility
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn dirichlet(&self) -> &[(usize, f64)] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self) -> &[bool] {
        &self.is_dirichlet
    }

    pub fn num_dofs(&self) -> usize {
        self.problem.fine.num_nodes()
    }

    fn check_len(&self, v: &[f64], context: &'static str) -> Result<()> {
        if v.len() != self.num_dofs() {
            return Err(Error::Dimension {
                context,
                expected: self.num_dofs(),
                actual: v.len(),
            });
        }
        Ok(())
    }

    fn cell_state(&self, p: &[f64], c: usize) -> ([usize; 8], [f64; 8], f64) {
        let nodes = self.problem.fine.cell_nodes(c);
        let mut loc = [0.0; 8];
        for (l, &n) in loc.iter_mut().zip(&nodes) {
            *l = p[n];
        }
        let mean = loc.iter().sum::<f64>() / 8.0;
        (nodes, loc, mean)
    }

    /// Flux of one cell: `K^e (p − p̄)`, identical to `K^e p` since constants
    /// are in the kernel but with far less cancellation.
    fn cell_flux(&self, loc: &[f64; 8], mean: f64) -> [f64; 8] {
        let d = loc.map(|v| v - mean);
        mat_vec8(&self.kel, &d)
    }

    /// Newton residual `F(p; p_prev)` with Dirichlet rows `p_j − p_j^d`.
    pub fn residual(&self, p: &[f64], p_prev: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(p, p_prev, false).map(|(f, _)| f)
    }

    /// Exact Jacobian of [`Self::residual`] at `p`.
    pub fn jacobian(&self, p: &[f64]) -> Result<CsrMatrix> {
        self.evaluate(p, p, true).map(|(_, j)| j.expect("jacobian requested"))
    }

    pub fn system(&self, p: &[f64], p_prev: &[f64]) -> Result<NonlinearSystem> {
        let (residual, jacobian) = self.evaluate(p, p_prev, true)?;
        Ok(NonlinearSystem {
            residual,
            jacobian: jacobian.expect("jacobian requested"),
        })
    }

    fn evaluate(&self, p: &[f64], p_prev: &[f64], with_jacobian: bool) -> Result<(Vec<f64>, Option<CsrMatrix>)> {
        self.check_len(p, "Newton state")?;
        self.check_len(p_prev, "previous state")?;
        let fluid = &self.problem.fluid;
        let dt = self.dt();
        let fine = &self.problem.fine;
        let vol8 = fine.h.powi(3) / 8.0;

        let mut f: Vec<f64> = self.load.iter().map(|q| -dt * q).collect();
        let mut jac = with_jacobian.then(|| self.assembler.zero_matrix());
        for c in 0..fine.num_cells() {
            let (nodes, loc, mean) = self.cell_state(p, c);
            let mean_prev = self.cell_state(p_prev, c).2;
            let rho = fluid.density(mean)?;
            let rho_prev = fluid.density(mean_prev)?;
            let acc = fluid.phi * (rho - rho_prev) * vol8;
            let w = dt * self.mobility[c];
            let flux = self.cell_flux(&loc, mean);
            for a in 0..8 {
                f[nodes[a]] += acc + w * rho * flux[a];
            }
            if let Some(jm) = jac.as_mut() {
                let dacc = fluid.phi * fluid.c * rho * vol8 / 8.0;
                let mut local = [[0.0; 8]; 8];
                for a in 0..8 {
                    let nl = w * fluid.c * rho / 8.0 * flux[a];
                    for b in 0..8 {
                        local[a][b] = dacc + w * rho * self.kel[a][b] + nl;
                    }
                }
                self.assembler.scatter(jm, c, &local);
            }
        }
        for &(n, v) in &self.dirichlet {
            f[n] = p[n] - v;
        }
        if let Some(jm) = jac.as_mut() {
            self.eliminate_dirichlet(jm);
        }
        Ok((f, jac))
    }

    fn eliminate_dirichlet(&self, m: &mut CsrMatrix) {
        if self.dirichlet.is_empty() {
            return;
        }
        let row_ptr = m.row_ptr().to_vec();
        let col_idx = m.col_idx().to_vec();
        let vals = m.values_mut();
        for r in 0..row_ptr.len() - 1 {
            for pos in row_ptr[r]..row_ptr[r + 1] {
                let c = col_idx[pos];
                if self.is_dirichlet[r] {
                    vals[pos] = if c == r { 1.0 } else { 0.0 };
                } else if self.is_dirichlet[c] {
                    vals[pos] = 0.0;
                }
            }
        }
    }

    /// Nodal accumulation `Σ_cells φ ρ(p̄) h³/8`, zero on Dirichlet nodes.
    /// Used as the scale of the residual.
    pub fn accumulation(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p, "Newton state")?;
        let fine = &self.problem.fine;
        let fluid = &self.problem.fluid;
        let vol8 = fine.h.powi(3) / 8.0;
        let mut a = vec![0.0; fine.num_nodes()];
        for c in 0..fine.num_cells() {
            let (nodes, _, mean) = self.cell_state(p, c);
            let m = fluid.phi * fluid.density(mean)? * vol8;
            for n in nodes {
                a[n] += m;
            }
        }
        for &(n, _) in &self.dirichlet {
            a[n] = 0.0;
        }
        Ok(a)
    }

    /// Total fluid mass `(φ ρ(p), 1)` with the same midpoint rule as the residual.
    pub fn total_mass(&self, p: &[f64]) -> Result<f64> {
        self.check_len(p, "Newton state")?;
        let fine = &self.problem.fine;
        let fluid = &self.problem.fluid;
        let vol = fine.h.powi(3);
        let mut m = 0.0;
        for c in 0..fine.num_cells() {
            m += fluid.phi * fluid.density(self.cell_state(p, c).2)? * vol;
        }
        Ok(m)
    }

    /// Size of the residual noise caused by rounding the state:
    /// `ε ‖ |J| |p| ‖` over non-Dirichlet rows.
    pub fn roundoff_floor(&self, jacobian: &CsrMatrix, p: &[f64]) -> f64 {
        let abs_p: Vec<f64> = p.iter().map(|v| v.abs()).collect();
        let mut acc = vec![0.0; p.len()];
        for (r, out) in acc.iter_mut().enumerate() {
            let (cols, vals) = jacobian.row(r);
            *out = cols.iter().zip(vals).map(|(&c, v)| v.abs() * abs_p[c]).sum();
        }
        f64::EPSILON * self.free_norm(&acc)
    }

    /// 2-norm over non-Dirichlet rows.
    pub fn free_norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.is_dirichlet)
            .filter(|(_, d)| !**d)
            .map(|(x, _)| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Initial pressure with Dirichlet data.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        self.problem.initial_pressure()
    }
}

pub fn newton_residual(disc: &Discretization, p: &[f64], p_prev: &[f64]) -> Result<Vec<f64>> {
    disc.residual(p, p_prev)
}

pub fn newton_jacobian(disc: &Discretization, p: &[f64]) -> Result<CsrMatrix> {
    disc.jacobian(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    /// Relative tolerance: the residual norm is compared with `tol` times
    /// the norm of the nodal accumulation `φ ρ(p) |supp φ_j|/8`, or with the
    /// rounding floor `ε ‖ |J| |p| ‖` when that is larger.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step length in `(0, 1]`.
    pub damping: f64,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20,
            damping: 1.0,
            max_halvings: 4,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config(format!("newton.tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::config("newton.max_iter must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config(format!("newton.damping must lie in (0, 1], got {}", self.damping)));
        }
        Ok(())
    }
}

/// Wall-clock split of a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    /// Basis construction.
    pub basis: Duration,
    /// Residual and Jacobian assembly.
    pub assembly: Duration,
    /// Galerkin projection `RᵀJR`, `RᵀF`.
    pub projection: Duration,
    /// Linear solves.
    pub solve: Duration,
}

impl Timings {
    pub fn add(&mut self, other: &Timings) {
        self.basis += other.basis;
        self.assembly += other.assembly;
        self.projection += other.projection;
        self.solve += other.solve;
    }

    /// Projection plus linear solves.
    pub fn solve_total(&self) -> Duration {
        self.projection + self.solve
    }
}

#[derive(Debug, Clone)]
pub struct FineSolution {
    /// `p_h^n`, `n = 0..=Nt`.
    pub states: Vec<Vec<f64>>,
    /// Newton iterations per step, `n = 1..=Nt`.
    pub newton_iterations: Vec<usize>,
    pub timings: Timings,
}

impl FineSolution {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("at least the initial state")
    }

    pub fn newton_total(&self) -> usize {
        self.newton_iterations.iter().sum()
    }
}

/// One backward-Euler step on the fine grid, starting from `p_prev`.
pub fn fine_step(
    disc: &Discretization,
    p_prev: &[f64],
    cfg: &NewtonConfig,
    step: usize,
    timings: &mut Timings,
) -> Result<(Vec<f64>, usize)> {
    let mut p = p_prev.to_vec();
    for &(n, v) in disc.dirichlet() {
        p[n] = v;
    }
    let t = Instant::now();
    let mut sys = disc.system(&p, p_prev)?;
    let mut scale = disc.free_norm(&disc.accumulation(&p)?);
    timings.assembly += t.elapsed();
    let mut norm = disc.free_norm(&sys.residual);
    let mut iterations = 0;
    loop {
        if norm <= (cfg.tol * scale).max(disc.roundoff_floor(&sys.jacobian, &p)) {
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
        let rhs: Vec<f64> = sys.residual.iter().map(|v| -v).collect();
        let delta = SparseLu::factor(&sys.jacobian)?.solve(&rhs)?;
        timings.solve += t.elapsed();

        let t = Instant::now();
        let mut alpha = cfg.damping;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = p.iter().zip(&delta).map(|(x, d)| x + alpha * d).collect();
            let trial_sys = disc.system(&trial, p_prev)?;
            let trial_norm = disc.free_norm(&trial_sys.residual);
            if trial_norm <= norm || halvings == cfg.max_halvings {
                p = trial;
                sys = trial_sys;
                norm = trial_norm;
                break;
            }
            alpha *= 0.5;
            halvings += 1;
        }
        scale = disc.free_norm(&disc.accumulation(&p)?);
        timings.assembly += t.elapsed();
        log::trace!("fine step {step} iteration {iterations}: relative residual {:e}", norm / scale);
    }
}

/// Fine reference trajectory.
pub fn solve_fine(problem: &ProblemSpec, cfg: &NewtonConfig) -> Result<FineSolution> {
    cfg.validate()?;
    let disc = Discretization::new(problem)?;
    solve_fine_with(&disc, cfg)
}

pub fn solve_fine_with(disc: &Discretization, cfg: &NewtonConfig) -> Result<FineSolution> {
    let mut timings = Timings::default();
    let mut states = vec![disc.initial_state()?];
    let mut newton_iterations = Vec::with_capacity(disc.problem.time.steps);
    for step in 1..=disc.problem.time.steps {
        let (p, its) = fine_step(disc, states.last().unwrap(), cfg, step, &mut timings)?;
        log::debug!("fine step {step}: {its} Newton iterations");
        newton_iterations.push(its);
        states.push(p);
    }
    Ok(FineSolution {
        states,
        newton_iterations,
        timings,
    })
}

/// Euclidean residual norm scaled like the Newton test, for diagnostics.
pub fn relative_residual(disc: &Discretization, p: &[f64], p_prev: &[f64]) -> Result<f64> {
    let f = disc.residual(p, p_prev)?;
    Ok(disc.free_norm(&f) / norm2(&disc.accumulation(p)?).max(f64::MIN_POSITIVE))
}
