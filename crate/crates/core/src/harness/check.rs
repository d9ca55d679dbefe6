//! Quick invariant suite behind the `check` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coarse::gmsfem_step;
use crate::error::Result;
use crate::fem::{fine_step, Discretization, Timings};
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::Setup;
use crate::model::{FluidProps, PermeabilityField, ProblemSpec, TimeGrid};
use crate::grid::build_two_scale_mesh;
use crate::offline::{
    build_offline_space, build_partition_of_unity, build_snapshot_v1, cell_density, compute_kappa_tilde,
    solve_local_spectral, OfflineConfig, ProjectionMatrix,
};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Largest `|Σ_i χ_i − 1|` over the fine nodes.
pub fn partition_of_unity_defect(setup: &Setup) -> Result<f64> {
    let pou = build_partition_of_unity(&setup.mesh);
    let mut sum = vec![0.0; setup.mesh.fine.num_nodes()];
    for (nb, chi) in setup.mesh.neighborhoods.iter().zip(&pou.chi) {
        for (&n, &c) in nb.nodes.iter().zip(chi) {
            sum[n] += c;
        }
    }
    Ok(sum.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max))
}

/// Number of nonzero projection entries on `∂ω_i \ ∂D` or at Dirichlet nodes.
pub fn conformity_violations(setup: &Setup, r: &ProjectionMatrix) -> usize {
    let mut bad = 0;
    for (col, meta) in r.columns().iter().zip(r.meta()) {
        let nb = &setup.mesh.neighborhoods[meta.neighborhood];
        for (&row, &v) in col.rows.iter().zip(&col.values) {
            if v == 0.0 {
                continue;
            }
            let inside = nb.nodes.binary_search(&row).ok();
            let on_cut = inside.is_some_and(|local| nb.boundary.contains(&local));
            if inside.is_none() || on_cut || setup.disc.is_dirichlet()[row] {
                bad += 1;
            }
        }
    }
    bad
}

/// Largest relative deviation of analytic Jacobian columns from central
/// differences of the residual, over `columns` random free columns.
pub fn jacobian_fd_defect(disc: &Discretization, p: &[f64], p_prev: &[f64], columns: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jac = disc.jacobian(p)?;
    let dense = jac.to_dense();
    let free: Vec<usize> = (0..disc.num_dofs()).filter(|&i| !disc.is_dirichlet()[i]).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..columns {
        let j = free[rng.random_range(0..free.len())];
        let step = 1e-6 * p[j].abs().max(1.0);
        let mut plus = p.to_vec();
        plus[j] += step;
        let mut minus = p.to_vec();
        minus[j] -= step;
        let fp = disc.residual(&plus, p_prev)?;
        let fm = disc.residual(&minus, p_prev)?;
        let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
        let col: Vec<f64> = (0..dense.len()).map(|i| dense[i][j]).collect();
        let scale = col.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let diff = fd.iter().zip(&col).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

fn fd_check(seed: u64) -> Result<f64> {
    let mesh = build_two_scale_mesh(4, 4, 4, 2, 20.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kappa: Vec<f64> = (0..mesh.fine.num_cells())
        .map(|_| 10f64.powf(rng.random_range(5.0..9.0)))
        .collect();
    let problem = ProblemSpec::mixed_bc(
        mesh.fine,
        FluidProps::default(),
        PermeabilityField::new(kappa)?,
        TimeGrid::new(7.0, 1)?,
    );
    let disc = Discretization::new(&problem)?;
    let mut p: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(2.0e7..2.16e7)).collect();
    for &(n, v) in disc.dirichlet() {
        p[n] = v;
    }
    let p_prev: Vec<f64> = p.iter().map(|v| v - rng.random_range(0.0..1e5)).collect();
    jacobian_fd_defect(&disc, &p, &p_prev, 20, seed)
}

/// Runs every check on the configured problem (plus a 4³ Jacobian test).
pub fn run_checks(cfg: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let setup = Setup::new(cfg)?;
    let mut out = Vec::new();

    let d = partition_of_unity_defect(&setup)?;
    out.push(CheckOutcome::new("partition-of-unity", d <= 1e-14, format!("max |sum chi - 1| = {d:e}")));

    let p0 = setup.disc.initial_state()?;
    let ocfg = OfflineConfig {
        snapshot: cfg.basis.snapshot,
        count: cfg.basis.offline.max(1),
        per_neighborhood: None,
        rho_weight: cfg.basis.rho_weight,
    };
    let space = build_offline_space(
        &setup.mesh,
        setup.disc.fluid(),
        &setup.permeability,
        &p0,
        setup.disc.is_dirichlet(),
        &ocfg,
    )?;
    let bad = conformity_violations(&setup, &space.projection);
    out.push(CheckOutcome::new("conformity", bad == 0, format!("{bad} nonzero entries outside the supports")));

    let rho0 = cell_density(&setup.mesh, setup.disc.fluid(), &p0)?;
    let stiff: Vec<f64> = setup.permeability.values().iter().zip(&rho0).map(|(k, r)| k * r).collect();
    let kt = compute_kappa_tilde(&setup.permeability, &rho0, &space.pou, cfg.basis.rho_weight)?;
    let mut spectral_ok = true;
    let mut worst_first: f64 = 0.0;
    for id in 0..setup.mesh.num_neighborhoods() {
        let spec = solve_local_spectral(&setup.mesh, build_snapshot_v1(&setup.mesh, id)?, &stiff, &kt)?;
        let ev = &spec.eigenvalues;
        let scale = ev.last().copied().unwrap_or(1.0).abs().max(1.0);
        worst_first = worst_first.max(ev[0].abs() / scale);
        spectral_ok &= ev.windows(2).all(|w| w[0] <= w[1]);
    }
    spectral_ok &= worst_first <= 1e-10;
    out.push(CheckOutcome::new(
        "spectral",
        spectral_ok,
        format!("smallest eigenvalue / largest = {worst_first:e}, ascending = {spectral_ok}"),
    ));

    let d = fd_check(cfg.seed)?;
    out.push(CheckOutcome::new("jacobian-fd", d <= 1e-6, format!("max relative column error = {d:e}")));

    let id = ProjectionMatrix::identity(setup.disc.num_dofs(), setup.disc.is_dirichlet());
    let mut t = Timings::default();
    let (pf, _) = fine_step(&setup.disc, &p0, &cfg.newton, 1, &mut t)?;
    let (pc, _) = gmsfem_step(&setup.disc, &id, &p0, &cfg.newton, 1, &mut t)?;
    let scale = pf.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let diff = pf.iter().zip(&pc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    out.push(CheckOutcome::new("identity-projection", diff <= 1e-10, format!("relative max difference = {diff:e}")));

    let m0 = setup.disc.total_mass(&p0)?;
    let m1 = setup.disc.total_mass(&pf)?;
    let net = setup.disc.load().iter().sum::<f64>() * setup.disc.dt();
    let defect = ((m1 - m0) - net).abs() / m0;
    let closed = setup.disc.dirichlet().is_empty();
    out.push(CheckOutcome::new(
        "mass-balance",
        !closed || defect <= 1e-8,
        if closed {
            format!("relative mass defect after one step = {defect:e}")
        } else {
            "skipped (Dirichlet boundary)".to_string()
        },
    ));
    Ok(out)
}
