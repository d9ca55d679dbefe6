//! Acceptance criteria. Each test prints one PASS/FAIL line and then asserts.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gmsfem::coarse::solve_gmsfem;
use gmsfem::fem::{solve_fine_with, Discretization, NewtonConfig};
use gmsfem::grid::build_two_scale_mesh;
use gmsfem::harness::config::ExperimentConfig;
use gmsfem::harness::experiment::{identity_space, Setup};
use gmsfem::harness::{read_vtk, run_sweep, SweepOutput};
use gmsfem::model::{FluidProps, PermeabilityField, ProblemPreset, ProblemSpec, TimeGrid};
use gmsfem::offline::{
    build_offline_space, build_partition_of_unity, build_snapshot_v1, build_snapshot_v2, cell_density,
    compute_kappa_tilde, local_mass, local_stiffness, solve_local_spectral, OfflineConfig, RhoWeight,
};
use gmsfem::online::UpdateSchedule;

fn verdict(n: usize, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {n:>2} {}: {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // bypass the test harness capture so the line always reaches the log
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

/// 16³ channel field (contrast 1e4), r = 4, 20 steps of 7.
fn desk_config(preset: ProblemPreset, variants: &[&str], out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 42;
    cfg.problem.preset = preset;
    cfg.sweep.variants = variants.iter().map(|s| s.to_string()).collect();
    cfg.output.dir = out.to_path_buf();
    cfg
}

struct Sweep {
    out: SweepOutput,
    elapsed: Duration,
    summary: String,
}

fn sweep(preset: ProblemPreset, variants: &[&str]) -> Sweep {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(preset, variants, dir.path());
    let t = Instant::now();
    let out = run_sweep(&cfg).unwrap();
    let elapsed = t.elapsed();
    let summary = std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    Sweep { out, elapsed, summary }
}

fn mixed_sweep() -> &'static Sweep {
    static CELL: OnceLock<Sweep> = OnceLock::new();
    CELL.get_or_init(|| sweep(ProblemPreset::MixedBc, &["2+0", "4+0", "8+0", "4+1", "4+1@1,7,14"]))
}

fn wells_sweep() -> &'static Sweep {
    static CELL: OnceLock<Sweep> = OnceLock::new();
    CELL.get_or_init(|| sweep(ProblemPreset::NeumannWells, &["4+0", "3+1"]))
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(f64::abs).fold(0.0, f64::max)
}

#[test]
fn criterion_01_jacobian_matches_finite_differences() {
    let t = Instant::now();
    let mesh = build_two_scale_mesh(4, 4, 4, 2, 20.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let kappa: Vec<f64> = (0..mesh.fine.num_cells()).map(|_| 10f64.powf(rng.random_range(5.0..9.0))).collect();
    let problem = ProblemSpec::mixed_bc(
        mesh.fine,
        FluidProps::default(),
        PermeabilityField::new(kappa).unwrap(),
        TimeGrid::new(7.0, 1).unwrap(),
    );
    let disc = Discretization::new(&problem).unwrap();
    let mut p: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(2.0e7..2.16e7)).collect();
    for &(n, v) in disc.dirichlet() {
        p[n] = v;
    }
    let p_prev: Vec<f64> = p.iter().map(|v| v + rng.random_range(-1e5..1e5)).collect();
    let jac = disc.jacobian(&p).unwrap().to_dense();
    let free: Vec<usize> = (0..disc.num_dofs()).filter(|&i| !disc.is_dirichlet()[i]).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let j = free[rng.random_range(0..free.len())];
        let d = 1e-6 * p[j].abs();
        let mut plus = p.clone();
        plus[j] += d;
        let mut minus = p.clone();
        minus[j] -= d;
        let fp = disc.residual(&plus, &p_prev).unwrap();
        let fm = disc.residual(&minus, &p_prev).unwrap();
        let col: Vec<f64> = jac.iter().map(|row| row[j]).collect();
        let err = max_abs(fp.iter().zip(&fm).zip(&col).map(|((a, b), c)| (a - b) / (2.0 * d) - c));
        worst = worst.max(err / max_abs(col.iter().copied()));
    }
    let elapsed = t.elapsed();
    verdict(
        1,
        "Jacobian exactness",
        worst <= 1e-6 && elapsed < Duration::from_secs(5),
        format!("max relative column error {worst:.3e} over 20 columns, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_identity_projection_equals_fine_solver() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_config(ProblemPreset::MixedBc, &[], dir.path());
    cfg.mesh.nx = 8;
    cfg.mesh.ny = 8;
    cfg.mesh.nz = 8;
    cfg.time.steps = 5;
    cfg.basis.identity = true;
    let setup = Setup::new(&cfg).unwrap();
    let fine = solve_fine_with(&setup.disc, &cfg.newton).unwrap();
    let coarse = solve_gmsfem(
        &setup.disc,
        &setup.mesh,
        &identity_space(&setup),
        &UpdateSchedule::offline_only(),
        &cfg.newton,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in fine.states.iter().zip(&coarse.states) {
        let d = max_abs(a.iter().zip(b).map(|(x, y)| x - y));
        worst = worst.max(d / max_abs(a.iter().copied()));
    }
    let elapsed = t.elapsed();
    verdict(
        2,
        "identity-projection equivalence",
        worst <= 1e-10 && coarse.states.len() == 6 && elapsed < Duration::from_secs(10),
        format!("max ‖Δp‖∞/‖p‖∞ over 5 steps {worst:.3e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_03_discrete_mass_balance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(ProblemPreset::NeumannWells, &[], dir.path());
    let setup = Setup::new(&cfg).unwrap();
    assert!(setup.disc.dirichlet().is_empty());
    let fine = solve_fine_with(&setup.disc, &cfg.newton).unwrap();
    // (φρ(p),1) integrated cell by cell with the nodal-average density
    let fluid = setup.disc.fluid();
    let grid = setup.mesh.fine;
    let mass = |p: &[f64]| -> f64 {
        (0..grid.num_cells())
            .map(|c| {
                let mean = grid.cell_nodes(c).iter().map(|&n| p[n]).sum::<f64>() / 8.0;
                fluid.phi * fluid.rho_ref * (fluid.c * (mean - fluid.p_ref)).exp() * grid.h.powi(3)
            })
            .sum()
    };
    let m0 = mass(&fine.states[0]);
    let worst = fine
        .states
        .iter()
        .map(|p| (mass(p) - m0).abs() / m0)
        .fold(0.0, f64::max);
    verdict(
        3,
        "discrete mass balance",
        worst <= 1e-8 && fine.states.len() == 21,
        format!("max relative mass change over 20 steps {worst:.3e}"),
    );
}

#[test]
fn criterion_04_partition_of_unity_and_conformity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(ProblemPreset::MixedBc, &[], dir.path());
    let setup = Setup::new(&cfg).unwrap();
    let mesh = &setup.mesh;
    let pou = build_partition_of_unity(mesh);
    let mut sum = vec![0.0; mesh.fine.num_nodes()];
    for id in 0..mesh.num_neighborhoods() {
        for (s, c) in sum.iter_mut().zip(pou.global(mesh, id).unwrap()) {
            *s += c;
        }
    }
    let pou_err = max_abs(sum.iter().map(|s| s - 1.0));

    let space = build_offline_space(
        mesh,
        setup.disc.fluid(),
        &setup.permeability,
        &setup.disc.initial_state().unwrap(),
        setup.disc.is_dirichlet(),
        &OfflineConfig::default(),
    )
    .unwrap();
    let r = &space.projection;
    let n = mesh.fine.num_nodes();
    let mut violations = 0;
    for (col, meta) in r.columns().iter().zip(r.meta()) {
        let nb = &mesh.neighborhoods[meta.neighborhood];
        let mut forbidden = vec![true; n];
        for &l in &nb.interior {
            forbidden[nb.nodes[l]] = false;
        }
        for (i, v) in col.to_dense(n).into_iter().enumerate() {
            if v != 0.0 && (forbidden[i] || setup.disc.is_dirichlet()[i]) {
                violations += 1;
            }
        }
    }
    verdict(
        4,
        "partition of unity and conformity",
        pou_err <= 1e-14 && violations == 0,
        format!("max |Σχ − 1| {pou_err:.3e}, {violations} nonzero entries on ∂ω \\ ∂D or Dirichlet nodes in {} columns", r.dim()),
    );
}

fn mat_max_abs(m: &Mat<f64>) -> f64 {
    let mut w: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            w = w.max(m[(i, j)].abs());
        }
    }
    w
}

#[test]
fn criterion_05_spectral_suite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(ProblemPreset::MixedBc, &[], dir.path());
    let setup = Setup::new(&cfg).unwrap();
    let mesh = &setup.mesh;
    let fluid = setup.disc.fluid();
    let p0 = setup.disc.initial_state().unwrap();
    let rho0 = cell_density(mesh, fluid, &p0).unwrap();
    let pou = build_partition_of_unity(mesh);
    let weights = |kappa: &PermeabilityField| {
        let stiff: Vec<f64> = kappa.values().iter().zip(&rho0).map(|(k, r)| k * r).collect();
        let kt = compute_kappa_tilde(kappa, &rho0, &pou, RhoWeight::Single).unwrap();
        (stiff, kt)
    };
    let (stiff, kt) = weights(&setup.permeability);
    let (stiff_s, kt_s) = weights(&setup.permeability.scaled(37.0).unwrap());
    // central vertex (2,2,2) of the 5×5×5 vertex lattice
    let id = mesh.coarse.vertex_index(2, 2, 2);

    let spec = solve_local_spectral(mesh, build_snapshot_v1(mesh, id).unwrap(), &stiff, &kt).unwrap();
    let ev = &spec.eigenvalues;
    let lam_max = ev.last().copied().unwrap();
    let first = ev[0].abs() / lam_max;
    let v0: Vec<f64> = (0..spec.vectors.nrows()).map(|i| spec.vectors[(i, 0)]).collect();
    let mean = v0.iter().sum::<f64>() / v0.len() as f64;
    let constant = max_abs(v0.iter().map(|v| v / mean - 1.0));
    let ascending = ev.windows(2).all(|w| w[0] <= w[1]);

    let m = local_mass(mesh, id, &kt).unwrap();
    let k = 8;
    let vk = spec.vectors.subcols(0, k).to_owned();
    let mut gram = vk.transpose() * &m * &vk;
    for i in 0..k {
        gram[(i, i)] -= 1.0;
    }
    let ortho = mat_max_abs(&gram);

    let spec_s = solve_local_spectral(mesh, build_snapshot_v1(mesh, id).unwrap(), &stiff_s, &kt_s).unwrap();
    let scaling = (1..k)
        .map(|i| ((spec_s.eigenvalues[i] - ev[i]) / ev[i]).abs())
        .fold(0.0, f64::max);

    let nb = &mesh.neighborhoods[id];
    let v2 = build_snapshot_v2(mesh, id, &stiff).unwrap();
    let a = local_stiffness(mesh, id, &stiff).unwrap();
    let as_ = &a * &v2.basis;
    let mut harmonic: f64 = 0.0;
    for c in 0..v2.dim() {
        for &i in &nb.interior {
            harmonic = harmonic.max(as_[(i, c)].abs());
        }
    }
    harmonic /= mat_max_abs(&a) * mat_max_abs(&v2.basis);
    let row_sum = (0..v2.basis.nrows())
        .map(|i| ((0..v2.dim()).map(|c| v2.basis[(i, c)]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let pass = first <= 1e-10
        && constant <= 1e-8
        && ascending
        && ortho <= 1e-8
        && scaling <= 1e-10
        && harmonic <= 1e-10
        && row_sum <= 1e-12;
    verdict(
        5,
        "spectral suite",
        pass,
        format!(
            "λ₀/λ_max {first:.2e}, constant mode dev {constant:.2e}, ascending {ascending}, M-orthonormality {ortho:.2e}, \
             κ-scaling {scaling:.2e}, V2 harmonic residual {harmonic:.2e}, V2 column sum dev {row_sum:.2e}"
        ),
    );
}

#[test]
fn criterion_06_offline_error_decay() {
    let s = mixed_sweep();
    let e = |l: &str| s.out.row(l).unwrap().e_l2;
    let (e2, e4, e8) = (e("2+0"), e("4+0"), e("8+0"));
    verdict(
        6,
        "offline error decay",
        e2 > e4 && e4 > e8 && e8 <= 0.8 * e4 && s.elapsed < Duration::from_secs(300),
        format!("e_L2 2+0 {e2:.3e}, 4+0 {e4:.3e}, 8+0 {e8:.3e} (ratio 8+0/4+0 {:.3}), sweep {:.1?}", e8 / e4, s.elapsed),
    );
}

#[test]
fn criterion_07_online_beats_offline_under_wells() {
    let s = wells_sweep();
    let off = s.out.row("4+0").unwrap();
    let on = s.out.row("3+1").unwrap();
    verdict(
        7,
        "online beats offline under singular source",
        on.e_l2 < off.e_l2 && on.e_h1 < off.e_h1 && s.elapsed < Duration::from_secs(300),
        format!(
            "3+1 e_L2 {:.3e} e_H1 {:.3e}; 4+0 e_L2 {:.3e} e_H1 {:.3e}; sweep {:.1?}",
            on.e_l2, on.e_h1, off.e_l2, off.e_h1, s.elapsed
        ),
    );
}

#[test]
fn criterion_08_repeated_updates_help() {
    let s = mixed_sweep();
    let once = s.out.row("4+1").unwrap().e_l2;
    let thrice = s.out.row("4+1(3 updates)").unwrap().e_l2;
    verdict(
        8,
        "update benefit",
        thrice < once,
        format!("e_L2 4+1(3 updates) {thrice:.3e} vs 4+1 {once:.3e}"),
    );
}

#[test]
fn criterion_09_newton_robustness() {
    assert_eq!(NewtonConfig::default().tol, 1e-6);
    let mut worst = 0;
    let mut detail = Vec::new();
    for s in [mixed_sweep(), wells_sweep()] {
        for r in &s.out.rows {
            worst = worst.max(r.max_newton());
            detail.push(format!("{} {}", r.label, r.max_newton()));
        }
    }
    verdict(
        9,
        "Newton robustness",
        worst <= 8,
        format!("max iterations per step {worst} ({})", detail.join(", ")),
    );
}

#[test]
fn criterion_10_dof_reduction() {
    let s = mixed_sweep();
    let row = s.out.row("4+0").unwrap();
    let ratio_line = s.summary.lines().find(|l| l.starts_with("4+0,")).unwrap_or("").to_string();
    let t_ratio: f64 = ratio_line.rsplit(',').next().and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
    let bound = row.fine_dofs as f64 / 20.0;
    verdict(
        10,
        "DOF reduction",
        (row.dim as f64) <= bound && t_ratio.is_finite(),
        format!(
            "Dim {} vs fine DOF {} / 20 = {bound:.1}; T_solve coarse/fine {t_ratio:.3}",
            row.dim, row.fine_dofs
        ),
    );
}

fn strip_timings(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [f[0], f[1], f[5], f[6], f[7]].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(ProblemPreset::NeumannWells, &["4+0", "3+1"], &dir.path().join("unused"));
    let mut cfg = cfg;
    cfg.output.vtk_steps = vec![0, 10, 20];
    let cfg_path = dir.path().join("sweep.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).unwrap();
    let run = |out: &Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_gmsfem"))
            .args(["sweep", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    let csv_a = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    let csv_b = std::fs::read_to_string(b.join("sweep.csv")).unwrap();
    let csv_same = strip_timings(&csv_a) == strip_timings(&csv_b);
    let mut files: Vec<_> = std::fs::read_dir(a.join("vtk"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    let vtk_same = files.len() == 9
        && files.iter().all(|f| {
            std::fs::read(a.join("vtk").join(f)).unwrap() == std::fs::read(b.join("vtk").join(f)).unwrap()
        });
    let header_ok = read_vtk(&a.join("vtk").join(&files[0])).map(|v| v.dims == [17, 17, 17]).unwrap_or(false);
    verdict(
        11,
        "determinism",
        csv_same && vtk_same && header_ok,
        format!(
            "CSV (timing columns excluded) identical {csv_same}, {} VTK files identical {vtk_same}",
            files.len()
        ),
    );
}
