//! Fine reference and multiscale runs, sweeps over basis variants.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse::{solve_gmsfem, CoarseSolution};
use crate::error::{Error, Result};
use crate::fem::{solve_fine_with, Discretization, FineSolution, Timings};
use crate::grid::{build_two_scale_mesh, TwoScaleMesh};
use crate::harness::config::{ExperimentConfig, FieldKind, Variant};
use crate::harness::metrics::ErrorNorms;
use crate::harness::report::{
    append_csv, label_slug, write_csv, write_error_series, write_summary, ExperimentReport, StepError,
};
use crate::harness::vtk::export_vtk;
use crate::model::{
    generate_channel_field, load_field_from_file, FieldFormat, PermeabilityField, ProblemSpec, TimeGrid,
};
use crate::offline::{
    build_offline_space, build_partition_of_unity, OfflineConfig, OfflineSpace, ProjectionMatrix,
};
use crate::online::UpdateSchedule;

/// Permeability field described by the configuration.
pub fn build_field(cfg: &ExperimentConfig, mesh: &TwoScaleMesh) -> Result<PermeabilityField> {
    let fine = &mesh.fine;
    match cfg.field.kind {
        FieldKind::Channel => generate_channel_field(fine, &cfg.field.channel, cfg.seed),
        FieldKind::Uniform => PermeabilityField::uniform(fine, cfg.field.value),
        FieldKind::File => {
            let path = cfg
                .field
                .path
                .as_ref()
                .ok_or_else(|| Error::config("field.kind = \"file\" needs field.path"))?;
            let format = cfg.field.format.unwrap_or_else(|| FieldFormat::from_path(path));
            load_field_from_file(path, format, fine)
        }
    }
}

/// Mesh, problem and discretization of one configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub mesh: TwoScaleMesh,
    pub permeability: PermeabilityField,
    pub disc: Discretization,
    pub norms: ErrorNorms,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let m = &cfg.mesh;
        let mesh = build_two_scale_mesh(m.nx, m.ny, m.nz, m.r, m.h)?;
        let permeability = build_field(cfg, &mesh)?;
        let problem = ProblemSpec::from_preset(
            cfg.problem.preset,
            mesh.fine,
            cfg.fluid,
            permeability.clone(),
            TimeGrid::new(cfg.time.dt, cfg.time.steps)?,
            cfg.problem.well_rate,
        );
        let disc = Discretization::new(&problem)?;
        let norms = ErrorNorms::new(&mesh.fine, disc.mobility(), cfg.errors.h1)?;
        Ok(Self {
            mesh,
            permeability,
            disc,
            norms,
        })
    }

    pub fn fine_dofs(&self) -> usize {
        self.mesh.fine.num_nodes()
    }
}

/// Hash of every input that determines the fine reference trajectory.
pub fn reference_key(cfg: &ExperimentConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        mesh: &'a crate::harness::config::MeshConfig,
        field: &'a crate::harness::config::FieldConfig,
        field_seed: Option<u64>,
        problem: &'a crate::harness::config::ProblemConfig,
        fluid: &'a crate::model::FluidProps,
        time: &'a crate::harness::config::TimeConfig,
        newton: &'a crate::fem::NewtonConfig,
    }
    let key = Key {
        mesh: &cfg.mesh,
        field: &cfg.field,
        field_seed: (cfg.field.kind == FieldKind::Channel).then_some(cfg.seed),
        problem: &cfg.problem,
        fluid: &cfg.fluid,
        time: &cfg.time,
        newton: &cfg.newton,
    };
    let json = serde_json::to_string(&key).expect("key serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    if cfg.field.kind == FieldKind::File {
        // the file contents matter, not just its name
        if let Some(bytes) = cfg.field.path.as_ref().and_then(|p| std::fs::read(p).ok()) {
            h.update(&bytes);
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

const REFERENCE_MAGIC: &str = "gmsfem-fine-reference v1";

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceHeader {
    key: String,
    nodes: usize,
    newton_iterations: Vec<usize>,
    t_assembly: f64,
    t_solve: f64,
}

fn save_reference(path: &Path, key: &str, sol: &FineSolution) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let header = ReferenceHeader {
        key: key.to_owned(),
        nodes: sol.states[0].len(),
        newton_iterations: sol.newton_iterations.clone(),
        t_assembly: sol.timings.assembly.as_secs_f64(),
        t_solve: sol.timings.solve.as_secs_f64(),
    };
    let tmp = path.with_extension("tmp");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        writeln!(out, "{REFERENCE_MAGIC}")?;
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for v in sol.states.iter().flatten() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn load_reference(path: &Path, key: &str) -> Result<FineSolution> {
    let invalid = |detail: String| Error::InvalidData {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != REFERENCE_MAGIC {
        return Err(invalid("not a fine reference file".into()));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let header: ReferenceHeader = serde_json::from_str(line.trim_end()).map_err(|e| invalid(e.to_string()))?;
    if header.key != key {
        return Err(invalid("key mismatch".into()));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let expected = header.nodes * (header.newton_iterations.len() + 1) * 8;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: expected / 8,
            actual: bytes.len() / 8,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FineSolution {
        states: values.chunks(header.nodes).map(<[f64]>::to_vec).collect(),
        newton_iterations: header.newton_iterations,
        timings: Timings {
            assembly: Duration::from_secs_f64(header.t_assembly),
            solve: Duration::from_secs_f64(header.t_solve),
            ..Timings::default()
        },
    })
}

fn min_timings(a: &Timings, b: &Timings) -> Timings {
    Timings {
        basis: a.basis.min(b.basis),
        assembly: a.assembly.min(b.assembly),
        projection: a.projection.min(b.projection),
        solve: a.solve.min(b.solve),
    }
}

/// Reuses fine references and offline spaces across the runs of a sweep.
#[derive(Debug, Default)]
pub struct Session {
    references: HashMap<String, Arc<FineSolution>>,
    offline: HashMap<(String, usize), (Arc<OfflineSpace>, Duration)>,
    /// Directory for on-disk fine references.
    pub cache_dir: Option<PathBuf>,
}

impl Session {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        Self {
            cache_dir,
            ..Self::default()
        }
    }

    /// Fine reference for `cfg`, computed at most once per key.
    pub fn reference(&mut self, cfg: &ExperimentConfig, setup: &Setup) -> Result<Arc<FineSolution>> {
        let key = reference_key(cfg);
        if let Some(sol) = self.references.get(&key) {
            return Ok(sol.clone());
        }
        let path = self.cache_dir.as_ref().map(|d| d.join(format!("fine-{}.bin", &key[..16])));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            match load_reference(p, &key) {
                Ok(sol) => {
                    log::info!("fine reference loaded from {}", p.display());
                    let sol = Arc::new(sol);
                    self.references.insert(key, sol.clone());
                    return Ok(sol);
                }
                Err(e) => log::warn!("ignoring fine reference cache {}: {e}", p.display()),
            }
        }
        let mut sol = solve_fine_with(&setup.disc, &cfg.newton)?;
        for _ in 1..cfg.output.repeat {
            let again = solve_fine_with(&setup.disc, &cfg.newton)?;
            sol.timings = min_timings(&sol.timings, &again.timings);
        }
        if let Some(p) = &path {
            save_reference(p, &key, &sol)?;
        }
        let sol = Arc::new(sol);
        self.references.insert(key, sol.clone());
        Ok(sol)
    }

    fn offline_space(&mut self, cfg: &ExperimentConfig, setup: &Setup) -> Result<(Arc<OfflineSpace>, Duration)> {
        let key = (reference_key(cfg) + &format!("{:?}{:?}", cfg.basis.snapshot, cfg.basis.rho_weight), cfg.basis.offline);
        if let Some(hit) = self.offline.get(&key) {
            return Ok(hit.clone());
        }
        let ocfg = OfflineConfig {
            snapshot: cfg.basis.snapshot,
            count: cfg.basis.offline,
            per_neighborhood: None,
            rho_weight: cfg.basis.rho_weight,
        };
        let p0 = setup.disc.initial_state()?;
        let mut best = Duration::MAX;
        let mut space = None;
        for _ in 0..cfg.output.repeat {
            let t = Instant::now();
            let s = build_offline_space(
                &setup.mesh,
                setup.disc.fluid(),
                &setup.permeability,
                &p0,
                setup.disc.is_dirichlet(),
                &ocfg,
            )?;
            best = best.min(t.elapsed());
            space.get_or_insert(s);
        }
        let hit = (Arc::new(space.expect("at least one repetition")), best);
        self.offline.insert(key, hit.clone());
        Ok(hit)
    }
}

/// Offline space whose projection is the fine identity (non-Dirichlet nodes).
pub fn identity_space(setup: &Setup) -> OfflineSpace {
    let n = setup.mesh.num_neighborhoods();
    OfflineSpace {
        pou: build_partition_of_unity(&setup.mesh),
        functions: vec![Vec::new(); n],
        eigenvalues: vec![Vec::new(); n],
        projection: ProjectionMatrix::identity(setup.disc.num_dofs(), setup.disc.is_dirichlet()),
    }
}

/// Label of the basis in `cfg`.
pub fn run_label(cfg: &ExperimentConfig) -> String {
    if cfg.basis.identity {
        return "identity".into();
    }
    Variant {
        offline: cfg.basis.offline,
        online: cfg.online.count,
        update_steps: if cfg.online.count == 0 { Vec::new() } else { cfg.online.update_steps.clone() },
    }
    .label()
}

fn error_series(setup: &Setup, states: &[Vec<f64>], reference: &FineSolution) -> Result<Vec<StepError>> {
    states
        .iter()
        .zip(&reference.states)
        .enumerate()
        .skip(1)
        .map(|(step, (p, r))| {
            Ok(StepError {
                step,
                e_l2: setup.norms.l2(p, r)?,
                e_h1: setup.norms.h1(p, r)?,
            })
        })
        .collect()
}

/// Report row of the fine reference itself.
pub fn reference_report(cfg: &ExperimentConfig, setup: &Setup, reference: &FineSolution) -> ExperimentReport {
    ExperimentReport {
        label: "ref".into(),
        dim: setup.fine_dofs(),
        fine_dofs: setup.fine_dofs(),
        timings: reference.timings,
        e_l2: 0.0,
        e_h1: 0.0,
        newton_per_step: reference.newton_iterations.clone(),
        error_series: if cfg.output.error_all_steps {
            (1..reference.states.len())
                .map(|step| StepError {
                    step,
                    e_l2: 0.0,
                    e_h1: 0.0,
                })
                .collect()
        } else {
            Vec::new()
        },
        failure: None,
    }
}

/// Multiscale result together with its report row.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub report: ExperimentReport,
    pub solution: Option<CoarseSolution>,
}

/// Runs the multiscale solver for the basis in `cfg` against `reference`.
/// Solver failures are recorded in the report instead of returned.
pub fn run_variant(
    session: &mut Session,
    cfg: &ExperimentConfig,
    setup: &Setup,
    reference: &FineSolution,
) -> Result<VariantRun> {
    let label = run_label(cfg);
    let mut report = ExperimentReport {
        label: label.clone(),
        dim: 0,
        fine_dofs: setup.fine_dofs(),
        timings: Timings::default(),
        e_l2: f64::NAN,
        e_h1: f64::NAN,
        newton_per_step: Vec::new(),
        error_series: Vec::new(),
        failure: None,
    };
    let (offline, t_offline) = if cfg.basis.identity {
        (Arc::new(identity_space(setup)), Duration::ZERO)
    } else {
        match session.offline_space(cfg, setup) {
            Ok(hit) => hit,
            Err(e) if e.exit_code() == 3 => {
                report.failure = Some(e.to_string());
                return Ok(VariantRun { report, solution: None });
            }
            Err(e) => return Err(e),
        }
    };
    let schedule: UpdateSchedule = cfg.online.schedule();
    let mut solution: Option<CoarseSolution> = None;
    for _ in 0..cfg.output.repeat {
        match solve_gmsfem(&setup.disc, &setup.mesh, &offline, &schedule, &cfg.newton) {
            Ok(sol) => {
                if let Some(prev) = &mut solution {
                    prev.timings = min_timings(&prev.timings, &sol.timings);
                } else {
                    solution = Some(sol);
                }
            }
            Err(e) if e.exit_code() == 3 => {
                log::error!("{label}: {e}");
                report.failure = Some(e.to_string());
                report.timings.basis = t_offline;
                return Ok(VariantRun { report, solution: None });
            }
            Err(e) => return Err(e),
        }
    }
    let sol = solution.expect("at least one repetition");
    report.dim = sol.dim();
    report.timings = sol.timings;
    report.timings.basis += t_offline;
    report.newton_per_step = sol.newton_iterations.clone();
    report.e_l2 = setup.norms.l2(sol.final_state(), reference.final_state())?;
    report.e_h1 = setup.norms.h1(sol.final_state(), reference.final_state())?;
    if cfg.output.error_all_steps {
        report.error_series = error_series(setup, &sol.states, reference)?;
    }
    Ok(VariantRun {
        report,
        solution: Some(sol),
    })
}

fn write_vtk_steps(cfg: &ExperimentConfig, setup: &Setup, slug: &str, states: &[Vec<f64>]) -> Result<()> {
    for &step in &cfg.output.vtk_steps {
        let path = cfg.output.dir.join("vtk").join(format!("{slug}_step{step:03}.vtk"));
        export_vtk(&setup.mesh.fine, "pressure", &states[step], &path)?;
    }
    Ok(())
}

fn write_variant_outputs(cfg: &ExperimentConfig, setup: &Setup, run: &VariantRun) -> Result<()> {
    let slug = label_slug(&run.report.label);
    if let Some(sol) = &run.solution {
        write_vtk_steps(cfg, setup, &slug, &sol.states)?;
    }
    if cfg.output.error_all_steps && run.report.failure.is_none() {
        write_error_series(&cfg.output.dir.join(format!("errors_{slug}.csv")), &run.report.error_series)?;
    }
    Ok(())
}

fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.join("cache")
}

fn failure_error(report: &ExperimentReport) -> Option<Error> {
    report.failure.as_ref().map(|msg| Error::RunFailed(format!("{}: {msg}", report.label)))
}

/// Fine reference only; writes `reference.csv` and the requested VTK steps.
pub fn run_fine_reference(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let setup = Setup::new(cfg)?;
    let mut session = Session::new(Some(cache_dir(cfg)));
    let reference = session.reference(cfg, &setup)?;
    let report = reference_report(cfg, &setup, &reference);
    write_csv(&cfg.output.dir.join("reference.csv"), std::slice::from_ref(&report))?;
    write_vtk_steps(cfg, &setup, "ref", &reference.states)?;
    Ok(report)
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reference: ExperimentReport,
    pub report: ExperimentReport,
}

/// One multiscale run with the basis in `cfg`; appends the reference and
/// multiscale rows to `results.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let setup = Setup::new(cfg)?;
    let mut session = Session::new(Some(cache_dir(cfg)));
    let reference = session.reference(cfg, &setup)?;
    let reference_row = reference_report(cfg, &setup, &reference);
    let run = run_variant(&mut session, cfg, &setup, &reference)?;
    append_csv(&cfg.output.dir.join("results.csv"), &[reference_row.clone(), run.report.clone()])?;
    write_vtk_steps(cfg, &setup, "ref", &reference.states)?;
    write_variant_outputs(cfg, &setup, &run)?;
    if let Some(e) = failure_error(&run.report) {
        return Err(e);
    }
    Ok(RunOutput {
        reference: reference_row,
        report: run.report,
    })
}

/// Output of [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub reference: ExperimentReport,
    pub rows: Vec<ExperimentReport>,
}

impl SweepOutput {
    pub fn row(&self, label: &str) -> Option<&ExperimentReport> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Every variant of `cfg.sweep` against one fine reference. Writes
/// `sweep.csv` (reference row first) and `sweep_summary.csv`. A failed
/// variant keeps its row with NaN errors; the first failure is returned
/// after all outputs are written.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    let variants = cfg.sweep_variants()?;
    let setup = Setup::new(cfg)?;
    let mut session = Session::new(Some(cache_dir(cfg)));
    let reference = session.reference(cfg, &setup)?;
    let reference_row = reference_report(cfg, &setup, &reference);
    write_vtk_steps(cfg, &setup, "ref", &reference.states)?;

    let mut rows = Vec::new();
    for variant in &variants {
        let vcfg = cfg.with_variant(variant);
        log::info!("running {}", variant.label());
        let run = run_variant(&mut session, &vcfg, &setup, &reference)?;
        write_variant_outputs(&vcfg, &setup, &run)?;
        rows.push(run.report);
    }
    let mut all = vec![reference_row.clone()];
    all.extend(rows.iter().cloned());
    write_csv(&cfg.output.dir.join("sweep.csv"), &all)?;
    write_summary(&cfg.output.dir.join("sweep_summary.csv"), &reference_row, &rows)?;
    if let Some(e) = rows.iter().find_map(failure_error) {
        return Err(e);
    }
    Ok(SweepOutput {
        reference: reference_row,
        rows,
    })
}

/// Writes the configured permeability field to `path`.
pub fn generate_field_file(cfg: &ExperimentConfig, path: &Path, format: FieldFormat) -> Result<PermeabilityField> {
    cfg.validate()?;
    let m = &cfg.mesh;
    let mesh = build_two_scale_mesh(m.nx, m.ny, m.nz, m.r, m.h)?;
    let field = build_field(cfg, &mesh)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    crate::model::save_field_to_file(&field, path, format)?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 3;
        cfg.mesh.nx = 8;
        cfg.mesh.ny = 8;
        cfg.mesh.nz = 8;
        cfg.time.steps = 4;
        cfg.sweep.variants = vec!["2+0".into(), "4+0".into()];
        cfg
    }

    #[test]
    fn reference_key_tracks_relevant_inputs_only() {
        let a = small();
        let mut b = a.clone();
        b.basis.offline = 8;
        b.online.count = 2;
        b.output.dir = "elsewhere".into();
        assert_eq!(reference_key(&a), reference_key(&b));
        let mut c = a.clone();
        c.time.dt = 6.0;
        assert_ne!(reference_key(&a), reference_key(&c));
        let mut d = a.clone();
        d.seed = 4;
        assert_ne!(reference_key(&a), reference_key(&d));
        let mut e = a.clone();
        e.field.kind = FieldKind::Uniform;
        let mut f = e.clone();
        f.seed = 4;
        assert_eq!(reference_key(&e), reference_key(&f));
    }

    #[test]
    fn reference_cache_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let setup = Setup::new(&cfg).unwrap();
        let mut s1 = Session::new(Some(dir.path().to_path_buf()));
        let a = s1.reference(&cfg, &setup).unwrap();
        let again = s1.reference(&cfg, &setup).unwrap();
        assert!(Arc::ptr_eq(&a, &again));
        let mut s2 = Session::new(Some(dir.path().to_path_buf()));
        let b = s2.reference(&cfg, &setup).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.newton_iterations, b.newton_iterations);
    }

    #[test]
    fn identity_projection_reproduces_reference() {
        let mut cfg = small();
        cfg.basis.identity = true;
        let setup = Setup::new(&cfg).unwrap();
        let mut session = Session::new(None);
        let reference = session.reference(&cfg, &setup).unwrap();
        let run = run_variant(&mut session, &cfg, &setup, &reference).unwrap();
        assert_eq!(run.report.label, "identity");
        assert!(run.report.e_l2 <= 1e-10, "{}", run.report.e_l2);
    }

    #[test]
    fn empty_basis_is_rejected_before_compute() {
        let mut cfg = small();
        cfg.basis.offline = 0;
        assert_eq!(Setup::new(&cfg).unwrap_err().exit_code(), 2);
    }
}
