use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gmsfem::harness::check::run_checks;
use gmsfem::harness::config::{parse_steps, ExperimentConfig, H1Norm};
use gmsfem::harness::experiment::generate_field_file;
use gmsfem::harness::{run_experiment, run_fine_reference, run_sweep, ExperimentReport, CSV_HEADER};
use gmsfem::model::FieldFormat;
use gmsfem::offline::SnapshotKind;
use gmsfem::{Error, Result};

#[derive(Parser)]
#[command(name = "gmsfem", version, about = "Multiscale solver for compressible single-phase flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fine reference plus one multiscale run; appends to results.csv.
    Run(Common),
    /// Fine reference plus every variant in sweep.variants; writes sweep.csv.
    Sweep(Common),
    /// Writes the configured permeability field.
    GenField {
        #[command(flatten)]
        common: Common,
        /// Output file name inside the output directory.
        #[arg(long, default_value = "field.bin")]
        file: PathBuf,
        /// binary or text; guessed from the extension by default.
        #[arg(long)]
        format: Option<String>,
    },
    /// Fine reference only; writes reference.csv.
    FineRef(Common),
    /// Invariant checks on the configured problem.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Snapshot space: v1 or v2.
    #[arg(long)]
    snapshot: Option<SnapshotKind>,
    /// Offline functions per neighborhood.
    #[arg(long)]
    offline: Option<usize>,
    /// Online functions per neighborhood and update.
    #[arg(long)]
    online: Option<usize>,
    /// Online update steps, e.g. 1,7,14.
    #[arg(long)]
    updates: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Time steps to export as VTK, e.g. 0,20.
    #[arg(long)]
    vtk: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report errors at every time step.
    #[arg(long)]
    error_all_steps: bool,
    /// Unweighted H1 norm instead of the κ/μ-weighted seminorm.
    #[arg(long)]
    plain_h1: bool,
    /// Repeat each run and report the minimum wall-clock.
    #[arg(long)]
    repeat: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.snapshot {
            cfg.basis.snapshot = s;
        }
        if let Some(n) = self.offline {
            cfg.basis.offline = n;
        }
        if let Some(n) = self.online {
            cfg.online.count = n;
        }
        if let Some(s) = &self.updates {
            cfg.online.update_steps = parse_steps(s)?;
        }
        if let Some(d) = &self.out {
            cfg.output.dir = d.clone();
        }
        if let Some(s) = &self.vtk {
            cfg.output.vtk_steps = parse_steps(s)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.error_all_steps {
            cfg.output.error_all_steps = true;
        }
        if self.plain_h1 {
            cfg.errors.h1 = H1Norm::Plain;
        }
        if let Some(k) = self.repeat {
            cfg.output.repeat = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_rows(rows: &[&ExperimentReport]) {
    println!("{CSV_HEADER}");
    for r in rows {
        println!("{}", r.csv_row());
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(c) => {
            let out = run_experiment(&c.config()?)?;
            print_rows(&[&out.reference, &out.report]);
        }
        Command::Sweep(c) => {
            let out = run_sweep(&c.config()?)?;
            let mut rows = vec![&out.reference];
            rows.extend(out.rows.iter());
            print_rows(&rows);
        }
        Command::GenField { common, file, format } => {
            let cfg = common.config()?;
            let path = cfg.output.dir.join(file);
            let format = match format.as_deref() {
                None => FieldFormat::from_path(&path),
                Some("binary") => FieldFormat::Binary,
                Some("text") => FieldFormat::Text,
                Some(other) => return Err(Error::Config(format!("unknown field format '{other}'"))),
            };
            let field = generate_field_file(&cfg, &path, format)?;
            println!(
                "wrote {} ({} cells, min {:e}, max {:e})",
                path.display(),
                field.len(),
                field.min(),
                field.max()
            );
        }
        Command::FineRef(c) => {
            let report = run_fine_reference(&c.config()?)?;
            print_rows(&[&report]);
        }
        Command::Check(c) => {
            let outcomes = run_checks(&c.config()?)?;
            let mut failed = 0;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                failed += usize::from(!o.passed);
            }
            if failed > 0 {
                return Err(Error::RunFailed(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
