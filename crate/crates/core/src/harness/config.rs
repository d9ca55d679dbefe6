//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::NewtonConfig;
use crate::model::{ChannelFieldSpec, FieldFormat, FluidProps, ProblemPreset, DEFAULT_WELL_RATE};
use crate::offline::{RhoWeight, SnapshotKind};
use crate::online::{UpdateMode, UpdateSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Fine cells per coarse cell edge.
    pub r: usize,
    /// Fine cell edge length.
    pub h: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            nx: 16,
            ny: 16,
            nz: 16,
            r: 4,
            h: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    #[default]
    Channel,
    Uniform,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub kind: FieldKind,
    /// Value of a uniform field.
    pub value: f64,
    /// Input file for `kind = "file"`.
    pub path: Option<PathBuf>,
    /// File format; guessed from the extension when absent.
    pub format: Option<FieldFormat>,
    pub channel: ChannelFieldSpec,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            kind: FieldKind::Channel,
            value: 1e5,
            path: None,
            format: None,
            channel: ChannelFieldSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub preset: ProblemPreset,
    /// Well rate of the five-spot preset.
    pub well_rate: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            preset: ProblemPreset::MixedBc,
            well_rate: DEFAULT_WELL_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub dt: f64,
    pub steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { dt: 7.0, steps: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub snapshot: SnapshotKind,
    /// Offline functions per neighborhood.
    pub offline: usize,
    pub rho_weight: RhoWeight,
    /// Use the fine identity as projection (debugging aid).
    pub identity: bool,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            snapshot: SnapshotKind::V1,
            offline: 4,
            rho_weight: RhoWeight::Single,
            identity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    /// Online functions per neighborhood and update.
    pub count: usize,
    /// 1-based update steps.
    pub update_steps: Vec<usize>,
    pub mode: UpdateMode,
    pub top_k: Option<usize>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            count: 0,
            update_steps: vec![1],
            mode: UpdateMode::Replace,
            top_k: None,
        }
    }
}

impl OnlineConfig {
    pub fn schedule(&self) -> UpdateSchedule {
        UpdateSchedule {
            count: self.count,
            steps: self.update_steps.clone(),
            mode: self.mode,
            top_k: self.top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Time steps written as VTK (0 is the initial state).
    pub vtk_steps: Vec<usize>,
    /// Also report errors at every time step.
    pub error_all_steps: bool,
    /// Repetitions per run; the minimum wall-clock is reported.
    pub repeat: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            vtk_steps: Vec::new(),
            error_all_steps: false,
            repeat: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum H1Norm {
    /// `‖(κ/μ)^{1/2} ∇e‖`.
    #[default]
    Weighted,
    /// `(‖∇e‖² + ‖e‖²)^{1/2}`.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorsConfig {
    pub h1: H1Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Basis variants, see [`Variant`].
    pub variants: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variants: ["2+0", "4+0", "8+0", "3+1", "4+1", "4+1@1,7,14"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mesh: MeshConfig,
    pub field: FieldConfig,
    pub problem: ProblemConfig,
    pub fluid: FluidProps,
    pub time: TimeConfig,
    pub basis: BasisConfig,
    pub online: OnlineConfig,
    pub newton: NewtonConfig,
    pub output: OutputConfig,
    pub errors: ErrorsConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        if m.nx == 0 || m.ny == 0 || m.nz == 0 || m.r == 0 {
            return Err(Error::config("mesh sizes must be positive"));
        }
        for (axis, n) in [("nx", m.nx), ("ny", m.ny), ("nz", m.nz)] {
            if n % m.r != 0 {
                return Err(Error::config(format!("mesh.{axis} = {n} is not divisible by mesh.r = {}", m.r)));
            }
        }
        if !(m.h > 0.0 && m.h.is_finite()) {
            return Err(Error::config(format!("mesh.h must be positive, got {}", m.h)));
        }
        match self.field.kind {
            FieldKind::Uniform if !(self.field.value > 0.0 && self.field.value.is_finite()) => {
                return Err(Error::config(format!("field.value must be positive, got {}", self.field.value)));
            }
            FieldKind::File if self.field.path.is_none() => {
                return Err(Error::config("field.kind = \"file\" needs field.path"));
            }
            FieldKind::Channel => {
                let c = &self.field.channel;
                if !(c.background > 0.0 && c.channel > 0.0) {
                    return Err(Error::config("channel field values must be positive"));
                }
            }
            _ => {}
        }
        if !self.problem.well_rate.is_finite() {
            return Err(Error::config("problem.well_rate must be finite"));
        }
        self.fluid.validate()?;
        if !(self.time.dt > 0.0 && self.time.dt.is_finite()) || self.time.steps == 0 {
            return Err(Error::config("time.dt must be positive and time.steps at least 1"));
        }
        self.newton.validate()?;
        if self.basis.identity {
            if self.online.count > 0 {
                return Err(Error::config("the identity projection takes no online functions"));
            }
        } else {
            check_counts(self.basis.offline, self.online.count)?;
        }
        self.online.schedule().validate(self.time.steps)?;
        if let Some(&s) = self.output.vtk_steps.iter().find(|&&s| s > self.time.steps) {
            return Err(Error::config(format!(
                "output.vtk_steps entry {s} exceeds time.steps = {}",
                self.time.steps
            )));
        }
        if self.output.repeat == 0 {
            return Err(Error::config("output.repeat must be at least 1"));
        }
        Ok(())
    }

    /// Parsed `sweep.variants`, each validated against the time grid.
    pub fn sweep_variants(&self) -> Result<Vec<Variant>> {
        if self.sweep.variants.is_empty() {
            return Err(Error::config("sweep.variants is empty"));
        }
        self.sweep
            .variants
            .iter()
            .map(|v| {
                let parsed = Variant::parse(v, self.time.steps)?;
                self.with_variant(&parsed).validate()?;
                Ok(parsed)
            })
            .collect()
    }

    /// The same configuration with one basis variant applied.
    pub fn with_variant(&self, v: &Variant) -> Self {
        let mut out = self.clone();
        out.basis.offline = v.offline;
        out.online.count = v.online;
        out.online.update_steps = v.update_steps.clone();
        out
    }
}

fn check_counts(offline: usize, online: usize) -> Result<()> {
    if offline + online == 0 {
        return Err(Error::config("basis variant 0+0 has an empty coarse space"));
    }
    Ok(())
}

/// One row of a sweep: `L+M`, optionally with update steps.
///
/// * `4+0`: offline only
/// * `3+1`: one online function per neighborhood, computed at step 1
/// * `4+1@1,7,14`: online functions recomputed at steps 1, 7 and 14
/// * `4+1x3`: three updates spread evenly over the run
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub offline: usize,
    pub online: usize,
    pub update_steps: Vec<usize>,
}

impl Variant {
    pub fn parse(text: &str, total_steps: usize) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse basis variant '{text}'"));
        let text = text.trim();
        let (counts, updates) = match text.split_once('@') {
            Some((c, u)) => (c, Some(Updates::Steps(u))),
            None => match text.split_once('x') {
                Some((c, k)) => (c, Some(Updates::Count(k))),
                None => (text, None),
            },
        };
        let (l, m) = counts.split_once('+').ok_or_else(bad)?;
        let offline: usize = l.trim().parse().map_err(|_| bad())?;
        let online: usize = m.trim().parse().map_err(|_| bad())?;
        check_counts(offline, online)?;
        let update_steps = match updates {
            None => vec![1],
            Some(Updates::Steps(u)) => parse_steps(u)?,
            Some(Updates::Count(k)) => {
                let k: usize = k.trim().parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                UpdateSchedule::evenly_spaced(k, total_steps)
            }
        };
        if online == 0 && updates.is_some() {
            return Err(Error::config(format!("basis variant '{text}' lists updates but no online functions")));
        }
        let v = Self {
            offline,
            online,
            update_steps: if online == 0 { Vec::new() } else { update_steps },
        };
        UpdateSchedule::new(v.online, v.update_steps.clone()).validate(total_steps)?;
        Ok(v)
    }

    /// Row label: `x+y`, or `x+y(k updates)` for more than one update.
    pub fn label(&self) -> String {
        let base = format!("{}+{}", self.offline, self.online);
        if self.online > 0 && self.update_steps.len() > 1 {
            format!("{base}({} updates)", self.update_steps.len())
        } else {
            base
        }
    }
}

enum Updates<'a> {
    Steps(&'a str),
    Count(&'a str),
}

/// Parses `1,7,14`.
pub fn parse_steps(text: &str) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("cannot parse step list '{text}'")))
        })
        .collect::<Result<_>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn dotted_keys_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 7\nmesh.nx = 8\nmesh.ny = 8\nmesh.nz = 8\n[problem]\npreset = \"neumann-wells\"\n[online]\ncount = 1\nupdate_steps = [1, 7]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mesh.nx, 8);
        assert_eq!(cfg.problem.preset, ProblemPreset::NeumannWells);
        assert_eq!(cfg.online.update_steps, vec![1, 7]);
        cfg.validate().unwrap();

        for bad in ["mesh.nq = 3", "[basis]\nsnapshot = \"v3\"", "typo = 1", "[fluid]\nmuu = 1.0"] {
            let e = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn validation_rejects_bad_setups() {
        let mut cfg = ExperimentConfig::default();
        cfg.mesh.nx = 10;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.basis.offline = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.online.count = 1;
        cfg.online.update_steps = vec![21];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.output.vtk_steps = vec![30];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.time.steps = 5;
        cfg.validate().unwrap();
        assert!(cfg.sweep_variants().is_err());
        cfg.sweep.variants = vec!["4+0".into(), "3+1@1,5".into()];
        assert_eq!(cfg.sweep_variants().unwrap().len(), 2);
    }

    #[test]
    fn variants() {
        let v = Variant::parse("4+0", 20).unwrap();
        assert_eq!((v.offline, v.online, v.update_steps.clone()), (4, 0, vec![]));
        assert_eq!(v.label(), "4+0");

        let v = Variant::parse("3+1", 20).unwrap();
        assert_eq!(v.update_steps, vec![1]);
        assert_eq!(v.label(), "3+1");

        let v = Variant::parse("4+1@1,7,14", 20).unwrap();
        assert_eq!(v.update_steps, vec![1, 7, 14]);
        assert_eq!(v.label(), "4+1(3 updates)");

        let v = Variant::parse("4+1x3", 20).unwrap();
        assert_eq!(v.update_steps, vec![1, 7, 14]);

        for bad in ["0+0", "4", "a+1", "4+0@1", "4+1@0", "4+1@21", "4+1x0"] {
            assert!(Variant::parse(bad, 20).is_err(), "{bad}");
        }
    }
}
