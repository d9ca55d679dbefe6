//! Physical problem description: fluid law, permeability, boundary data,
//! wells and time grid.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FineGrid;

/// Largest admissible `|c (p − p_ref)|` before `exp` is considered out of range.
pub const MAX_DENSITY_EXPONENT: f64 = 700.0;

/// Fluid constants. Values are used in the units they are given in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidProps {
    pub mu: f64,
    pub phi: f64,
    pub c: f64,
    pub rho_ref: f64,
    pub p_ref: f64,
}

impl Default for FluidProps {
    /// μ = 5, φ = 500, c = 1e-8, ρ_ref = 850, p_ref = 2.0e7.
    fn default() -> Self {
        Self {
            mu: 5.0,
            phi: 500.0,
            c: 1.0e-8,
            rho_ref: 850.0,
            p_ref: 2.0e7,
        }
    }
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("phi", self.phi), ("c", self.c), ("rho_ref", self.rho_ref)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("fluid.{name} must be positive, got {v}")));
            }
        }
        if !self.p_ref.is_finite() {
            return Err(Error::config("fluid.p_ref must be finite"));
        }
        Ok(())
    }

    /// `ρ(p) = ρ_ref exp(c (p − p_ref))`.
    pub fn density(&self, p: f64) -> Result<f64> {
        let x = self.c * (p - self.p_ref);
        if !(x.abs() <= MAX_DENSITY_EXPONENT) {
            return Err(Error::NumericRange(format!(
                "density exponent c(p - p_ref) = {x:e} at p = {p:e}"
            )));
        }
        Ok(self.rho_ref * x.exp())
    }

    /// `dρ/dp = c ρ(p)`.
    pub fn density_derivative(&self, p: f64) -> Result<f64> {
        Ok(self.c * self.density(p)?)
    }

    /// Pressure with `ρ(p) = rho`.
    pub fn pressure_for_density(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(Error::NumericRange(format!("density must be positive, got {rho}")));
        }
        Ok(self.p_ref + (rho / self.rho_ref).ln() / self.c)
    }
}

pub fn density(p: f64, props: &FluidProps) -> Result<f64> {
    props.density(p)
}

pub fn density_derivative(p: f64, props: &FluidProps) -> Result<f64> {
    props.density_derivative(p)
}

/// Cell-wise permeability, lexicographic cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilityField {
    values: Vec<f64>,
}

impl PermeabilityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((cell, &v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::config(format!("permeability must be positive; cell {cell} has {v}")));
        }
        Ok(Self { values })
    }

    pub fn uniform(fine: &FineGrid, value: f64) -> Result<Self> {
        Self::new(vec![value; fine.num_cells()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * s).collect())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Stable content hash (hex sha-256 of the little-endian bytes).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parameters of the synthetic channel-and-inclusion generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelFieldSpec {
    pub background: f64,
    pub channel: f64,
    pub n_channels: usize,
    pub n_inclusions: usize,
    /// Channel cross-section edge, in fine cells.
    pub channel_width: usize,
    /// Inclusion box edge, in fine cells.
    pub inclusion_size: usize,
}

impl Default for ChannelFieldSpec {
    fn default() -> Self {
        Self {
            background: 1e5,
            channel: 1e9,
            n_channels: 6,
            n_inclusions: 12,
            channel_width: 1,
            inclusion_size: 2,
        }
    }
}

/// Background value everywhere except long axis-aligned channels (running the
/// full length of the domain along x or y) and small box inclusions, which take
/// the channel value. Deterministic in `seed`.
pub fn generate_channel_field(fine: &FineGrid, spec: &ChannelFieldSpec, seed: u64) -> Result<PermeabilityField> {
    if !(spec.background > 0.0 && spec.channel > 0.0) {
        return Err(Error::config("channel and background permeability must be positive"));
    }
    let dims = fine.cell_dims();
    if spec.n_channels > 0 && (spec.channel_width == 0 || spec.channel_width > dims.iter().copied().min().unwrap()) {
        return Err(Error::config(format!(
            "channel width {} does not fit in a {}x{}x{} grid",
            spec.channel_width, dims[0], dims[1], dims[2]
        )));
    }
    if spec.n_inclusions > 0
        && (spec.inclusion_size == 0 || spec.inclusion_size > dims.iter().copied().min().unwrap())
    {
        return Err(Error::config(format!(
            "inclusion size {} does not fit in a {}x{}x{} grid",
            spec.inclusion_size, dims[0], dims[1], dims[2]
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![spec.background; fine.num_cells()];
    let w = spec.channel_width;
    for _ in 0..spec.n_channels {
        let along = rng.random_range(0..2usize);
        let across = 1 - along;
        let a0 = rng.random_range(0..=dims[across] - w);
        let z0 = rng.random_range(0..=dims[2] - w);
        for k in z0..z0 + w {
            for t in a0..a0 + w {
                for s in 0..dims[along] {
                    let (i, j) = if along == 0 { (s, t) } else { (t, s) };
                    values[fine.cell_index(i, j, k)] = spec.channel;
                }
            }
        }
    }
    let b = spec.inclusion_size;
    for _ in 0..spec.n_inclusions {
        let i0 = rng.random_range(0..=dims[0] - b);
        let j0 = rng.random_range(0..=dims[1] - b);
        let k0 = rng.random_range(0..=dims[2] - b);
        for k in k0..k0 + b {
            for j in j0..j0 + b {
                for i in i0..i0 + b {
                    values[fine.cell_index(i, j, k)] = spec.channel;
                }
            }
        }
    }
    PermeabilityField::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    /// Raw little-endian f64, no header.
    Binary,
    /// One value per line.
    Text,
}

impl FieldFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("dat") | Some("csv") => FieldFormat::Text,
            _ => FieldFormat::Binary,
        }
    }
}

pub fn load_field_from_file(path: &Path, format: FieldFormat, fine: &FineGrid) -> Result<PermeabilityField> {
    let expected = fine.num_cells();
    let values: Vec<f64> = match format {
        FieldFormat::Binary => {
            let bytes = fs::read(path)?;
            if bytes.len() % 8 != 0 {
                return Err(Error::InvalidData {
                    path: path.to_owned(),
                    detail: format!("{} bytes is not a whole number of f64 values", bytes.len()),
                });
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        FieldFormat::Text => {
            let text = fs::read_to_string(path)?;
            let mut out = Vec::with_capacity(expected);
            for (line_no, line) in text.lines().enumerate() {
                let t = line.trim();
                if t.is_empty() || t.starts_with('#') {
                    continue;
                }
                out.push(t.parse::<f64>().map_err(|e| Error::InvalidData {
                    path: path.to_owned(),
                    detail: format!("line {}: {e}", line_no + 1),
                })?);
            }
            out
        }
    };
    if values.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_owned(),
            expected,
            actual: values.len(),
        });
    }
    if let Some((cell, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidData {
            path: path.to_owned(),
            detail: format!("non-positive permeability {v} at cell {cell}"),
        });
    }
    PermeabilityField::new(values)
}

pub fn save_field_to_file(field: &PermeabilityField, path: &Path, format: FieldFormat) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        FieldFormat::Binary => {
            for v in field.values() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        FieldFormat::Text => {
            for v in field.values() {
                writeln!(file, "{v:e}")?;
            }
        }
    }
    file.flush()?;
    Ok(())
}

/// Faces of the box domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::XMin, Face::XMax, Face::YMin, Face::YMax, Face::ZMin, Face::ZMax];

    fn contains(self, fine: &FineGrid, [i, j, k]: [usize; 3]) -> bool {
        match self {
            Face::XMin => i == 0,
            Face::XMax => i == fine.nx,
            Face::YMin => j == 0,
            Face::YMax => j == fine.ny,
            Face::ZMin => k == 0,
            Face::ZMax => k == fine.nz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FaceCondition {
    /// Zero flux.
    Neumann,
    /// Fixed pressure.
    Dirichlet(f64),
}

/// One condition per domain face, in [`Face::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub faces: [FaceCondition; 6],
}

impl BoundarySpec {
    pub fn all_neumann() -> Self {
        Self {
            faces: [FaceCondition::Neumann; 6],
        }
    }

    pub fn set(&mut self, face: Face, cond: FaceCondition) {
        let idx = Face::ALL.iter().position(|f| *f == face).unwrap();
        self.faces[idx] = cond;
    }

    /// Dirichlet nodes with their values, ascending node id. A node on two
    /// Dirichlet faces takes the value of the first face in [`Face::ALL`].
    pub fn dirichlet_nodes(&self, fine: &FineGrid) -> Vec<(usize, f64)> {
        if self.faces.iter().all(|f| matches!(f, FaceCondition::Neumann)) {
            return Vec::new();
        }
        let mut out = Vec::new();
        for n in 0..fine.num_nodes() {
            let ijk = fine.node_ijk(n);
            for (face, cond) in Face::ALL.iter().zip(&self.faces) {
                if let FaceCondition::Dirichlet(v) = cond {
                    if face.contains(fine, ijk) {
                        out.push((n, *v));
                        break;
                    }
                }
            }
        }
        out
    }
}

/// Box of fine cells `[lo, hi)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CellBox {
    /// Full-height column of cells at `(i, j)`.
    pub fn column(fine: &FineGrid, i: usize, j: usize) -> Self {
        Self {
            lo: [i, j, 0],
            hi: [i + 1, j + 1, fine.nz],
        }
    }

    pub fn num_cells(&self) -> usize {
        (0..3).map(|a| self.hi[a].saturating_sub(self.lo[a])).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceRegion {
    pub cells: CellBox,
    /// Rate per unit volume, constant on the region.
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub regions: Vec<SourceRegion>,
}

impl SourceSpec {
    pub fn none() -> Self {
        Self::default()
    }

    /// `+rate` on the four corner columns and `−4·rate` on the central column.
    pub fn five_spot(fine: &FineGrid, rate: f64) -> Self {
        let corners = [(0, 0), (fine.nx - 1, 0), (0, fine.ny - 1), (fine.nx - 1, fine.ny - 1)];
        let mut regions: Vec<SourceRegion> = corners
            .iter()
            .map(|&(i, j)| SourceRegion {
                cells: CellBox::column(fine, i, j),
                rate,
            })
            .collect();
        regions.push(SourceRegion {
            cells: CellBox::column(fine, fine.nx / 2, fine.ny / 2),
            rate: -4.0 * rate,
        });
        Self { regions }
    }

    pub fn validate(&self, fine: &FineGrid) -> Result<()> {
        let dims = fine.cell_dims();
        for (n, reg) in self.regions.iter().enumerate() {
            for a in 0..3 {
                if reg.cells.lo[a] >= reg.cells.hi[a] || reg.cells.hi[a] > dims[a] {
                    return Err(Error::config(format!(
                        "source region {n} {:?}..{:?} lies outside the {}x{}x{} cell grid",
                        reg.cells.lo, reg.cells.hi, dims[0], dims[1], dims[2]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cell-wise source density.
    pub fn cell_rates(&self, fine: &FineGrid) -> Vec<f64> {
        let mut q = vec![0.0; fine.num_cells()];
        for reg in &self.regions {
            for k in reg.cells.lo[2]..reg.cells.hi[2] {
                for j in reg.cells.lo[1]..reg.cells.hi[1] {
                    for i in reg.cells.lo[0]..reg.cells.hi[0] {
                        q[fine.cell_index(i, j, k)] += reg.rate;
                    }
                }
            }
        }
        q
    }
}

/// Load vector `(q, φ_j)` for cell-wise constant `q`: every node of a cell
/// receives `q h³ / 8`.
pub fn build_source_vector(fine: &FineGrid, sources: &SourceSpec) -> Vec<f64> {
    let q = sources.cell_rates(fine);
    let share = fine.h.powi(3) / 8.0;
    let mut load = vec![0.0; fine.num_nodes()];
    for (c, &qc) in q.iter().enumerate() {
        if qc != 0.0 {
            for n in fine.cell_nodes(c) {
                load[n] += qc * share;
            }
        }
    }
    load
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { dt, steps })
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    /// Linear in x between the values on the first and last yz-planes.
    LinearX { first: f64, last: f64 },
    Nodal(Vec<f64>),
}

impl InitialCondition {
    pub fn nodal(&self, fine: &FineGrid) -> Result<Vec<f64>> {
        match self {
            InitialCondition::Constant(v) => Ok(vec![*v; fine.num_nodes()]),
            InitialCondition::LinearX { first, last } => Ok((0..fine.num_nodes())
                .map(|n| {
                    let t = fine.node_ijk(n)[0] as f64 / fine.nx as f64;
                    first + (last - first) * t
                })
                .collect()),
            InitialCondition::Nodal(v) => {
                if v.len() != fine.num_nodes() {
                    return Err(Error::Dimension {
                        context: "initial pressure",
                        expected: fine.num_nodes(),
                        actual: v.len(),
                    });
                }
                Ok(v.clone())
            }
        }
    }
}

/// High pressure of the mixed-boundary preset (first yz-plane), also the
/// initial pressure of the all-Neumann preset.
pub const P_HIGH: f64 = 2.16e7;
/// Low pressure of the mixed-boundary preset (last yz-plane).
pub const P_LOW: f64 = 2.00e7;
/// Default well rate per unit volume for the five-spot preset.
pub const DEFAULT_WELL_RATE: f64 = 1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemPreset {
    #[serde(rename = "mixed-bc")]
    MixedBc,
    #[serde(rename = "neumann-wells")]
    NeumannWells,
}

impl std::str::FromStr for ProblemPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed-bc" => Ok(ProblemPreset::MixedBc),
            "neumann-wells" => Ok(ProblemPreset::NeumannWells),
            other => Err(Error::config(format!(
                "unknown problem preset '{other}' (expected mixed-bc or neumann-wells)"
            ))),
        }
    }
}

/// Everything needed to march the pressure equation on the fine grid.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub fine: FineGrid,
    pub fluid: FluidProps,
    pub permeability: PermeabilityField,
    pub boundary: BoundarySpec,
    pub sources: SourceSpec,
    pub time: TimeGrid,
    pub initial: InitialCondition,
}

impl ProblemSpec {
    /// Pressure 2.16e7 on the first yz-plane, 2.00e7 on the last, zero flux
    /// elsewhere, no sources, linear initial profile.
    pub fn mixed_bc(fine: FineGrid, fluid: FluidProps, permeability: PermeabilityField, time: TimeGrid) -> Self {
        let mut boundary = BoundarySpec::all_neumann();
        boundary.set(Face::XMin, FaceCondition::Dirichlet(P_HIGH));
        boundary.set(Face::XMax, FaceCondition::Dirichlet(P_LOW));
        Self {
            fine,
            fluid,
            permeability,
            boundary,
            sources: SourceSpec::none(),
            time,
            initial: InitialCondition::LinearX {
                first: P_HIGH,
                last: P_LOW,
            },
        }
    }

    /// Zero flux everywhere, five-spot wells, constant initial pressure 2.16e7.
    pub fn neumann_wells(
        fine: FineGrid,
        fluid: FluidProps,
        permeability: PermeabilityField,
        time: TimeGrid,
        well_rate: f64,
    ) -> Self {
        Self {
            sources: SourceSpec::five_spot(&fine, well_rate),
            fine,
            fluid,
            permeability,
            boundary: BoundarySpec::all_neumann(),
            time,
            initial: InitialCondition::Constant(P_HIGH),
        }
    }

    pub fn from_preset(
        preset: ProblemPreset,
        fine: FineGrid,
        fluid: FluidProps,
        permeability: PermeabilityField,
        time: TimeGrid,
        well_rate: f64,
    ) -> Self {
        match preset {
            ProblemPreset::MixedBc => Self::mixed_bc(fine, fluid, permeability, time),
            ProblemPreset::NeumannWells => Self::neumann_wells(fine, fluid, permeability, time, well_rate),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fluid.validate()?;
        if self.permeability.len() != self.fine.num_cells() {
            return Err(Error::Dimension {
                context: "permeability field",
                expected: self.fine.num_cells(),
                actual: self.permeability.len(),
            });
        }
        self.sources.validate(&self.fine)?;
        TimeGrid::new(self.time.dt, self.time.steps)?;
        self.initial.nodal(&self.fine)?;
        Ok(())
    }

    /// Initial pressure with Dirichlet values imposed.
    pub fn initial_pressure(&self) -> Result<Vec<f64>> {
        let mut p = self.initial.nodal(&self.fine)?;
        for (n, v) in self.boundary.dirichlet_nodes(&self.fine) {
            p[n] = v;
        }
        Ok(p)
    }

    pub fn load_vector(&self) -> Vec<f64> {
        build_source_vector(&self.fine, &self.sources)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn density_identities() {
        let f = FluidProps::default();
        assert_eq!(f.density(f.p_ref).unwrap(), f.rho_ref);
        let p2 = f.p_ref + std::f64::consts::LN_2 / f.c;
        assert!((f.density(p2).unwrap() / (2.0 * f.rho_ref) - 1.0).abs() < 1e-13);
        // 850 exp(1e-8 · 1.6e6)
        let expected = 850.0 * 0.016f64.exp();
        assert!((f.density(2.16e7).unwrap() - expected).abs() < 1e-10 * expected);
        assert!(matches!(f.density(f.p_ref + 1e11), Err(Error::NumericRange(_))));
    }

    #[test]
    fn density_derivative_matches_central_difference() {
        let f = FluidProps::default();
        assert_eq!(f.density_derivative(f.p_ref).unwrap(), f.c * f.rho_ref);
        for p in [1.9e7, 2.0e7, 2.16e7, 2.5e7] {
            let d = 1e3;
            let fd = (f.density(p + d).unwrap() - f.density(p - d).unwrap()) / (2.0 * d);
            let an = f.density_derivative(p).unwrap();
            // truncation error ρ''' δ²/6 = c³ ρ δ²/6 ~ 1e-22 relative to c ρ
            assert!((fd - an).abs() <= 1e-7 * an, "p={p}: {fd} vs {an}");
        }
        assert!(f.density_derivative(1.9e7).unwrap() < f.density_derivative(2.1e7).unwrap());
    }

    proptest! {
        #[test]
        fn density_inverse_roundtrip(p in 1.0e7f64..3.0e7) {
            let f = FluidProps::default();
            let rho = f.density(p).unwrap();
            let back = f.density(f.pressure_for_density(rho).unwrap()).unwrap();
            prop_assert!((back - rho).abs() <= 1e-12 * rho);
        }
    }

    #[test]
    fn channel_field_properties() {
        let fine = FineGrid::new(16, 16, 16, 20.0).unwrap();
        let empty = ChannelFieldSpec {
            n_channels: 0,
            n_inclusions: 0,
            ..Default::default()
        };
        let u = generate_channel_field(&fine, &empty, 1).unwrap();
        assert!(u.values().iter().all(|&v| v == 1e5));

        let spec = ChannelFieldSpec::default();
        let a = generate_channel_field(&fine, &spec, 42).unwrap();
        let b = generate_channel_field(&fine, &spec, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max() / a.min(), 1e4);
        let c = generate_channel_field(&fine, &spec, 43).unwrap();
        assert_ne!(a, c);

        let too_wide = ChannelFieldSpec {
            channel_width: 17,
            ..Default::default()
        };
        assert!(generate_channel_field(&fine, &too_wide, 1).is_err());
    }

    #[test]
    fn field_files_roundtrip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let fine = FineGrid::new(4, 3, 2, 1.0).unwrap();
        let field = generate_channel_field(
            &fine,
            &ChannelFieldSpec {
                n_channels: 1,
                n_inclusions: 1,
                inclusion_size: 1,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        for fmt in [FieldFormat::Binary, FieldFormat::Text] {
            let path = dir.path().join(format!("k_{fmt:?}"));
            save_field_to_file(&field, &path, fmt).unwrap();
            assert_eq!(load_field_from_file(&path, fmt, &fine).unwrap(), field);
        }

        let ones = dir.path().join("ones.txt");
        fs::write(&ones, "1\n".repeat(24)).unwrap();
        let u = load_field_from_file(&ones, FieldFormat::Text, &fine).unwrap();
        assert!(u.values().iter().all(|&v| v == 1.0));

        fs::write(&ones, "1\n".repeat(23)).unwrap();
        match load_field_from_file(&ones, FieldFormat::Text, &fine) {
            Err(Error::SizeMismatch { expected, actual, .. }) => assert_eq!((expected, actual), (24, 23)),
            other => panic!("expected size mismatch, got {other:?}"),
        }
        fs::write(&ones, "1\n".repeat(23) + "-2\n").unwrap();
        assert!(matches!(
            load_field_from_file(&ones, FieldFormat::Text, &fine),
            Err(Error::InvalidData { .. })
        ));
        assert!(matches!(
            load_field_from_file(&dir.path().join("missing"), FieldFormat::Binary, &fine),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn source_vectors() {
        let fine = FineGrid::new(4, 4, 4, 1.0).unwrap();
        assert!(build_source_vector(&fine, &SourceSpec::none()).iter().all(|&v| v == 0.0));

        let one = SourceSpec {
            regions: vec![SourceRegion {
                cells: CellBox {
                    lo: [1, 1, 1],
                    hi: [2, 2, 2],
                },
                rate: 1.0,
            }],
        };
        let load = build_source_vector(&fine, &one);
        let c = fine.cell_index(1, 1, 1);
        for n in fine.cell_nodes(c) {
            assert_eq!(load[n], 0.125);
        }
        assert_eq!(load.iter().filter(|&&v| v != 0.0).count(), 8);

        let wells = SourceSpec::five_spot(&fine, 3.0);
        assert_eq!(build_source_vector(&fine, &wells).iter().sum::<f64>(), 0.0);

        let bad = SourceSpec {
            regions: vec![SourceRegion {
                cells: CellBox {
                    lo: [0, 0, 0],
                    hi: [5, 1, 1],
                },
                rate: 1.0,
            }],
        };
        assert!(bad.validate(&fine).is_err());
    }

    #[test]
    fn mixed_preset_boundary_and_initial_values() {
        let fine = FineGrid::new(4, 4, 4, 20.0).unwrap();
        let k = PermeabilityField::uniform(&fine, 1e5).unwrap();
        let prob = ProblemSpec::mixed_bc(fine, FluidProps::default(), k, TimeGrid::new(7.0, 3).unwrap());
        let dir = prob.boundary.dirichlet_nodes(&fine);
        assert_eq!(dir.len(), 2 * 25);
        for (n, v) in &dir {
            let i = fine.node_ijk(*n)[0];
            assert_eq!(*v, if i == 0 { 2.16e7 } else { 2.00e7 });
        }
        let p0 = prob.initial_pressure().unwrap();
        assert_eq!(p0[fine.node_index(2, 1, 3)], 2.08e7);
        assert_eq!(p0[fine.node_index(0, 4, 4)], 2.16e7);
    }
}
