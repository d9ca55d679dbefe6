//! Offline multiscale space: partition of unity, snapshot spaces, local
//! spectral problems and the projection matrix `R`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use faer::prelude::*;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{element_mass, element_stiffness, ElementMatrix};
use crate::grid::{CoarseNeighborhood, TwoScaleMesh};
use crate::linsolve::{generalized_symmetric_eigen, GeneralizedEigen};
use crate::model::{FluidProps, PermeabilityField};
use crate::sparse::CsrMatrix;

/// Coarse trilinear hat functions sampled at fine nodes.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    /// `χ_i` on the nodes of `ω_i`, local order.
    pub chi: Vec<Vec<f64>>,
    /// `Σ_j |∇χ_j|²` at each fine cell centre.
    pub grad_sq_sum: Vec<f64>,
}

fn hat(p: f64, center: f64) -> f64 {
    (1.0 - (p - center).abs()).max(0.0)
}

pub fn build_partition_of_unity(mesh: &TwoScaleMesh) -> PartitionOfUnity {
    let fine = &mesh.fine;
    let r = mesh.coarse.r as f64;
    let chi = mesh
        .neighborhoods
        .iter()
        .map(|nb| {
            nb.nodes
                .iter()
                .map(|&n| {
                    let ijk = fine.node_ijk(n);
                    (0..3).map(|a| hat(ijk[a] as f64 / r, nb.vertex[a] as f64)).product()
                })
                .collect()
        })
        .collect();

    // Inside one coarse cell with local coordinates t ∈ [0,1]³ the eight hats are
    // products of t_a or (1 − t_a), so
    // Σ|∇χ|² = 2 H⁻² Σ_a Π_{b≠a} (t_b² + (1 − t_b)²).
    let big_h = mesh.coarse.big_h;
    let grad_sq_sum = (0..fine.num_cells())
        .map(|c| {
            let ijk = fine.cell_ijk(c);
            let q: Vec<f64> = (0..3)
                .map(|a| {
                    let t = ((ijk[a] % mesh.coarse.r) as f64 + 0.5) / r;
                    t * t + (1.0 - t) * (1.0 - t)
                })
                .collect();
            2.0 * (q[1] * q[2] + q[0] * q[2] + q[0] * q[1]) / (big_h * big_h)
        })
        .collect();
    PartitionOfUnity { chi, grad_sq_sum }
}

impl PartitionOfUnity {
    /// `χ_i` extended by zero to the fine grid.
    pub fn global(&self, mesh: &TwoScaleMesh, id: usize) -> Result<Vec<f64>> {
        mesh.extend_by_zero(id, &self.chi[id])
    }
}

/// Whether the mass weight of the spectral problem carries `ρ(p₀)` once or twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoWeight {
    #[default]
    Single,
    Double,
}

/// `κ̃ = ρ₀ κ Σ_j |∇χ_j|²` per cell (an extra `ρ₀` factor with [`RhoWeight::Double`]).
pub fn compute_kappa_tilde(
    kappa: &PermeabilityField,
    rho0: &[f64],
    pou: &PartitionOfUnity,
    weight: RhoWeight,
) -> Result<Vec<f64>> {
    if rho0.len() != kappa.len() || pou.grad_sq_sum.len() != kappa.len() {
        return Err(Error::Dimension {
            context: "kappa tilde",
            expected: kappa.len(),
            actual: rho0.len(),
        });
    }
    Ok(kappa
        .values()
        .iter()
        .zip(rho0)
        .zip(&pou.grad_sq_sum)
        .map(|((k, r), g)| {
            let base = r * k * g;
            match weight {
                RhoWeight::Single => base,
                RhoWeight::Double => r * base,
            }
        })
        .collect())
}

/// Cell-wise density at the midpoint of `p0`.
pub fn cell_density(mesh: &TwoScaleMesh, fluid: &FluidProps, p0: &[f64]) -> Result<Vec<f64>> {
    let fine = &mesh.fine;
    (0..fine.num_cells())
        .map(|c| fluid.density(fine.cell_nodes(c).iter().map(|&n| p0[n]).sum::<f64>() / 8.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotKind {
    /// All fine functions on `ω_i`.
    #[default]
    V1,
    /// Discrete harmonic extensions of boundary deltas.
    V2,
}

impl std::str::FromStr for SnapshotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" | "V1" => Ok(SnapshotKind::V1),
            "v2" | "V2" => Ok(SnapshotKind::V2),
            other => Err(Error::config(format!("unknown snapshot kind '{other}' (expected v1 or v2)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotSpace {
    pub id: usize,
    pub kind: SnapshotKind,
    /// Columns over the local nodes of `ω_i`.
    pub basis: Mat<f64>,
}

impl SnapshotSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

fn dense_local(nb: &CoarseNeighborhood, mesh: &TwoScaleMesh, weights: &[f64], elem: &ElementMatrix) -> Mat<f64> {
    let n = nb.num_nodes();
    let mut m = Mat::<f64>::zeros(n, n);
    for &c in &nb.cells {
        let loc = nb.local_cell_nodes(&mesh.fine, c);
        let w = weights[c];
        for a in 0..8 {
            for b in 0..8 {
                m[(loc[a], loc[b])] += w * elem[a][b];
            }
        }
    }
    m
}

/// Local stiffness on `ω_i` with cell weights (natural boundary conditions).
pub fn local_stiffness(mesh: &TwoScaleMesh, id: usize, weights: &[f64]) -> Result<Mat<f64>> {
    let nb = mesh.neighborhood(id)?;
    Ok(dense_local(nb, mesh, weights, &element_stiffness(mesh.fine.h)))
}

/// Local consistent mass on `ω_i` with cell weights.
pub fn local_mass(mesh: &TwoScaleMesh, id: usize, weights: &[f64]) -> Result<Mat<f64>> {
    let nb = mesh.neighborhood(id)?;
    Ok(dense_local(nb, mesh, weights, &element_mass(mesh.fine.h)))
}

pub fn build_snapshot_v1(mesh: &TwoScaleMesh, id: usize) -> Result<SnapshotSpace> {
    let n = mesh.neighborhood(id)?.num_nodes();
    Ok(SnapshotSpace {
        id,
        kind: SnapshotKind::V1,
        basis: Mat::<f64>::identity(n, n),
    })
}

/// Harmonic extensions of `δ_k` for every boundary node `k` of `ω_i`, with
/// the stiffness weight `stiff_weight` (typically `ρ₀ κ`).
pub fn build_snapshot_v2(mesh: &TwoScaleMesh, id: usize, stiff_weight: &[f64]) -> Result<SnapshotSpace> {
    let nb = mesh.neighborhood(id)?;
    let a = local_stiffness(mesh, id, stiff_weight)?;
    harmonic_extensions(nb, &a)
}

fn harmonic_extensions(nb: &CoarseNeighborhood, a: &Mat<f64>) -> Result<SnapshotSpace> {
    let nbnd = nb.boundary.len();
    if nbnd == 0 {
        return Err(Error::config(format!(
            "neighborhood {} has no interior boundary; the harmonic snapshot space needs at least two coarse cells per axis",
            nb.id
        )));
    }
    let ni = nb.interior.len();
    let a_ii = Mat::<f64>::from_fn(ni, ni, |r, c| a[(nb.interior[r], nb.interior[c])]);
    let mut rhs = Mat::<f64>::from_fn(ni, nbnd, |r, k| -a[(nb.interior[r], nb.boundary[k])]);
    a_ii.partial_piv_lu().solve_in_place(rhs.as_mut());
    let mut basis = Mat::<f64>::zeros(nb.num_nodes(), nbnd);
    for k in 0..nbnd {
        basis[(nb.boundary[k], k)] = 1.0;
        for r in 0..ni {
            basis[(nb.interior[r], k)] = rhs[(r, k)];
        }
    }
    Ok(SnapshotSpace {
        id: nb.id,
        kind: SnapshotKind::V2,
        basis,
    })
}

pub fn build_snapshot(mesh: &TwoScaleMesh, id: usize, kind: SnapshotKind, stiff_weight: &[f64]) -> Result<SnapshotSpace> {
    match kind {
        SnapshotKind::V1 => build_snapshot_v1(mesh, id),
        SnapshotKind::V2 => build_snapshot_v2(mesh, id, stiff_weight),
    }
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub id: usize,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors in snapshot coordinates, `M̄`-orthonormal.
    pub vectors: Mat<f64>,
    /// Snapshot basis the vectors refer to.
    pub snapshot: SnapshotSpace,
}

/// Solves `Ā v = λ M̄ v` with `Ā = Sᵀ A S`, `M̄ = Sᵀ M S`, `A` the local
/// stiffness weighted by `stiff_weight` and `M` the local mass weighted by `κ̃`.
pub fn solve_local_spectral(
    mesh: &TwoScaleMesh,
    snapshot: SnapshotSpace,
    stiff_weight: &[f64],
    kappa_tilde: &[f64],
) -> Result<SpectralDecomposition> {
    let id = snapshot.id;
    let a = local_stiffness(mesh, id, stiff_weight)?;
    let m = local_mass(mesh, id, kappa_tilde)?;
    let (abar, mbar) = match snapshot.kind {
        SnapshotKind::V1 => (a, m),
        SnapshotKind::V2 => {
            let s = &snapshot.basis;
            (s.transpose() * &a * s, s.transpose() * &m * s)
        }
    };
    let GeneralizedEigen { values, vectors } = generalized_symmetric_eigen(&abar, &mbar)
        .map_err(|e| Error::Eigen(format!("neighborhood {id}: {e}")))?;
    Ok(SpectralDecomposition {
        id,
        eigenvalues: values,
        vectors,
        snapshot,
    })
}

/// First `count` eigenfunctions mapped to local fine nodes.
pub fn select_offline_basis(spectral: &SpectralDecomposition, count: usize) -> Result<Vec<Vec<f64>>> {
    let dim = spectral.snapshot.dim();
    if count > dim {
        return Err(Error::config(format!(
            "neighborhood {} has a snapshot space of dimension {dim}; cannot select {count} offline functions",
            spectral.id
        )));
    }
    let s = &spectral.snapshot.basis;
    Ok((0..count)
        .map(|l| match spectral.snapshot.kind {
            SnapshotKind::V1 => (0..dim).map(|r| spectral.vectors[(r, l)]).collect(),
            SnapshotKind::V2 => (0..s.nrows())
                .map(|r| (0..dim).map(|k| s[(r, k)] * spectral.vectors[(k, l)]).sum())
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Offline { index: usize },
    Online { index: usize, step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub neighborhood: usize,
    pub kind: ColumnKind,
}

/// One column of `R`, sparse over fine nodes (rows strictly increasing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisColumn {
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

impl BasisColumn {
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (&r, &x) in self.rows.iter().zip(&self.values) {
            v[r] = x;
        }
        v
    }

    /// Drops zeros; `rows` must be ascending.
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let (rows, values) = entries.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        Self { rows, values }
    }
}

/// Fine × coarse matrix whose columns are the multiscale basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    nrows: usize,
    columns: Vec<BasisColumn>,
    meta: Vec<ColumnMeta>,
}

impl ProjectionMatrix {
    pub fn new(nrows: usize) -> Self {
        Self {
            nrows,
            columns: Vec::new(),
            meta: Vec::new(),
        }
    }

    /// Identity on the non-Dirichlet fine nodes (debugging and equivalence tests).
    pub fn identity(nrows: usize, is_dirichlet: &[bool]) -> Self {
        let mut r = Self::new(nrows);
        for n in (0..nrows).filter(|&n| !is_dirichlet[n]) {
            r.push(
                BasisColumn {
                    rows: vec![n],
                    values: vec![1.0],
                },
                ColumnMeta {
                    neighborhood: n,
                    kind: ColumnKind::Offline { index: 0 },
                },
            );
        }
        r
    }

    pub fn push(&mut self, column: BasisColumn, meta: ColumnMeta) {
        debug_assert!(column.rows.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(column.rows.iter().all(|&r| r < self.nrows));
        self.columns.push(column);
        self.meta.push(meta);
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    /// Coarse dimension.
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[BasisColumn] {
        &self.columns
    }

    pub fn meta(&self) -> &[ColumnMeta] {
        &self.meta
    }

    pub fn num_offline(&self) -> usize {
        self.meta.iter().filter(|m| matches!(m.kind, ColumnKind::Offline { .. })).count()
    }

    pub fn num_online(&self) -> usize {
        self.dim() - self.num_offline()
    }

    /// Removes all online columns, keeping offline ones in place.
    pub fn clear_online(&mut self) {
        let keep: Vec<bool> = self.meta.iter().map(|m| matches!(m.kind, ColumnKind::Offline { .. })).collect();
        let mut it = keep.iter();
        self.columns.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.meta.retain(|_| *it.next().unwrap());
    }

    /// `Rᵀ` in CSR form (one row per basis column).
    pub fn transpose_csr(&self) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(self.dim() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for col in &self.columns {
            col_idx.extend_from_slice(&col.rows);
            values.extend_from_slice(&col.values);
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::new(self.dim(), self.nrows, row_ptr, col_idx, values).expect("columns are sorted")
    }

    pub fn to_csr(&self) -> CsrMatrix {
        self.transpose_csr().transpose()
    }

    /// `R x`.
    pub fn prolong(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for (col, &xi) in self.columns.iter().zip(x) {
            for (&r, &v) in col.rows.iter().zip(&col.values) {
                out[r] += v * xi;
            }
        }
        out
    }

    /// `Rᵀ v`.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| c.rows.iter().zip(&c.values).map(|(&r, &x)| x * v[r]).sum())
            .collect()
    }

    /// `σ_min / σ_max` of `R`, via the eigenvalues of the Gram matrix `RᵀR`.
    pub fn rank_ratio(&self) -> Result<f64> {
        let n = self.dim();
        if n == 0 {
            return Ok(0.0);
        }
        let rt = self.transpose_csr();
        let gram = rt.matmul(&self.to_csr())?.to_faer_dense();
        let evd = gram
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        let max = (0..n).map(|k| s[k]).fold(0.0f64, f64::max);
        let min = (0..n).map(|k| s[k]).fold(f64::INFINITY, f64::min).max(0.0);
        Ok(if max > 0.0 { (min / max).sqrt() } else { 0.0 })
    }

    /// Logs a warning when `R` is numerically rank deficient.
    pub fn check_rank(&self) -> Result<f64> {
        let ratio = self.rank_ratio()?;
        if ratio <= 1e-10 {
            log::warn!(
                "projection matrix is numerically rank deficient (sigma_min/sigma_max = {ratio:e}, dim {})",
                self.dim()
            );
        }
        Ok(ratio)
    }
}

/// `extend_by_zero(χ_i ⊙ ψ)`, zeroed at Dirichlet nodes.
pub fn offline_column(
    mesh: &TwoScaleMesh,
    pou: &PartitionOfUnity,
    id: usize,
    psi: &[f64],
    is_dirichlet: &[bool],
) -> BasisColumn {
    let nb = &mesh.neighborhoods[id];
    BasisColumn::from_entries(nb.nodes.iter().enumerate().map(|(l, &g)| {
        let v = if is_dirichlet[g] { 0.0 } else { pou.chi[id][l] * psi[l] };
        (g, v)
    }))
}

/// Columns `χ_i ψ_l^i` ordered by neighborhood, then `l`.
pub fn assemble_projection(
    mesh: &TwoScaleMesh,
    pou: &PartitionOfUnity,
    offline: &[Vec<Vec<f64>>],
    is_dirichlet: &[bool],
) -> Result<ProjectionMatrix> {
    if offline.len() != mesh.num_neighborhoods() {
        return Err(Error::Dimension {
            context: "offline function sets",
            expected: mesh.num_neighborhoods(),
            actual: offline.len(),
        });
    }
    let mut r = ProjectionMatrix::new(mesh.fine.num_nodes());
    for (id, set) in offline.iter().enumerate() {
        for (l, psi) in set.iter().enumerate() {
            r.push(
                offline_column(mesh, pou, id, psi, is_dirichlet),
                ColumnMeta {
                    neighborhood: id,
                    kind: ColumnKind::Offline { index: l },
                },
            );
        }
    }
    r.check_rank()?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    pub snapshot: SnapshotKind,
    /// Offline functions per neighborhood.
    pub count: usize,
    /// Per-neighborhood override of `count`.
    pub per_neighborhood: Option<Vec<usize>>,
    pub rho_weight: RhoWeight,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            snapshot: SnapshotKind::V1,
            count: 4,
            per_neighborhood: None,
            rho_weight: RhoWeight::Single,
        }
    }
}

impl OfflineConfig {
    pub fn count_for(&self, id: usize) -> usize {
        self.per_neighborhood
            .as_ref()
            .and_then(|v| v.get(id).copied())
            .unwrap_or(self.count)
    }
}

/// Offline stage output.
#[derive(Debug, Clone)]
pub struct OfflineSpace {
    pub pou: PartitionOfUnity,
    /// Offline functions `ψ_l^i` on local nodes.
    pub functions: Vec<Vec<Vec<f64>>>,
    /// All eigenvalues per neighborhood, ascending.
    pub eigenvalues: Vec<Vec<f64>>,
    pub projection: ProjectionMatrix,
}

impl OfflineSpace {
    /// `λ_{L_i+1}` of neighborhood `i` (the largest computed eigenvalue when
    /// every eigenpair was selected).
    pub fn next_eigenvalue(&self, id: usize) -> f64 {
        let l = self.functions[id].len();
        let ev = &self.eigenvalues[id];
        ev.get(l).or(ev.last()).copied().unwrap_or(1.0)
    }
}

/// Builds the full offline space for the initial state `p0`.
pub fn build_offline_space(
    mesh: &TwoScaleMesh,
    fluid: &FluidProps,
    kappa: &PermeabilityField,
    p0: &[f64],
    is_dirichlet: &[bool],
    cfg: &OfflineConfig,
) -> Result<OfflineSpace> {
    if let Some(v) = &cfg.per_neighborhood {
        if v.len() != mesh.num_neighborhoods() {
            return Err(Error::config(format!(
                "per-neighborhood offline counts list {} entries for {} neighborhoods",
                v.len(),
                mesh.num_neighborhoods()
            )));
        }
    }
    let pou = build_partition_of_unity(mesh);
    let rho0 = cell_density(mesh, fluid, p0)?;
    let stiff: Vec<f64> = kappa.values().iter().zip(&rho0).map(|(k, r)| k * r).collect();
    let kt = compute_kappa_tilde(kappa, &rho0, &pou, cfg.rho_weight)?;

    let locals: Vec<Result<(Vec<Vec<f64>>, Vec<f64>)>> = (0..mesh.num_neighborhoods())
        .into_par_iter()
        .map(|id| {
            let snap = build_snapshot(mesh, id, cfg.snapshot, &stiff)?;
            let spec = solve_local_spectral(mesh, snap, &stiff, &kt)?;
            let psi = select_offline_basis(&spec, cfg.count_for(id))?;
            Ok((psi, spec.eigenvalues))
        })
        .collect();
    let mut functions = Vec::with_capacity(locals.len());
    let mut eigenvalues = Vec::with_capacity(locals.len());
    for item in locals {
        let (psi, ev) = item?;
        functions.push(psi);
        eigenvalues.push(ev);
    }
    let projection = assemble_projection(mesh, &pou, &functions, is_dirichlet)?;
    Ok(OfflineSpace {
        pou,
        functions,
        eigenvalues,
        projection,
    })
}

const CACHE_MAGIC: &str = "gmsfem-basis-cache v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheHeader {
    signature: String,
    nrows: usize,
    meta: Vec<ColumnMeta>,
    nnz: Vec<usize>,
    eigenvalue_counts: Vec<usize>,
}

/// Identifies the inputs a cached basis was built from.
pub fn basis_signature(mesh: &TwoScaleMesh, cfg: &OfflineConfig, kappa: &PermeabilityField, p0: &[f64]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in p0 {
        h.update(v.to_le_bytes());
    }
    let p0_hash: String = h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!(
        "mesh={}x{}x{}/r{}/h{:e};snapshot={:?};counts={};rho={:?};field={};p0={}",
        mesh.fine.nx,
        mesh.fine.ny,
        mesh.fine.nz,
        mesh.coarse.r,
        mesh.fine.h,
        cfg.snapshot,
        (0..mesh.num_neighborhoods())
            .map(|i| cfg.count_for(i).to_string())
            .collect::<Vec<_>>()
            .join(","),
        cfg.rho_weight,
        kappa.fingerprint(),
        p0_hash
    )
}

/// Writes the projection matrix and eigenvalues: a text header line, a JSON
/// line, little-endian `(u64 row, f64 value)` pairs column by column, then
/// the eigenvalues as f64.
pub fn save_basis_cache(path: &Path, signature: &str, space: &OfflineSpace) -> Result<()> {
    let r = &space.projection;
    let header = CacheHeader {
        signature: signature.to_owned(),
        nrows: r.nrows(),
        meta: r.meta().to_vec(),
        nnz: r.columns().iter().map(|c| c.rows.len()).collect(),
        eigenvalue_counts: space.eigenvalues.iter().map(Vec::len).collect(),
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{CACHE_MAGIC}")?;
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for col in r.columns() {
        for (&row, &v) in col.rows.iter().zip(&col.values) {
            out.write_all(&(row as u64).to_le_bytes())?;
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for v in space.eigenvalues.iter().flatten() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a cache written by [`save_basis_cache`]; fails with `InvalidData`
/// when the signature differs.
pub fn load_basis_cache(path: &Path, signature: &str) -> Result<(ProjectionMatrix, Vec<Vec<f64>>)> {
    let invalid = |detail: String| Error::InvalidData {
        path: path.to_owned(),
        detail,
    };
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != CACHE_MAGIC {
        return Err(invalid("not a basis cache file".into()));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let header: CacheHeader = serde_json::from_str(line.trim_end()).map_err(|e| invalid(format!("bad header: {e}")))?;
    if header.signature != signature {
        return Err(invalid(format!(
            "signature mismatch: cache was built for '{}', expected '{signature}'",
            header.signature
        )));
    }
    if header.meta.len() != header.nnz.len() {
        return Err(invalid("column metadata and sizes disagree".into()));
    }
    let mut r = ProjectionMatrix::new(header.nrows);
    let mut buf = [0u8; 16];
    for (meta, &nnz) in header.meta.iter().zip(&header.nnz) {
        let mut rows = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            reader
                .read_exact(&mut buf)
                .map_err(|e| invalid(format!("truncated payload: {e}")))?;
            let row = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
            if row >= header.nrows || rows.last().is_some_and(|&last| last >= row) {
                return Err(invalid(format!("bad row index {row}")));
            }
            rows.push(row);
            values.push(f64::from_le_bytes(buf[8..].try_into().unwrap()));
        }
        r.push(BasisColumn { rows, values }, *meta);
    }
    let mut eigenvalues = Vec::with_capacity(header.eigenvalue_counts.len());
    for &count in &header.eigenvalue_counts {
        let mut ev = Vec::with_capacity(count);
        for _ in 0..count {
            reader
                .read_exact(&mut buf[..8])
                .map_err(|e| invalid(format!("truncated eigenvalues: {e}")))?;
            ev.push(f64::from_le_bytes(buf[..8].try_into().unwrap()));
        }
        eigenvalues.push(ev);
    }
    Ok((r, eigenvalues))
}
