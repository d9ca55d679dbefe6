//! Residual-driven online basis functions and error indicators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarse::gmsfem_step;
use crate::error::{Error, Result};
use crate::fem::{Discretization, NewtonConfig, Timings};
use crate::grid::TwoScaleMesh;
use crate::linsolve::SparseLu;
use crate::offline::{BasisColumn, ColumnKind, ColumnMeta, OfflineSpace, ProjectionMatrix};
use crate::sparse::{dot, norm2, CsrMatrix};

/// Localized residual `R_i(v)` for `v` supported in `ω_i`.
#[derive(Debug, Clone)]
pub struct LocalResidual {
    pub id: usize,
    /// Global fine ids of the unknowns: nodes of `ω_i` off `∂ω_i \ ∂D` and
    /// off Dirichlet nodes, ascending.
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl LocalResidual {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Unknowns of the local zero-Dirichlet problem on `ω_i`.
pub fn local_dofs(mesh: &TwoScaleMesh, id: usize, is_dirichlet: &[bool]) -> Result<Vec<usize>> {
    let nb = mesh.neighborhood(id)?;
    Ok(nb
        .interior
        .iter()
        .map(|&l| nb.nodes[l])
        .filter(|&g| !is_dirichlet[g])
        .collect())
}

/// `R_i(φ_j) = −F_j` for the local unknowns, given the global Newton
/// residual `F` (which already carries the source, accumulation and flux).
pub fn local_residual_from_global(
    mesh: &TwoScaleMesh,
    id: usize,
    residual: &[f64],
    is_dirichlet: &[bool],
) -> Result<LocalResidual> {
    let dofs = local_dofs(mesh, id, is_dirichlet)?;
    let values = dofs.iter().map(|&g| -residual[g]).collect();
    Ok(LocalResidual { id, dofs, values })
}

/// Local residual at state `p_h` with previous state `p_prev`.
pub fn compute_local_residual(
    mesh: &TwoScaleMesh,
    id: usize,
    disc: &Discretization,
    p_h: &[f64],
    p_prev: &[f64],
) -> Result<LocalResidual> {
    let f = disc.residual(p_h, p_prev)?;
    local_residual_from_global(mesh, id, &f, disc.is_dirichlet())
}

/// Online basis function of one neighborhood.
#[derive(Debug, Clone)]
pub struct OnlineVector {
    pub id: usize,
    pub column: BasisColumn,
}

/// Solves `J_i φ = r_i` on the local unknowns and normalizes `φᵀ J_i φ = 1`.
/// Returns `None` for a zero residual.
pub fn solve_online_vector(res: &LocalResidual, jacobian: &CsrMatrix) -> Result<Option<OnlineVector>> {
    if res.is_zero() || res.dofs.is_empty() {
        return Ok(None);
    }
    let jl = jacobian.principal_submatrix(&res.dofs);
    let phi = SparseLu::factor(&jl)?.solve(&res.values)?;
    let energy = jl.quad_form(&phi);
    if !(energy > 0.0) {
        return Err(Error::Singular {
            context: "online basis",
            detail: format!("neighborhood {}: local energy {energy:e} is not positive", res.id),
        });
    }
    let s = energy.sqrt().recip();
    Ok(Some(OnlineVector {
        id: res.id,
        column: BasisColumn::from_entries(res.dofs.iter().zip(&phi).map(|(&g, &v)| (g, s * v))),
    }))
}

/// `η_i = rᵀ J_sym⁻¹ r / λ_{L_i+1}`.
pub fn error_indicator(res: &LocalResidual, jacobian: &CsrMatrix, lambda_next: f64) -> Result<f64> {
    if res.is_zero() || res.dofs.is_empty() {
        return Ok(0.0);
    }
    let js = jacobian.principal_submatrix(&res.dofs).symmetric_part();
    let y = SparseLu::factor(&js)?.solve(&res.values)?;
    Ok(dot(&res.values, &y) / lambda_next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// New online columns replace the previous ones.
    #[default]
    Replace,
    /// New online columns are added to the previous ones.
    Append,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSchedule {
    /// Online functions per neighborhood and update.
    pub count: usize,
    /// 1-based time steps at which online functions are (re)computed.
    pub steps: Vec<usize>,
    pub mode: UpdateMode,
    /// Enrich only the `k` neighborhoods with the largest indicator.
    pub top_k: Option<usize>,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        Self::offline_only()
    }
}

impl UpdateSchedule {
    pub fn offline_only() -> Self {
        Self {
            count: 0,
            steps: Vec::new(),
            mode: UpdateMode::Replace,
            top_k: None,
        }
    }

    pub fn new(count: usize, steps: Vec<usize>) -> Self {
        Self {
            count,
            steps,
            mode: UpdateMode::Replace,
            top_k: None,
        }
    }

    /// `k` updates spread evenly over `steps` time steps: `1 + ⌊i·Nt/k⌋`.
    pub fn evenly_spaced(updates: usize, total_steps: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..updates).map(|i| 1 + i * total_steps / updates.max(1)).collect();
        out.dedup();
        out
    }

    pub fn validate(&self, total_steps: usize) -> Result<()> {
        if let Some(&bad) = self.steps.iter().find(|&&s| s == 0 || s > total_steps) {
            return Err(Error::config(format!(
                "online update step {bad} lies outside the time grid 1..={total_steps}"
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::config("online.top_k must be positive"));
        }
        Ok(())
    }

    pub fn is_update_step(&self, step: usize) -> bool {
        self.count > 0 && self.steps.contains(&step)
    }
}

/// What an enrichment call did.
#[derive(Debug, Clone, Default)]
pub struct EnrichmentReport {
    pub added: usize,
    pub skipped: usize,
    /// Indicator per neighborhood from the first residual of the update.
    pub indicators: Vec<f64>,
}

/// One batch of online vectors for the residual at `p` (previous state `p_prev`).
fn online_batch(
    disc: &Discretization,
    mesh: &TwoScaleMesh,
    offline: &OfflineSpace,
    p: &[f64],
    p_prev: &[f64],
    top_k: Option<usize>,
) -> Result<(Vec<OnlineVector>, Vec<f64>, usize)> {
    let sys = disc.system(p, p_prev)?;
    let per: Vec<Result<(Option<OnlineVector>, f64)>> = (0..mesh.num_neighborhoods())
        .into_par_iter()
        .map(|id| {
            let res = local_residual_from_global(mesh, id, &sys.residual, disc.is_dirichlet())?;
            let eta = if top_k.is_some() {
                error_indicator(&res, &sys.jacobian, offline.next_eigenvalue(id))?
            } else {
                0.0
            };
            Ok((solve_online_vector(&res, &sys.jacobian)?, eta))
        })
        .collect();
    let mut vectors = Vec::new();
    let mut etas = Vec::with_capacity(per.len());
    let mut skipped = 0;
    let mut candidates = Vec::new();
    for item in per {
        let (v, eta) = item?;
        etas.push(eta);
        candidates.push(v);
    }
    let chosen: Option<Vec<usize>> = top_k.map(|k| {
        let mut order: Vec<usize> = (0..etas.len()).collect();
        order.sort_by(|&a, &b| etas[b].total_cmp(&etas[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    });
    for (id, v) in candidates.into_iter().enumerate() {
        let wanted = chosen.as_ref().is_none_or(|c| c.contains(&id));
        match v {
            Some(v) if wanted => vectors.push(v),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    Ok((vectors, etas, skipped))
}

/// Computes online functions at time step `step` from the residual at
/// `p_prev` (the state entering the step) and installs them in `r`.
///
/// With `count ≥ 2` the step is solved in the temporarily enriched space and
/// the residual recomputed before each further batch.
#[allow(clippy::too_many_arguments)]
pub fn enrich_and_update(
    r: &mut ProjectionMatrix,
    schedule: &UpdateSchedule,
    disc: &Discretization,
    mesh: &TwoScaleMesh,
    offline: &OfflineSpace,
    p_prev: &[f64],
    step: usize,
    cfg: &NewtonConfig,
    timings: &mut Timings,
) -> Result<EnrichmentReport> {
    let mut report = EnrichmentReport::default();
    if schedule.count == 0 {
        return Ok(report);
    }
    if schedule.mode == UpdateMode::Replace {
        r.clear_online();
    }
    let mut state = p_prev.to_vec();
    for batch in 0..schedule.count {
        let (vectors, etas, skipped) = online_batch(disc, mesh, offline, &state, p_prev, schedule.top_k)?;
        if batch == 0 {
            report.indicators = etas;
        }
        report.skipped += skipped;
        report.added += vectors.len();
        for v in vectors {
            r.push(
                v.column,
                ColumnMeta {
                    neighborhood: v.id,
                    kind: ColumnKind::Online { index: batch, step },
                },
            );
        }
        if batch + 1 < schedule.count {
            state = gmsfem_step(disc, r, p_prev, cfg, step, timings)?.0;
        }
    }
    r.check_rank()?;
    Ok(report)
}

/// Norm of the fine residual restricted to every local unknown set.
pub fn interior_residual_norm(mesh: &TwoScaleMesh, residual: &[f64], is_dirichlet: &[bool]) -> Result<f64> {
    let mut covered = vec![false; residual.len()];
    for id in 0..mesh.num_neighborhoods() {
        for g in local_dofs(mesh, id, is_dirichlet)? {
            covered[g] = true;
        }
    }
    Ok(norm2(
        &residual
            .iter()
            .zip(&covered)
            .map(|(v, c)| if *c { *v } else { 0.0 })
            .collect::<Vec<_>>(),
    ))
}
