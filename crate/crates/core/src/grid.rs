//! Two-scale structured hexahedral mesh.
//!
//! The fine grid has `nx × ny × nz` cubic cells of edge `h`; the coarse grid is
//! obtained by grouping `r × r × r` fine cells. Every coarse vertex `x_i` owns a
//! neighborhood `ω_i` (the union of coarse cells touching it), which is an
//! axis-aligned box of fine nodes. All orderings are lexicographic, x fastest.

use crate::error::{Error, Result};

/// Inclusive index range of fine nodes along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AxisRange {
    pub lo: usize,
    pub hi: usize,
}

impl AxisRange {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.lo..=self.hi).contains(&i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
}

impl FineGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, h: f64) -> Result<Self> {
        for (axis, n) in [("x", nx), ("y", ny), ("z", nz)] {
            if n < 2 {
                return Err(Error::config(format!(
                    "fine grid needs at least 2 cells along {axis}, got {n}"
                )));
            }
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::config(format!("cell size h must be positive, got {h}")));
        }
        Ok(Self { nx, ny, nz, h })
    }

    pub fn node_dims(&self) -> [usize; 3] {
        [self.nx + 1, self.ny + 1, self.nz + 1]
    }

    pub fn cell_dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.nx + 1) * (j + (self.ny + 1) * k)
    }

    #[inline]
    pub fn node_ijk(&self, n: usize) -> [usize; 3] {
        let sx = self.nx + 1;
        let sy = self.ny + 1;
        [n % sx, (n / sx) % sy, n / (sx * sy)]
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn cell_ijk(&self, c: usize) -> [usize; 3] {
        [c % self.nx, (c / self.nx) % self.ny, c / (self.nx * self.ny)]
    }

    /// Eight nodes of a cell in local Q1 order: bit 0 = x, bit 1 = y, bit 2 = z.
    #[inline]
    pub fn cell_nodes(&self, c: usize) -> [usize; 8] {
        let [i, j, k] = self.cell_ijk(c);
        let mut out = [0usize; 8];
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self.node_index(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
        }
        out
    }

    pub fn node_coords(&self, n: usize) -> [f64; 3] {
        let [i, j, k] = self.node_ijk(n);
        [i as f64 * self.h, j as f64 * self.h, k as f64 * self.h]
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        let [i, j, k] = self.node_ijk(n);
        i == 0 || j == 0 || k == 0 || i == self.nx || j == self.ny || k == self.nz
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseGrid {
    pub cx: usize,
    pub cy: usize,
    pub cz: usize,
    /// Fine cells per coarse cell edge.
    pub r: usize,
    pub big_h: f64,
}

impl CoarseGrid {
    pub fn cell_dims(&self) -> [usize; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn vertex_dims(&self) -> [usize; 3] {
        [self.cx + 1, self.cy + 1, self.cz + 1]
    }

    pub fn num_vertices(&self) -> usize {
        (self.cx + 1) * (self.cy + 1) * (self.cz + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.cx * self.cy * self.cz
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.cx + 1) * (j + (self.cy + 1) * k)
    }

    pub fn vertex_ijk(&self, v: usize) -> [usize; 3] {
        let sx = self.cx + 1;
        let sy = self.cy + 1;
        [v % sx, (v / sx) % sy, v / (sx * sy)]
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.cx * (j + self.cy * k)
    }
}

/// Coarse neighborhood `ω_i` of one coarse vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseNeighborhood {
    pub id: usize,
    /// Coarse vertex (I, J, K).
    pub vertex: [usize; 3],
    /// Coarse cells making up `ω_i` (1 to 8).
    pub coarse_cells: Vec<usize>,
    /// Fine node box of `ω_i`, per axis.
    pub ranges: [AxisRange; 3],
    /// Global fine node ids, local lexicographic order.
    pub nodes: Vec<usize>,
    /// Global fine cell ids inside `ω_i`, lexicographic.
    pub cells: Vec<usize>,
    /// Local indices of nodes on `∂ω_i` that are not on the domain boundary.
    pub boundary: Vec<usize>,
    /// Local indices of all other nodes.
    pub interior: Vec<usize>,
}

impl CoarseNeighborhood {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn local_dims(&self) -> [usize; 3] {
        [self.ranges[0].len(), self.ranges[1].len(), self.ranges[2].len()]
    }

    /// Local index of fine node `(i, j, k)` when it lies in the box.
    pub fn local_index(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        let [rx, ry, rz] = self.ranges;
        if rx.contains(i) && ry.contains(j) && rz.contains(k) {
            Some((i - rx.lo) + rx.len() * ((j - ry.lo) + ry.len() * (k - rz.lo)))
        } else {
            None
        }
    }

    /// Eight local node indices of a fine cell inside the box (Q1 order).
    pub fn local_cell_nodes(&self, fine: &FineGrid, cell: usize) -> [usize; 8] {
        let [i, j, k] = fine.cell_ijk(cell);
        let mut out = [0usize; 8];
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self
                .local_index(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1))
                .expect("cell outside neighborhood");
        }
        out
    }
}

/// Fine grid, coarse grid and all coarse neighborhoods.
#[derive(Debug, Clone)]
pub struct TwoScaleMesh {
    pub fine: FineGrid,
    pub coarse: CoarseGrid,
    pub neighborhoods: Vec<CoarseNeighborhood>,
}

impl TwoScaleMesh {
    pub fn new(nx: usize, ny: usize, nz: usize, r: usize, h: f64) -> Result<Self> {
        build_two_scale_mesh(nx, ny, nz, r, h)
    }

    pub fn num_neighborhoods(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn neighborhood(&self, id: usize) -> Result<&CoarseNeighborhood> {
        self.neighborhoods.get(id).ok_or(Error::InvalidNeighborhood {
            id,
            count: self.neighborhoods.len(),
        })
    }

    /// Restricts a fine nodal vector to `ω_i` in local order.
    pub fn restrict(&self, id: usize, v: &[f64]) -> Result<Vec<f64>> {
        neighborhood_restriction(self, id, v)
    }

    /// Extends a local vector on `ω_i` by zero to the whole fine grid.
    pub fn extend_by_zero(&self, id: usize, local: &[f64]) -> Result<Vec<f64>> {
        let nb = self.neighborhood(id)?;
        if local.len() != nb.nodes.len() {
            return Err(Error::Dimension {
                context: "extend_by_zero",
                expected: nb.nodes.len(),
                actual: local.len(),
            });
        }
        let mut out = vec![0.0; self.fine.num_nodes()];
        for (&g, &v) in nb.nodes.iter().zip(local) {
            out[g] = v;
        }
        Ok(out)
    }

    /// Neighborhoods whose box contains fine node `n`.
    pub fn neighborhoods_of_node(&self, n: usize) -> Vec<usize> {
        let [i, j, k] = self.fine.node_ijk(n);
        let r = self.coarse.r;
        let span = |p: usize, ncoarse: usize| -> (usize, usize) {
            // vertices I with (I-1) r ≤ p ≤ (I+1) r
            let lo = p.saturating_sub(r).div_ceil(r);
            let hi = (p / r + 1).min(ncoarse);
            (lo, hi)
        };
        let (x0, x1) = span(i, self.coarse.cx);
        let (y0, y1) = span(j, self.coarse.cy);
        let (z0, z1) = span(k, self.coarse.cz);
        let mut out = Vec::new();
        for kk in z0..=z1 {
            for jj in y0..=y1 {
                for ii in x0..=x1 {
                    out.push(self.coarse.vertex_index(ii, jj, kk));
                }
            }
        }
        out
    }
}

pub fn build_two_scale_mesh(nx: usize, ny: usize, nz: usize, r: usize, h: f64) -> Result<TwoScaleMesh> {
    let fine = FineGrid::new(nx, ny, nz, h)?;
    if r < 2 {
        return Err(Error::config(format!("refinement ratio must be at least 2, got {r}")));
    }
    for (axis, n) in [("x", nx), ("y", ny), ("z", nz)] {
        if n % r != 0 {
            return Err(Error::config(format!(
                "fine cell count {n} along {axis} is not divisible by refinement ratio {r}"
            )));
        }
    }
    let coarse = CoarseGrid {
        cx: nx / r,
        cy: ny / r,
        cz: nz / r,
        r,
        big_h: r as f64 * h,
    };

    let mut neighborhoods = Vec::with_capacity(coarse.num_vertices());
    for id in 0..coarse.num_vertices() {
        neighborhoods.push(build_neighborhood(&fine, &coarse, id));
    }
    Ok(TwoScaleMesh {
        fine,
        coarse,
        neighborhoods,
    })
}

fn build_neighborhood(fine: &FineGrid, coarse: &CoarseGrid, id: usize) -> CoarseNeighborhood {
    let vertex = coarse.vertex_ijk(id);
    let r = coarse.r;
    let cdims = coarse.cell_dims();
    let fdims = fine.cell_dims();

    let mut ranges = [AxisRange { lo: 0, hi: 0 }; 3];
    let mut cell_span = [(0usize, 0usize); 3];
    for a in 0..3 {
        let first = vertex[a].saturating_sub(1);
        let last = vertex[a].min(cdims[a] - 1);
        cell_span[a] = (first, last);
        ranges[a] = AxisRange {
            lo: first * r,
            hi: (last + 1) * r,
        };
    }

    let mut coarse_cells = Vec::new();
    for k in cell_span[2].0..=cell_span[2].1 {
        for j in cell_span[1].0..=cell_span[1].1 {
            for i in cell_span[0].0..=cell_span[0].1 {
                coarse_cells.push(coarse.cell_index(i, j, k));
            }
        }
    }

    let mut nodes = Vec::new();
    let mut boundary = Vec::new();
    let mut interior = Vec::new();
    for k in ranges[2].lo..=ranges[2].hi {
        for j in ranges[1].lo..=ranges[1].hi {
            for i in ranges[0].lo..=ranges[0].hi {
                let local = nodes.len();
                nodes.push(fine.node_index(i, j, k));
                let ijk = [i, j, k];
                // on a face of the box that is not part of the domain boundary
                let on_inner_face = (0..3).any(|a| {
                    (ijk[a] == ranges[a].lo && ranges[a].lo > 0)
                        || (ijk[a] == ranges[a].hi && ranges[a].hi < fdims[a])
                });
                if on_inner_face {
                    boundary.push(local);
                } else {
                    interior.push(local);
                }
            }
        }
    }

    let mut cells = Vec::new();
    for k in ranges[2].lo..ranges[2].hi {
        for j in ranges[1].lo..ranges[1].hi {
            for i in ranges[0].lo..ranges[0].hi {
                cells.push(fine.cell_index(i, j, k));
            }
        }
    }

    CoarseNeighborhood {
        id,
        vertex,
        coarse_cells,
        ranges,
        nodes,
        cells,
        boundary,
        interior,
    }
}

pub fn neighborhood_restriction(mesh: &TwoScaleMesh, id: usize, v: &[f64]) -> Result<Vec<f64>> {
    let nb = mesh.neighborhood(id)?;
    if v.len() != mesh.fine.num_nodes() {
        return Err(Error::Dimension {
            context: "neighborhood_restriction",
            expected: mesh.fine.num_nodes(),
            actual: v.len(),
        });
    }
    Ok(nb.nodes.iter().map(|&g| v[g]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn counts_on_desk_mesh() {
        let mesh = build_two_scale_mesh(8, 8, 8, 4, 1.0).unwrap();
        assert_eq!(mesh.coarse.cell_dims(), [2, 2, 2]);
        assert_eq!(mesh.num_neighborhoods(), 27);
        let corner = &mesh.neighborhoods[0];
        assert_eq!(corner.coarse_cells.len(), 1);
        assert_eq!(corner.nodes.len(), 125);
        let center = &mesh.neighborhoods[mesh.coarse.vertex_index(1, 1, 1)];
        assert_eq!(center.coarse_cells.len(), 8);
        assert_eq!(center.nodes.len(), 729);
        assert!(center.boundary.is_empty(), "center box spans the whole 8³ domain");
    }

    #[test]
    fn non_divisible_counts_name_the_axis() {
        let err = build_two_scale_mesh(8, 8, 8, 3, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("along x")));
        let err = build_two_scale_mesh(8, 6, 8, 4, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("along y")));
        assert!(build_two_scale_mesh(8, 8, 8, 1, 1.0).is_err());
    }

    #[test]
    fn node_index_roundtrip() {
        let g = FineGrid::new(3, 4, 5, 0.5).unwrap();
        for n in 0..g.num_nodes() {
            let [i, j, k] = g.node_ijk(n);
            assert_eq!(g.node_index(i, j, k), n);
        }
        for c in 0..g.num_cells() {
            let [i, j, k] = g.cell_ijk(c);
            assert_eq!(g.cell_index(i, j, k), c);
        }
    }

    #[test]
    fn boundary_classification_matches_geometric_test() {
        let mesh = build_two_scale_mesh(8, 8, 12, 4, 1.0).unwrap();
        let f = &mesh.fine;
        for nb in &mesh.neighborhoods {
            let cell_set: HashSet<usize> = nb.cells.iter().copied().collect();
            let bset: HashSet<usize> = nb.boundary.iter().copied().collect();
            assert_eq!(nb.boundary.len() + nb.interior.len(), nb.nodes.len());
            for (l, &g) in nb.nodes.iter().enumerate() {
                let [i, j, k] = f.node_ijk(g);
                // some incident fine cell of the domain lies outside ω_i
                let mut outside = false;
                for dk in 0..2usize {
                    for dj in 0..2usize {
                        for di in 0..2usize {
                            let (ci, cj, ck) = (i as i64 - di as i64, j as i64 - dj as i64, k as i64 - dk as i64);
                            if ci < 0 || cj < 0 || ck < 0 || ci >= f.nx as i64 || cj >= f.ny as i64 || ck >= f.nz as i64 {
                                continue;
                            }
                            let c = f.cell_index(ci as usize, cj as usize, ck as usize);
                            if !cell_set.contains(&c) {
                                outside = true;
                            }
                        }
                    }
                }
                assert_eq!(outside, bset.contains(&l), "node {g} in ω_{}", nb.id);
            }
        }
    }

    #[test]
    fn partition_support_cover() {
        let mesh = build_two_scale_mesh(8, 8, 8, 4, 1.0).unwrap();
        let mut counts = vec![0usize; mesh.fine.num_nodes()];
        for nb in &mesh.neighborhoods {
            for &g in &nb.nodes {
                counts[g] += 1;
            }
        }
        assert!(counts.iter().all(|&c| (8..=27).contains(&c)));
        let vertex = mesh.fine.node_index(4, 4, 4);
        assert_eq!(counts[vertex], 27);
        assert_eq!(counts[mesh.fine.node_index(1, 1, 1)], 8);
        for n in 0..mesh.fine.num_nodes() {
            let owners = mesh.neighborhoods_of_node(n);
            assert_eq!(owners.len(), counts[n]);
            for id in owners {
                assert!(mesh.neighborhoods[id].nodes.contains(&n));
            }
        }
    }

    #[test]
    fn restriction_of_ones_and_invalid_id() {
        let mesh = build_two_scale_mesh(8, 8, 8, 4, 1.0).unwrap();
        let ones = vec![1.0; mesh.fine.num_nodes()];
        let local = mesh.restrict(13, &ones).unwrap();
        assert!(local.iter().all(|&v| v == 1.0));
        assert!(matches!(mesh.restrict(27, &ones), Err(Error::InvalidNeighborhood { .. })));
        assert!(mesh.restrict(0, &ones[1..]).is_err());
    }

    proptest! {
        #[test]
        fn restrict_extend_roundtrip(id in 0usize..27, seed in any::<u64>()) {
            let mesh = build_two_scale_mesh(8, 8, 8, 4, 1.0).unwrap();
            let n = mesh.fine.num_nodes();
            let v: Vec<f64> = (0..n).map(|p| ((p as u64).wrapping_mul(seed | 1) % 1000) as f64 - 500.0).collect();
            let local = mesh.restrict(id, &v).unwrap();
            let ext = mesh.extend_by_zero(id, &local).unwrap();
            let member: HashSet<usize> = mesh.neighborhoods[id].nodes.iter().copied().collect();
            for p in 0..n {
                let [i, j, k] = mesh.fine.node_ijk(p);
                let r = mesh.neighborhoods[id].ranges;
                prop_assert_eq!(member.contains(&p), r[0].contains(i) && r[1].contains(j) && r[2].contains(k));
                if member.contains(&p) { prop_assert_eq!(ext[p], v[p]); } else { prop_assert_eq!(ext[p], 0.0); }
            }
            prop_assert_eq!(mesh.restrict(id, &ext).unwrap(), local);
        }
    }
}
