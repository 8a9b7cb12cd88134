//! Uniform tensor grids over the truncation box, with the shortest-path
//! machinery used for distance fields and core verification.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Interior nodes of `[-R, R]^dim` with spacing `h`; boundary values are
/// pinned to zero and carry no unknowns. `R/h` must be an integer.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
    /// Interior nodes per axis (2*R/h - 1).
    pub n_axis: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, spacing: f64) -> Self {
        assert!(dim == 1 || dim == 2, "only 1D and 2D grids are supported");
        assert!(half_width > 0.0 && spacing > 0.0);
        let m = half_width / spacing;
        let m_round = m.round();
        assert!(
            (m - m_round).abs() < 1e-9 && m_round >= 16.0,
            "R/h must be an integer >= 16 (got {m})"
        );
        let m = m_round as usize;
        Grid { dim, half_width, spacing, n_axis: 2 * m - 1 }
    }

    pub fn node_count(&self) -> usize {
        self.n_axis.pow(self.dim as u32)
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 1.0) * self.spacing
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        match self.dim {
            1 => vec![self.axis_coord(node)],
            2 => {
                let i = node % self.n_axis;
                let j = node / self.n_axis;
                vec![self.axis_coord(i), self.axis_coord(j)]
            }
            _ => unreachable!(),
        }
    }

    pub fn node_at(&self, multi: &[usize]) -> usize {
        match self.dim {
            1 => multi[0],
            2 => multi[0] + multi[1] * self.n_axis,
            _ => unreachable!(),
        }
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![node],
            2 => vec![node % self.n_axis, node / self.n_axis],
            _ => unreachable!(),
        }
    }

    /// Nearest interior node to a point (clamped into the box).
    pub fn nearest_node(&self, p: &[f64]) -> usize {
        let mut multi = Vec::with_capacity(self.dim);
        for d in 0..self.dim {
            let rel = (p[d] + self.half_width) / self.spacing - 1.0;
            let i = rel.round().clamp(0.0, (self.n_axis - 1) as f64) as usize;
            multi.push(i);
        }
        self.node_at(&multi)
    }

    /// Neighbor offsets for the distance graph: 2-connected in 1D,
    /// 8-connected in 2D.
    pub fn stencil_offsets(&self) -> Vec<Vec<i64>> {
        match self.dim {
            1 => vec![vec![-1], vec![1]],
            2 => {
                let mut out = Vec::new();
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        if dx != 0 || dy != 0 {
                            out.push(vec![dx, dy]);
                        }
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    pub fn neighbor(&self, node: usize, offset: &[i64]) -> Option<usize> {
        let multi = self.multi_index(node);
        let mut out = Vec::with_capacity(self.dim);
        for d in 0..self.dim {
            let i = multi[d] as i64 + offset[d];
            if i < 0 || i >= self.n_axis as i64 {
                return None;
            }
            out.push(i as usize);
        }
        Some(self.node_at(&out))
    }

    /// Multilinear interpolation of a nodal scalar field at a point inside
    /// the box. Values beyond the interior node range use the Dirichlet
    /// zero boundary.
    pub fn interpolate(&self, values: &[f64], p: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.node_count());
        let sample = |multi: &[i64]| -> f64 {
            for d in 0..self.dim {
                if multi[d] < 0 || multi[d] >= self.n_axis as i64 {
                    return 0.0;
                }
            }
            let m: Vec<usize> = multi.iter().map(|&i| i as usize).collect();
            values[self.node_at(&m)]
        };
        match self.dim {
            1 => {
                let rel = (p[0] + self.half_width) / self.spacing - 1.0;
                let i0 = rel.floor();
                let t = rel - i0;
                let a = sample(&[i0 as i64]);
                let b = sample(&[i0 as i64 + 1]);
                a * (1.0 - t) + b * t
            }
            2 => {
                let rx = (p[0] + self.half_width) / self.spacing - 1.0;
                let ry = (p[1] + self.half_width) / self.spacing - 1.0;
                let ix = rx.floor();
                let iy = ry.floor();
                let tx = rx - ix;
                let ty = ry - iy;
                let (ix, iy) = (ix as i64, iy as i64);
                let v00 = sample(&[ix, iy]);
                let v10 = sample(&[ix + 1, iy]);
                let v01 = sample(&[ix, iy + 1]);
                let v11 = sample(&[ix + 1, iy + 1]);
                v00 * (1.0 - tx) * (1.0 - ty)
                    + v10 * tx * (1.0 - ty)
                    + v01 * (1.0 - tx) * ty
                    + v11 * tx * ty
            }
            _ => unreachable!(),
        }
    }
}

#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap by distance
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra over the grid graph. `edge_weight(a, b)` must be
/// symmetric and nonnegative; sources start at distance zero.
pub fn dijkstra(
    grid: &Grid,
    sources: &[usize],
    mut edge_weight: impl FnMut(usize, usize) -> f64,
) -> Vec<f64> {
    let n = grid.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        if dist[s] > 0.0 {
            dist[s] = 0.0;
            heap.push(HeapItem { dist: 0.0, node: s });
        }
    }
    let offsets = grid.stencil_offsets();
    while let Some(HeapItem { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for off in &offsets {
            if let Some(nb) = grid.neighbor(node, off) {
                let w = edge_weight(node, nb);
                debug_assert!(w >= 0.0);
                let nd = d + w;
                if nd < dist[nb] {
                    dist[nb] = nd;
                    heap.push(HeapItem { dist: nd, node: nb });
                }
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weights_give_chebyshev_like_distance() {
        let g = Grid::new(2, 1.6, 0.1);
        let center = g.nearest_node(&[0.0, 0.0]);
        let d = dijkstra(&g, &[center], |a, b| {
            let pa = g.coords(a);
            let pb = g.coords(b);
            ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
        });
        let corner = g.nearest_node(&[1.0, 1.0]);
        // euclidean length of the 8-connected shortest path to (1,1) is the
        // diagonal, exactly representable here
        assert!((d[corner] - (2.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let g = Grid::new(2, 1.6, 0.1);
        let vals: Vec<f64> = (0..g.node_count())
            .map(|n| {
                let c = g.coords(n);
                2.0 * c[0] - 0.5 * c[1]
            })
            .collect();
        let p = [0.537, -0.221];
        let v = g.interpolate(&vals, &p);
        assert!((v - (2.0 * p[0] - 0.5 * p[1])).abs() < 1e-12);
    }
}
