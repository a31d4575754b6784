//! Conditional maximin ordering across fidelities and conditioning sets.
//!
//! All coarser fidelities are ordered before any finer one. Within fidelity r
//! each next point maximizes its distance to every lower-fidelity point plus
//! the same-fidelity points already chosen; that distance is the point's
//! lengthscale.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spatial::{distance, GridIndex, MultiFidelityLocations};

#[derive(Debug, Clone, PartialEq)]
pub struct MaximinOrdering {
    /// `order[r][rank]` is the original index of the point at `rank`.
    order: Vec<Vec<usize>>,
    /// Inverse of `order`.
    rank_of: Vec<Vec<usize>>,
    /// Lengthscales indexed by rank.
    lengthscales: Vec<Vec<f64>>,
    ell_min: f64,
}

impl MaximinOrdering {
    pub fn num_fidelities(&self) -> usize {
        self.order.len()
    }

    pub fn len(&self, r: usize) -> usize {
        self.order[r].len()
    }

    pub fn permutation(&self, r: usize) -> &[usize] {
        &self.order[r]
    }

    pub fn original_index(&self, r: usize, rank: usize) -> usize {
        self.order[r][rank]
    }

    pub fn rank(&self, r: usize, original: usize) -> usize {
        self.rank_of[r][original]
    }

    pub fn lengthscales(&self, r: usize) -> &[f64] {
        &self.lengthscales[r]
    }

    pub fn lengthscale(&self, r: usize, rank: usize) -> f64 {
        self.lengthscales[r][rank]
    }

    /// Lengthscale with the `ell_min` floor applied, for use as a power base.
    pub fn floored_lengthscale(&self, r: usize, rank: usize) -> f64 {
        self.lengthscales[r][rank].max(self.ell_min)
    }

    pub fn ell_min(&self) -> f64 {
        self.ell_min
    }

    /// Global order P as `(fidelity, original index)` pairs.
    pub fn global(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.order.iter().enumerate().flat_map(|(r, o)| o.iter().map(move |&i| (r, i)))
    }

    /// Writes `fidelity,orig_index,rank,lengthscale` rows (1-based) in global order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("fidelity,orig_index,rank,lengthscale\n");
        for (r, order) in self.order.iter().enumerate() {
            for (rank, &orig) in order.iter().enumerate() {
                writeln!(out, "{},{},{},{}", r + 1, orig + 1, rank + 1, self.lengthscales[r][rank]).unwrap();
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Coordinates of fidelity `r` rearranged into rank order.
pub fn ordered_coords(ord: &MaximinOrdering, locs: &MultiFidelityLocations, r: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(locs.flat(r).len());
    for &i in ord.permutation(r) {
        out.extend_from_slice(locs.point(r, i));
    }
    out
}

fn floor_for(diameter: f64) -> f64 {
    if diameter > 0.0 {
        1e-9 * diameter
    } else {
        1e-9
    }
}

pub fn conditional_maximin(locs: &MultiFidelityLocations) -> MaximinOrdering {
    let dim = locs.dim();
    let diameter = locs.bounding_box().diameter();
    let nfid = locs.num_fidelities();
    let mut order = Vec::with_capacity(nfid);
    let mut lengthscales = Vec::with_capacity(nfid);
    let mut lower: Vec<f64> = Vec::new();

    for r in 0..nfid {
        let nr = locs.len(r);
        let pts = locs.flat(r);
        let mut dist = vec![f64::INFINITY; nr];
        let mut taken = vec![false; nr];
        let mut ord = Vec::with_capacity(nr);
        let mut ell = Vec::with_capacity(nr);

        if r == 0 {
            let mut centroid = vec![0.0; dim];
            for p in pts.chunks_exact(dim) {
                for d in 0..dim {
                    centroid[d] += p[d];
                }
            }
            centroid.iter_mut().for_each(|c| *c /= nr as f64);
            let mut first = 0;
            let mut best = f64::INFINITY;
            for (i, p) in pts.chunks_exact(dim).enumerate() {
                let d = distance(p, &centroid);
                if d < best {
                    best = d;
                    first = i;
                }
            }
            select(first, diameter, pts, dim, &mut dist, &mut taken, &mut ord, &mut ell);
        } else {
            let mut grid = GridIndex::for_points(&lower, dim);
            (0..lower.len() / dim).for_each(|i| grid.insert(i));
            for (i, p) in pts.chunks_exact(dim).enumerate() {
                dist[i] = grid.knn(p, 1)[0].1;
            }
        }

        while ord.len() < nr {
            let mut next = usize::MAX;
            let mut best = f64::NEG_INFINITY;
            for i in 0..nr {
                // strict comparison keeps the smallest index on ties
                if !taken[i] && dist[i] > best {
                    best = dist[i];
                    next = i;
                }
            }
            select(next, best, pts, dim, &mut dist, &mut taken, &mut ord, &mut ell);
        }

        lower.extend_from_slice(pts);
        order.push(ord);
        lengthscales.push(ell);
    }

    let rank_of = order
        .iter()
        .map(|o| {
            let mut inv = vec![0; o.len()];
            for (rank, &i) in o.iter().enumerate() {
                inv[i] = rank;
            }
            inv
        })
        .collect();
    MaximinOrdering { order, rank_of, lengthscales, ell_min: floor_for(diameter) }
}

#[allow(clippy::too_many_arguments)]
fn select(
    i: usize,
    ell: f64,
    pts: &[f64],
    dim: usize,
    dist: &mut [f64],
    taken: &mut [bool],
    ord: &mut Vec<usize>,
    lengths: &mut Vec<f64>,
) {
    taken[i] = true;
    ord.push(i);
    lengths.push(ell);
    let p = &pts[i * dim..(i + 1) * dim];
    for (j, q) in pts.chunks_exact(dim).enumerate() {
        if !taken[j] {
            let d = distance(p, q);
            if d < dist[j] {
                dist[j] = d;
            }
        }
    }
}

/// Neighbor index sets for every ordered location.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSets {
    /// `same[r][rank]`: ranks of the nearest previously ordered points in r.
    same: Vec<Vec<Vec<usize>>>,
    /// `prev[r][rank]`: ranks of the nearest points in fidelity r - 1.
    prev: Vec<Vec<Vec<usize>>>,
    m_max: usize,
    mp_max: usize,
}

impl ConditioningSets {
    pub fn same(&self, r: usize, rank: usize) -> &[usize] {
        &self.same[r][rank]
    }

    pub fn prev(&self, r: usize, rank: usize) -> &[usize] {
        &self.prev[r][rank]
    }

    pub fn caps(&self) -> (usize, usize) {
        (self.m_max, self.mp_max)
    }
}

pub fn build_conditioning_sets(
    ord: &MaximinOrdering,
    locs: &MultiFidelityLocations,
    m_max: usize,
    mp_max: usize,
) -> Result<ConditioningSets> {
    if m_max < 1 || mp_max < 1 {
        return Err(Error::InvalidArgument("conditioning caps must be at least 1".into()));
    }
    let dim = locs.dim();
    let mut same = Vec::with_capacity(ord.num_fidelities());
    let mut prev = Vec::with_capacity(ord.num_fidelities());
    let mut lower_coords: Option<Vec<f64>> = None;
    for r in 0..ord.num_fidelities() {
        let coords = ordered_coords(ord, locs, r);
        let nr = ord.len(r);

        let mut grid = GridIndex::for_points(&coords, dim);
        let mut same_r = Vec::with_capacity(nr);
        for i in 0..nr {
            let p = &coords[i * dim..(i + 1) * dim];
            same_r.push(grid.knn(p, m_max).into_iter().map(|(j, _)| j).collect());
            grid.insert(i);
        }

        let prev_r = match &lower_coords {
            None => vec![Vec::new(); nr],
            Some(lc) => {
                let mut lg = GridIndex::for_points(lc, dim);
                (0..lc.len() / dim).for_each(|j| lg.insert(j));
                (0..nr)
                    .map(|i| {
                        let p = &coords[i * dim..(i + 1) * dim];
                        lg.knn(p, mp_max).into_iter().map(|(j, _)| j).collect()
                    })
                    .collect()
            }
        };
        same.push(same_r);
        prev.push(prev_r);
        lower_coords = Some(coords);
    }
    Ok(ConditioningSets { same, prev, m_max, mp_max })
}

/// For each point in global order, the `m` nearest points earlier in the
/// global order (any fidelity), as global positions ascending by distance.
pub fn global_previous_neighbors(ord: &MaximinOrdering, locs: &MultiFidelityLocations, m: usize) -> Vec<Vec<usize>> {
    let dim = locs.dim();
    let mut coords = Vec::with_capacity(locs.total() * dim);
    for r in 0..ord.num_fidelities() {
        coords.extend(ordered_coords(ord, locs, r));
    }
    let total = coords.len() / dim;
    let mut grid = GridIndex::for_points(&coords, dim);
    let mut out = Vec::with_capacity(total);
    for g in 0..total {
        let p = &coords[g * dim..(g + 1) * dim];
        out.push(grid.knn(p, m).into_iter().map(|(j, _)| j).collect());
        grid.insert(g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::Location;

    fn locs1d(sets: &[&[f64]]) -> MultiFidelityLocations {
        MultiFidelityLocations::new(
            sets.iter().map(|s| s.iter().map(|&x| Location::new(vec![x]).unwrap()).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_two_fidelities() {
        let locs = locs1d(&[&[0.5], &[0.25, 0.75]]);
        let ord = conditional_maximin(&locs);
        assert_eq!(ord.permutation(0), &[0]);
        assert_eq!(ord.permutation(1), &[0, 1]);
        assert_eq!(ord.lengthscales(1), &[0.25, 0.25]);
        assert_eq!(ord.lengthscale(0, 0), 0.5);

        let sets = build_conditioning_sets(&ord, &locs, 30, 30).unwrap();
        assert!(sets.same(1, 0).is_empty());
        assert_eq!(sets.same(1, 1), &[0]);
        assert_eq!(sets.prev(1, 1), &[0]);
        assert!(sets.prev(0, 0).is_empty());
    }

    #[test]
    fn single_point_is_floored() {
        let locs = locs1d(&[&[0.3]]);
        let ord = conditional_maximin(&locs);
        assert_eq!(ord.permutation(0), &[0]);
        assert_eq!(ord.lengthscale(0, 0), 0.0);
        assert!(ord.floored_lengthscale(0, 0) > 0.0);
    }

    #[test]
    fn unit_square_corners() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let set = pts.iter().map(|p| Location::new(p.to_vec()).unwrap()).collect();
        let locs = MultiFidelityLocations::new(vec![set]).unwrap();
        let ord = conditional_maximin(&locs);
        let p = ord.permutation(0);
        assert_eq!(p[0], 0);
        assert_eq!(p[1], 3);
        assert_eq!(p[2], 1);
        assert_eq!(ord.lengthscale(0, 1), 2f64.sqrt());
        assert_eq!(ord.lengthscale(0, 2), 1.0);
        assert_eq!(ord.lengthscale(0, 3), 1.0);
    }

    #[test]
    fn rejects_zero_caps() {
        let locs = locs1d(&[&[0.0, 1.0]]);
        let ord = conditional_maximin(&locs);
        assert!(build_conditioning_sets(&ord, &locs, 0, 1).is_err());
    }

    #[test]
    fn set_sizes_follow_caps() {
        let a: Vec<f64> = (0..7).map(|i| i as f64 / 7.0).collect();
        let b: Vec<f64> = (0..20).map(|i| i as f64 / 20.0 + 0.01).collect();
        let locs = locs1d(&[&a, &b]);
        let ord = conditional_maximin(&locs);
        let sets = build_conditioning_sets(&ord, &locs, 4, 5).unwrap();
        for i in 0..20 {
            assert_eq!(sets.same(1, i).len(), i.min(4));
            assert_eq!(sets.prev(1, i).len(), 5);
            assert!(sets.same(1, i).iter().all(|&j| j < i));
        }
    }
}
