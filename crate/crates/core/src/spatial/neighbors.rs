use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::distance;
use crate::error::{Error, Result};

/// Candidate ordered by (distance, index); the heap keeps the worst on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    #[inline]
    fn offer(&mut self, dist: f64, index: usize) {
        if self.k == 0 {
            return;
        }
        let c = Candidate { dist, index };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if c < *self.heap.peek().unwrap() {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    fn worst(&self) -> Option<f64> {
        if self.heap.len() == self.k {
            self.heap.peek().map(|c| c.dist)
        } else {
            None
        }
    }

    fn into_sorted(self) -> Vec<(usize, f64)> {
        self.heap.into_sorted_vec().into_iter().map(|c| (c.index, c.dist)).collect()
    }
}

/// Exhaustive k-nearest search over a flat pool (`dim` coordinates per point).
/// Returns `(index, distance)` ascending by distance, ties to the smaller index.
pub fn brute_force_knn(query: &[f64], pool: &[f64], dim: usize, k: usize) -> Vec<(usize, f64)> {
    let mut top = TopK::new(k);
    for (i, p) in pool.chunks_exact(dim).enumerate() {
        top.offer(distance(query, p), i);
    }
    top.into_sorted()
}

/// Indices of the `k` pool points nearest to `query`, ascending by distance
/// with ties broken by the smaller index.
pub fn nearest_neighbors(query: &[f64], pool: &[f64], dim: usize, k: usize) -> Result<Vec<usize>> {
    let size = pool.len() / dim;
    if k > size {
        return Err(Error::TooManyNeighbors { k, pool: size });
    }
    let hits = if size > 256 && GridIndex::supports(dim) {
        let mut grid = GridIndex::for_points(pool, dim);
        for i in 0..size {
            grid.insert(i);
        }
        grid.knn(query, k)
    } else {
        brute_force_knn(query, pool, dim, k)
    };
    Ok(hits.into_iter().map(|(i, _)| i).collect())
}

/// Uniform-grid bucketing over a fixed point pool with incremental insertion.
///
/// Queries only see points that have been inserted, which lets the ordering
/// code search among previously ordered points. Results are identical to
/// [`brute_force_knn`] over the inserted subset.
pub struct GridIndex<'a> {
    points: &'a [f64],
    dim: usize,
    origin: Vec<f64>,
    cell: f64,
    shape: Vec<usize>,
    buckets: Vec<Vec<u32>>,
    inserted: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    pub fn supports(dim: usize) -> bool {
        (1..=3).contains(&dim)
    }

    /// Builds an empty index sized for every point in `points`.
    pub fn for_points(points: &'a [f64], dim: usize) -> Self {
        let count = (points.len() / dim).max(1);
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points.chunks_exact(dim) {
            for d in 0..dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if points.is_empty() {
            lo = vec![0.0; dim];
            hi = vec![1.0; dim];
        }
        let extent = (0..dim).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
        let per_dim = ((count as f64 / 2.0).powf(1.0 / dim as f64).ceil() as usize).max(1);
        let cell = if extent > 0.0 { extent / per_dim as f64 } else { 1.0 };
        let shape: Vec<usize> = (0..dim)
            .map(|d| (((hi[d] - lo[d]) / cell).floor() as usize + 1).max(1))
            .collect();
        let total: usize = shape.iter().product();
        Self {
            points,
            dim,
            origin: lo,
            cell,
            shape,
            buckets: vec![Vec::new(); total],
            inserted: Vec::new(),
        }
    }

    fn cell_of(&self, p: &[f64]) -> Vec<isize> {
        (0..self.dim)
            .map(|d| {
                let c = ((p[d] - self.origin[d]) / self.cell).floor();
                (c.max(0.0) as isize).min(self.shape[d] as isize - 1)
            })
            .collect()
    }

    fn flat_index(&self, cell: &[isize]) -> usize {
        let mut idx = 0;
        for d in (0..self.dim).rev() {
            idx = idx * self.shape[d] + cell[d] as usize;
        }
        idx
    }

    pub fn insert(&mut self, i: usize) {
        let p = &self.points[i * self.dim..(i + 1) * self.dim];
        let c = self.cell_of(p);
        let f = self.flat_index(&c);
        self.buckets[f].push(i as u32);
        self.inserted.push(i);
    }

    pub fn len(&self) -> usize {
        self.inserted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inserted.is_empty()
    }

    /// k nearest inserted points as `(index, distance)`.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        if !Self::supports(self.dim) || self.len() <= 32 {
            let mut top = TopK::new(k);
            for &i in &self.inserted {
                top.offer(distance(query, &self.points[i * self.dim..(i + 1) * self.dim]), i);
            }
            return top.into_sorted();
        }
        let center = self.cell_of(query);
        let max_ring = self.shape.iter().copied().max().unwrap() as isize;
        let mut top = TopK::new(k);
        let mut cell = vec![0isize; self.dim];
        for ring in 0..=max_ring {
            self.visit_ring(&center, ring, &mut cell, 0, 0, &mut top, query);
            // points in rings > `ring` are at least `ring * cell` away
            if let Some(w) = top.worst() {
                if w < ring as f64 * self.cell {
                    break;
                }
            }
        }
        top.into_sorted()
    }

    #[allow(clippy::too_many_arguments)]
    fn visit_ring(
        &self,
        center: &[isize],
        ring: isize,
        cell: &mut Vec<isize>,
        d: usize,
        cheb: isize,
        top: &mut TopK,
        query: &[f64],
    ) {
        if d == self.dim {
            if cheb != ring {
                return;
            }
            for &i in &self.buckets[self.flat_index(cell)] {
                let i = i as usize;
                top.offer(distance(query, &self.points[i * self.dim..(i + 1) * self.dim]), i);
            }
            return;
        }
        let lo = (center[d] - ring).max(0);
        let hi = (center[d] + ring).min(self.shape[d] as isize - 1);
        for c in lo..=hi {
            let off = (c - center[d]).abs();
            cell[d] = c;
            self.visit_ring(center, ring, cell, d + 1, cheb.max(off), top, query);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_example() {
        // distances 0.5, 0.1, 0.4
        let pool = [0.0, 0.4, 0.9];
        assert_eq!(nearest_neighbors(&[0.5], &pool, 1, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn exact_hit_and_ties() {
        let pool = [0.0, 0.0, 1.0, 0.0, 2.0, 0.0];
        assert_eq!(nearest_neighbors(&[1.0, 0.0], &pool, 2, 1).unwrap(), vec![1]);
        // equidistant from 0 and 2
        assert_eq!(nearest_neighbors(&[1.0, 0.0], &[0.0, 0.0, 2.0, 0.0], 2, 1).unwrap(), vec![0]);
    }

    #[test]
    fn too_many_neighbors() {
        assert!(matches!(
            nearest_neighbors(&[0.0], &[1.0], 1, 2),
            Err(Error::TooManyNeighbors { k: 2, pool: 1 })
        ));
    }

    /// O(|pool| k) selection oracle, independent of the heap.
    fn selection_oracle(q: &[f64], pool: &[f64], dim: usize, k: usize) -> Vec<usize> {
        let mut taken = vec![false; pool.len() / dim];
        let mut out = Vec::new();
        for _ in 0..k {
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in pool.chunks_exact(dim).enumerate() {
                if taken[i] {
                    continue;
                }
                let d = distance(q, p);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            let (_, i) = best.unwrap();
            taken[i] = true;
            out.push(i);
        }
        out
    }

    #[test]
    fn grid_matches_oracle_on_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000 {
            let dim = 1 + trial % 3;
            let size = rng.random_range(1..400);
            // snap some coordinates to a lattice to create exact ties
            let pool: Vec<f64> = (0..size * dim)
                .map(|_| {
                    if trial % 4 == 0 {
                        rng.random_range(0..8) as f64 / 8.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.2..1.2)).collect();
            let k = rng.random_range(0..=size.min(20));
            let expect = selection_oracle(&q, &pool, dim, k);
            assert_eq!(nearest_neighbors(&q, &pool, dim, k).unwrap(), expect, "trial {trial}");
            let mut grid = GridIndex::for_points(&pool, dim);
            (0..size).for_each(|i| grid.insert(i));
            let got: Vec<usize> = grid.knn(&q, k).into_iter().map(|(i, _)| i).collect();
            assert_eq!(got, expect, "grid trial {trial}");
        }
    }
}
