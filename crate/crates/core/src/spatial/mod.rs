//! Location sets, ensembles, and neighbor queries.
//!
//! Fidelities are indexed from 0 in the API (0 = coarsest) and from 1 in
//! files and error messages.

mod io;
mod neighbors;

pub use io::{load_ensemble, load_locations, write_ensemble, write_ensemble_fidelity, write_locations};
pub use neighbors::{brute_force_knn, nearest_neighbors, GridIndex};

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Euclidean distance between two coordinate slices of equal length.
#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A single point in the spatial domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    coords: Vec<f64>,
}

impl Location {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("location needs at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoundingBox {
    pub fn diameter(&self) -> f64 {
        distance(&self.min, &self.max)
    }
}

/// Location sets S_1..S_R, stored flat per fidelity.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFidelityLocations {
    dim: usize,
    coords: Vec<Vec<f64>>,
    bbox: BoundingBox,
}

impl MultiFidelityLocations {
    /// Validates and builds the location sets. `sets[0]` is the coarsest fidelity.
    pub fn new(sets: Vec<Vec<Location>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::InvalidArgument("at least one fidelity is required".into()));
        }
        let dim = sets
            .iter()
            .flatten()
            .next()
            .map(Location::dim)
            .ok_or(Error::EmptyFidelity(1))?;
        let mut coords = Vec::with_capacity(sets.len());
        for (r, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::EmptyFidelity(r + 1));
            }
            let mut flat = Vec::with_capacity(set.len() * dim);
            for loc in set {
                if loc.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: loc.dim(), line: 0 });
                }
                flat.extend_from_slice(loc.coords());
            }
            coords.push(flat);
        }
        Self::from_flat(dim, coords)
    }

    pub fn from_flat(dim: usize, coords: Vec<Vec<f64>>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for (r, flat) in coords.iter().enumerate() {
            if flat.is_empty() {
                return Err(Error::EmptyFidelity(r + 1));
            }
            let mut seen = HashSet::with_capacity(flat.len() / dim);
            for (i, p) in flat.chunks_exact(dim).enumerate() {
                // +0.0 folds -0.0 onto 0.0 so equality is by value
                let key: Vec<u64> = p.iter().map(|c| (c + 0.0).to_bits()).collect();
                if !seen.insert(key) {
                    return Err(Error::DuplicateLocation { fidelity: r + 1, index: i + 1 });
                }
                for d in 0..dim {
                    min[d] = min[d].min(p[d]);
                    max[d] = max[d].max(p[d]);
                }
            }
        }
        Ok(Self { dim, coords, bbox: BoundingBox { min, max } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_fidelities(&self) -> usize {
        self.coords.len()
    }

    /// N_r for fidelity `r` (0-based).
    pub fn len(&self, r: usize) -> usize {
        self.coords[r].len() / self.dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.num_fidelities()).map(|r| self.len(r)).collect()
    }

    pub fn total(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn point(&self, r: usize, i: usize) -> &[f64] {
        &self.coords[r][i * self.dim..(i + 1) * self.dim]
    }

    /// Flat coordinates of fidelity `r`, `dim` values per point.
    pub fn flat(&self, r: usize) -> &[f64] {
        &self.coords[r]
    }

    pub fn bounding_box(&self) -> &BoundingBox {
        &self.bbox
    }
}

/// Replicates of the field, one n x N_r row-major matrix per fidelity in
/// original location order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    n: usize,
    sizes: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn new(n: usize, sizes: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        if sizes.len() != values.len() {
            return Err(Error::InvalidArgument("one value matrix per fidelity is required".into()));
        }
        for (r, (&nr, v)) in sizes.iter().zip(&values).enumerate() {
            if v.len() != n * nr {
                return Err(Error::ColumnCount {
                    fidelity: r + 1,
                    expected: nr,
                    found: if n == 0 { 0 } else { v.len() / n },
                });
            }
            if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { fidelity: r + 1, row: pos / nr + 1, col: pos % nr + 1 });
            }
        }
        Ok(Self { n, sizes, values })
    }

    /// Checks that column counts agree with a location set.
    pub fn check_against(&self, locs: &MultiFidelityLocations) -> Result<()> {
        if self.sizes.len() != locs.num_fidelities() {
            return Err(Error::InvalidArgument(format!(
                "ensemble has {} fidelities, locations have {}",
                self.sizes.len(),
                locs.num_fidelities()
            )));
        }
        for (r, &nr) in self.sizes.iter().enumerate() {
            if nr != locs.len(r) {
                return Err(Error::ColumnCount { fidelity: r + 1, expected: locs.len(r), found: nr });
            }
        }
        Ok(())
    }

    pub fn replicates(&self) -> usize {
        self.n
    }

    pub fn num_fidelities(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Row-major n x N_r values of fidelity `r`.
    pub fn fidelity(&self, r: usize) -> &[f64] {
        &self.values[r]
    }

    pub fn row(&self, r: usize, rep: usize) -> &[f64] {
        let nr = self.sizes[r];
        &self.values[r][rep * nr..(rep + 1) * nr]
    }

    pub fn get(&self, r: usize, rep: usize, i: usize) -> f64 {
        self.values[r][rep * self.sizes[r] + i]
    }

    /// Keeps the first `count` replicates.
    pub fn head(&self, count: usize) -> Ensemble {
        let count = count.min(self.n);
        let values = self
            .sizes
            .iter()
            .zip(&self.values)
            .map(|(&nr, v)| v[..count * nr].to_vec())
            .collect();
        Ensemble { n: count, sizes: self.sizes.clone(), values }
    }

    /// Keeps fidelities `0..count`.
    pub fn leading_fidelities(&self, count: usize) -> Ensemble {
        Ensemble {
            n: self.n,
            sizes: self.sizes[..count].to_vec(),
            values: self.values[..count].to_vec(),
        }
    }

    pub fn into_values(self) -> Vec<Vec<f64>> {
        self.values
    }
}

/// Per-location mean and standard deviation used by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationTable {
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

impl StandardizationTable {
    pub fn inverse(&self, ens: &Ensemble) -> Result<Ensemble> {
        let values = transform_columns(ens, |r, i, x| x * self.sd[r][i] + self.mean[r][i]);
        Ensemble::new(ens.replicates(), ens.sizes().to_vec(), values)
    }

    pub fn apply(&self, ens: &Ensemble) -> Result<Ensemble> {
        let values = transform_columns(ens, |r, i, x| (x - self.mean[r][i]) / self.sd[r][i]);
        Ensemble::new(ens.replicates(), ens.sizes().to_vec(), values)
    }
}

fn transform_columns(ens: &Ensemble, f: impl Fn(usize, usize, f64) -> f64) -> Vec<Vec<f64>> {
    (0..ens.num_fidelities())
        .map(|r| {
            let nr = ens.sizes()[r];
            ens.fidelity(r).iter().enumerate().map(|(k, &x)| f(r, k % nr, x)).collect()
        })
        .collect()
}

/// Standardizes every location to zero mean and unit sd (divisor n - 1).
pub fn standardize(ens: &Ensemble) -> Result<(Ensemble, StandardizationTable)> {
    let n = ens.replicates();
    if n < 2 {
        return Err(Error::InvalidArgument("standardize needs at least two replicates".into()));
    }
    let mut mean = Vec::new();
    let mut sd = Vec::new();
    for r in 0..ens.num_fidelities() {
        let nr = ens.sizes()[r];
        let vals = ens.fidelity(r);
        let mut m = vec![0.0; nr];
        let mut s = vec![0.0; nr];
        for i in 0..nr {
            let mu = (0..n).map(|j| vals[j * nr + i]).sum::<f64>() / n as f64;
            let var = (0..n).map(|j| (vals[j * nr + i] - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sdev = var.sqrt();
            if sdev < 1e-12 {
                return Err(Error::ZeroVariance { fidelity: r + 1, location: i + 1 });
            }
            m[i] = mu;
            s[i] = sdev;
        }
        mean.push(m);
        sd.push(s);
    }
    let table = StandardizationTable { mean, sd };
    Ok((table.apply(ens)?, table))
}
