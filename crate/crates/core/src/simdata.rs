//! Synthetic multi-fidelity scenarios on the unit square with exact truth
//! densities.
//!
//! Grids are cell-centered: cell (ix, iy) of an A x A grid sits at
//! ((ix + 0.5) / A, (iy + 0.5) / A) and is stored at index iy * A + ix. A
//! coarse cell's center is the centroid of the fine block it aggregates.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ordering::{conditional_maximin, global_previous_neighbors};
use crate::rng::substream;
use crate::spatial::{distance, Ensemble, MultiFidelityLocations};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest field sampled through a dense Cholesky factor.
pub const EXACT_GP_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    GaussianExponential,
    NonlinearMap,
    BlockAverage,
    BlockMin,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::GaussianExponential => "gaussian-exponential",
            Scenario::NonlinearMap => "nonlinear-map",
            Scenario::BlockAverage => "block-average",
            Scenario::BlockMin => "block-min",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-exponential" => Ok(Self::GaussianExponential),
            "nonlinear-map" => Ok(Self::NonlinearMap),
            "block-average" => Ok(Self::BlockAverage),
            "block-min" => Ok(Self::BlockMin),
            other => Err(Error::InvalidArgument(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub scenario: Scenario,
    /// Grid side length per fidelity, coarse to fine.
    pub grids: Vec<usize>,
    /// Range of the exponential covariance exp(-dist / range).
    pub range: f64,
    pub amplitude: f64,
    pub frequency: f64,
    /// Conditioning-set size of the sequential generator.
    pub neighbors: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let grids = match scenario {
            Scenario::BlockAverage | Scenario::BlockMin => vec![5, 10, 30],
            _ => vec![5, 10],
        };
        Self { scenario, grids, range: 0.3, amplitude: 2.0, frequency: 4.0, neighbors: 30, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() || self.grids.contains(&0) {
            return Err(Error::InvalidArgument("grid sizes must be positive".into()));
        }
        if !(self.range > 0.0) {
            return Err(Error::InvalidArgument("range must be positive".into()));
        }
        if self.neighbors == 0 {
            return Err(Error::InvalidArgument("the generator needs at least one neighbor".into()));
        }
        match self.scenario {
            Scenario::BlockAverage | Scenario::BlockMin => {
                for w in self.grids.windows(2) {
                    if w[0] >= w[1] || w[1] % w[0] != 0 {
                        return Err(Error::InvalidArgument(format!(
                            "grid {} does not coarsen evenly to grid {}",
                            w[1], w[0]
                        )));
                    }
                }
            }
            Scenario::GaussianExponential => {
                let total: usize = self.grids.iter().map(|a| a * a).sum();
                if total > EXACT_GP_CAP {
                    return Err(Error::TooLarge { n: total, cap: EXACT_GP_CAP });
                }
            }
            Scenario::NonlinearMap => {}
        }
        Ok(())
    }
}

/// Cell centers of an a x a grid, row-major.
pub fn grid_locations(a: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * a * a);
    for iy in 0..a {
        for ix in 0..a {
            out.push((ix as f64 + 0.5) / a as f64);
            out.push((iy as f64 + 0.5) / a as f64);
        }
    }
    out
}

fn coarsen(field: &[f64], a: usize, f: usize, reduce: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
    if field.len() != a * a {
        return Err(Error::InvalidArgument(format!("field of {} values is not a {a} x {a} grid", field.len())));
    }
    if f == 0 || a % f != 0 {
        return Err(Error::InvalidArgument(format!("grid {a} is not divisible by {f}")));
    }
    let c = a / f;
    let mut block = Vec::with_capacity(f * f);
    let mut out = Vec::with_capacity(c * c);
    for cy in 0..c {
        for cx in 0..c {
            block.clear();
            for dy in 0..f {
                let row = (cy * f + dy) * a + cx * f;
                block.extend_from_slice(&field[row..row + f]);
            }
            out.push(reduce(&block));
        }
    }
    Ok(out)
}

/// Block means of an a x a field over f x f blocks.
pub fn coarsen_average(field: &[f64], a: usize, f: usize) -> Result<Vec<f64>> {
    coarsen(field, a, f, |b| b.iter().sum::<f64>() / b.len() as f64)
}

/// Block minima of an a x a field over f x f blocks.
pub fn coarsen_min(field: &[f64], a: usize, f: usize) -> Result<Vec<f64>> {
    coarsen(field, a, f, |b| b.iter().copied().fold(f64::INFINITY, f64::min))
}

fn exp_cov(a: &[f64], b: &[f64], range: f64) -> f64 {
    (-distance(a, b) / range).exp()
}

/// Zero-mean unit-variance GP with covariance exp(-dist / range), sampled
/// through a dense Cholesky factor.
#[derive(Debug, Clone)]
pub struct ExactGaussian {
    chol: Cholesky<f64, nalgebra::Dyn>,
    logdet: f64,
}

impl ExactGaussian {
    pub fn new(points: &[f64], dim: usize, range: f64) -> Result<Self> {
        let n = points.len() / dim;
        if n > EXACT_GP_CAP {
            return Err(Error::TooLarge { n, cap: EXACT_GP_CAP });
        }
        if !(range > 0.0) {
            return Err(Error::InvalidArgument("range must be positive".into()));
        }
        let p = |i: usize| &points[i * dim..(i + 1) * dim];
        let cov = DMatrix::from_fn(n, n, |i, j| exp_cov(p(i), p(j), range));
        let chol = Cholesky::new(cov).ok_or(Error::DegenerateKernel { fidelity: 1, index: 1 })?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { chol, logdet })
    }

    pub fn len(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (self.chol.l() * z).iter().copied().collect()
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let mut z = DVector::from_column_slice(y);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        -0.5 * (y.len() as f64 * LN_2PI + self.logdet + z.norm_squared())
    }
}

/// n replicates (row-major n x N) of the exact exponential GP at `points`.
pub fn gen_gaussian(points: &[f64], dim: usize, range: f64, seed: u64, n: usize) -> Result<Vec<f64>> {
    let gp = ExactGaussian::new(points, dim, range)?;
    Ok((0..n).flat_map(|j| gp.sample(&mut substream(seed, "generator", j as u64))).collect())
}

/// Sequential generator y_i = f_i(y_c) + d_i eps_i in maximin order, where b_i
/// and d_i are the kriging weights and conditional sd of the exponential GP
/// on the nearest previously generated points, and
/// f_i = b_i' y_c + amplitude * sin(frequency * (b_i1 y_c1 + b_i2 y_c2)).
#[derive(Debug, Clone)]
pub struct SequentialGenerator {
    /// Original index of each generated position.
    order: Vec<usize>,
    /// Conditioning sets as positions in `order`, nearest first.
    neighbors: Vec<Vec<usize>>,
    b: Vec<Vec<f64>>,
    d: Vec<f64>,
    amplitude: f64,
    frequency: f64,
}

impl SequentialGenerator {
    /// Builds the generator over a multi-fidelity location set, visiting
    /// points in conditional maximin order. Original indices are the flat
    /// positions of the points, fidelity by fidelity.
    pub fn new(locs: &MultiFidelityLocations, range: f64, m: usize, amplitude: f64, frequency: f64) -> Result<Self> {
        if !(range > 0.0) {
            return Err(Error::InvalidArgument("range must be positive".into()));
        }
        let ord = conditional_maximin(locs);
        let offsets: Vec<usize> = (0..locs.num_fidelities()).map(|r| (0..r).map(|s| locs.len(s)).sum()).collect();
        let order: Vec<usize> = ord.global().map(|(r, i)| offsets[r] + i).collect();
        let neighbors = global_previous_neighbors(&ord, locs, m);
        let coords: Vec<&[f64]> = ord.global().map(|(r, i)| locs.point(r, i)).collect();

        let mut b = Vec::with_capacity(order.len());
        let mut d = Vec::with_capacity(order.len());
        for (g, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                b.push(Vec::new());
                d.push(1.0);
                continue;
            }
            let k = nb.len();
            let cc = DMatrix::from_fn(k, k, |i, j| exp_cov(coords[nb[i]], coords[nb[j]], range));
            let ci = DVector::from_fn(k, |i, _| exp_cov(coords[nb[i]], coords[g], range));
            let chol = Cholesky::new(cc).ok_or(Error::DegenerateKernel { fidelity: 1, index: g + 1 })?;
            let w = chol.solve(&ci);
            let var = (1.0 - ci.dot(&w)).max(0.0);
            if var <= 0.0 {
                return Err(Error::DegenerateKernel { fidelity: 1, index: g + 1 });
            }
            b.push(w.iter().copied().collect());
            d.push(var.sqrt());
        }
        Ok(Self { order, neighbors, b, d, amplitude, frequency })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Conditional sd of each generated position.
    pub fn conditional_sd(&self) -> &[f64] {
        &self.d
    }

    fn mean(&self, g: usize, gen: &[f64]) -> f64 {
        let nb = &self.neighbors[g];
        let b = &self.b[g];
        let lin: f64 = nb.iter().zip(b).map(|(&p, w)| w * gen[p]).sum();
        let lead: f64 = nb.iter().zip(b).take(2).map(|(&p, w)| w * gen[p]).sum();
        if nb.is_empty() || self.amplitude == 0.0 {
            lin
        } else {
            lin + self.amplitude * (self.frequency * lead).sin()
        }
    }

    /// One field in original (flat) order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut gen = vec![0.0; self.len()];
        for g in 0..self.len() {
            let eps: f64 = rng.sample(StandardNormal);
            gen[g] = self.mean(g, &gen) + self.d[g] * eps;
        }
        let mut out = vec![0.0; self.len()];
        for (g, &i) in self.order.iter().enumerate() {
            out[i] = gen[g];
        }
        out
    }

    /// Exact log density of a field in original (flat) order.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let gen: Vec<f64> = self.order.iter().map(|&i| y[i]).collect();
        (0..self.len())
            .map(|g| {
                let u = (gen[g] - self.mean(g, &gen)) / self.d[g];
                -0.5 * (LN_2PI + u * u) - self.d[g].ln()
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
enum TruthModel {
    Exact(ExactGaussian),
    Sequential(SequentialGenerator),
}

/// Exact density of a scenario's test fields.
#[derive(Debug, Clone)]
pub struct TruthDensity {
    model: TruthModel,
    /// Fidelities whose values enter the density (all for point-value
    /// scenarios, only the finest for block scenarios).
    fidelities: Vec<usize>,
    centers: Vec<f64>,
}

impl TruthDensity {
    /// Negative log density of one centered replicate (one row per fidelity).
    pub fn neg_log_density(&self, rows: &[&[f64]]) -> f64 {
        let y: Vec<f64> =
            self.fidelities.iter().flat_map(|&r| rows[r].iter().map(move |v| v + self.centers[r])).collect();
        -match &self.model {
            TruthModel::Exact(gp) => gp.log_density(&y),
            TruthModel::Sequential(s) => s.log_density(&y),
        }
    }

    pub fn scores(&self, test: &Ensemble) -> Vec<f64> {
        (0..test.replicates())
            .map(|j| {
                let rows: Vec<&[f64]> = (0..test.num_fidelities()).map(|r| test.row(r, j)).collect();
                self.neg_log_density(&rows)
            })
            .collect()
    }
}

/// Output of [`gen_scenario`]: centered train/test ensembles, their
/// locations, and the truth density.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub locations: MultiFidelityLocations,
    pub train: Ensemble,
    pub test: Ensemble,
    /// Per-fidelity value subtracted from both ensembles.
    pub centers: Vec<f64>,
    pub truth: TruthDensity,
}

fn split_fidelities(field: &[f64], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut off = 0;
    sizes
        .iter()
        .map(|&n| {
            off += n;
            field[off - n..off].to_vec()
        })
        .collect()
}

fn coarsen_chain(fine: &[f64], grids: &[usize], min: bool) -> Result<Vec<Vec<f64>>> {
    let mut levels = vec![fine.to_vec()];
    for w in grids.windows(2).rev() {
        let last = levels.last().unwrap();
        let f = w[1] / w[0];
        levels.push(if min { coarsen_min(last, w[1], f)? } else { coarsen_average(last, w[1], f)? });
    }
    levels.reverse();
    Ok(levels)
}

type FieldSampler<'a> = dyn Fn(u64, &str) -> Result<Vec<Vec<f64>>> + 'a;

/// Generates `n_train` training and `n_test` test fields. Replicate j of
/// either set uses its own stream, so smaller n are prefixes of larger ones.
pub fn gen_scenario(spec: &GeneratorSpec, n_train: usize, n_test: usize) -> Result<SimulatedData> {
    spec.validate()?;
    let sizes: Vec<usize> = spec.grids.iter().map(|a| a * a).collect();
    let locations = MultiFidelityLocations::from_flat(2, spec.grids.iter().map(|&a| grid_locations(a)).collect())?;
    let nfid = sizes.len();
    let stream = |name: &str, j: u64| substream(spec.seed, name, j);

    match spec.scenario {
        Scenario::GaussianExponential => {
            let all: Vec<f64> = (0..nfid).flat_map(|r| locations.flat(r).to_vec()).collect();
            let gp = ExactGaussian::new(&all, 2, spec.range)?;
            let draw = |j: u64, name: &str| Ok(split_fidelities(&gp.sample(&mut stream(name, j)), &sizes));
            let truth = TruthModel::Exact(gp.clone());
            finish(n_train, n_test, locations.clone(), &draw, truth, (0..nfid).collect())
        }
        Scenario::NonlinearMap => {
            let g = SequentialGenerator::new(&locations, spec.range, spec.neighbors, spec.amplitude, spec.frequency)?;
            let draw = |j: u64, name: &str| Ok(split_fidelities(&g.sample(&mut stream(name, j)), &sizes));
            let truth = TruthModel::Sequential(g.clone());
            finish(n_train, n_test, locations.clone(), &draw, truth, (0..nfid).collect())
        }
        Scenario::BlockAverage | Scenario::BlockMin => {
            let fine = MultiFidelityLocations::from_flat(2, vec![grid_locations(spec.grids[nfid - 1])])?;
            let g = SequentialGenerator::new(&fine, spec.range, spec.neighbors, spec.amplitude, spec.frequency)?;
            let min = spec.scenario == Scenario::BlockMin;
            let draw = |j: u64, name: &str| coarsen_chain(&g.sample(&mut stream(name, j)), &spec.grids, min);
            let truth = TruthModel::Sequential(g.clone());
            finish(n_train, n_test, locations.clone(), &draw, truth, vec![nfid - 1])
        }
    }
}

fn finish(
    n_train: usize,
    n_test: usize,
    locations: MultiFidelityLocations,
    sample: &FieldSampler<'_>,
    truth: TruthModel,
    fidelities: Vec<usize>,
) -> Result<SimulatedData> {
    let sizes = locations.sizes();
    let draw = |count: usize, name: &str| -> Result<Vec<Vec<f64>>> {
        let mut values: Vec<Vec<f64>> = sizes.iter().map(|&n| Vec::with_capacity(n * count)).collect();
        for j in 0..count {
            for (r, v) in sample(j as u64, name)?.into_iter().enumerate() {
                values[r].extend(v);
            }
        }
        Ok(values)
    };
    let mut train = draw(n_train, "train")?;
    let mut test = draw(n_test, "test")?;
    let centers: Vec<f64> = train
        .iter()
        .map(|v| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 })
        .collect();
    for (r, c) in centers.iter().enumerate() {
        train[r].iter_mut().for_each(|v| *v -= c);
        test[r].iter_mut().for_each(|v| *v -= c);
    }
    Ok(SimulatedData {
        train: Ensemble::new(n_train, sizes.clone(), train)?,
        test: Ensemble::new(n_test, sizes, test)?,
        locations,
        truth: TruthDensity { model: truth, fidelities, centers: centers.clone() },
        centers,
    })
}
