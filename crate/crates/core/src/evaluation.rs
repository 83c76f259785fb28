//! Measures how private and how useful a mechanism actually is, from
//! samples alone: grid-based Bayes-error estimates, classifier accuracy and
//! macro-F1, and empirical distortion.
//!
//! The Bayes-error estimator discretizes the region into a square grid,
//! counts obfuscated hits per (cell, class), and evaluates
//! `1 - sum_i max_j count(i, j) / total`. Finer grids and more hits per
//! original location sharpen the estimate; the full matrix over several
//! grid sizes and hit counts is the standard report shape here.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::adversarial::TrainedGenerator;
use crate::error::{Error, Result};
use crate::mechanisms::PlanarLaplace;
use crate::model::{Dataset, Location, Region};

/// A square grid over a region. Cell intervals are half-open with the tie
/// rule that a point exactly on an interior boundary belongs to the
/// lower-index cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub region: Region,
    pub cells_per_side: usize,
    pub cell_side_m: f64,
}

impl Grid {
    pub fn new(region: Region, cells_per_side: usize) -> Result<Self> {
        if cells_per_side == 0 {
            return Err(Error::invalid("cells_per_side must be >= 1"));
        }
        let cell_side_m = region.side_m / cells_per_side as f64;
        Ok(Grid { region, cells_per_side, cell_side_m })
    }

    pub fn cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    // Index along one axis; the coordinate is relative to the region center.
    fn axis_index(&self, v: f64) -> usize {
        let offset = (v + self.region.half_side()) / self.cell_side_m;
        let idx = offset.ceil() as isize - 1;
        idx.clamp(0, self.cells_per_side as isize - 1) as usize
    }

    /// Row-major cell index for a point, plus whether the point lay outside
    /// the region and was clamped into a boundary cell.
    pub fn assign_cell(&self, z: &Location) -> (usize, bool) {
        let clamped = !self.region.contains(z);
        let ix = self.axis_index(z.x_m);
        let iy = self.axis_index(z.y_m);
        (iy * self.cells_per_side + ix, clamped)
    }
}

/// Per-cell, per-class hit counts.
#[derive(Debug, Clone)]
pub struct HitTable {
    counts: Array2<u64>,
    total: u64,
}

impl HitTable {
    pub fn new(cells: usize, num_classes: usize) -> Result<Self> {
        if cells == 0 || num_classes == 0 {
            return Err(Error::invalid("cells and num_classes must be >= 1"));
        }
        Ok(HitTable { counts: Array2::zeros((cells, num_classes)), total: 0 })
    }

    pub fn record(&mut self, cell: usize, class: usize) {
        self.counts[[cell, class]] += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, cell: usize, class: usize) -> u64 {
        self.counts[[cell, class]]
    }

    /// Sums another table into this one. Shapes must agree.
    pub fn merge(&mut self, other: &HitTable) -> Result<()> {
        if self.counts.dim() != other.counts.dim() {
            return Err(Error::dim("hit tables have different shapes"));
        }
        self.counts += &other.counts;
        self.total += other.total;
        Ok(())
    }
}

/// `1 - sum over cells of max over classes of count / total`: the error of
/// the best guesser that sees only the cell. Empty cells contribute nothing.
pub fn bayes_error_grid(h: &HitTable) -> Result<f64> {
    if h.total == 0 {
        return Err(Error::data("hit table is empty"));
    }
    let mut sum_max = 0u64;
    for row in h.counts.rows() {
        sum_max += row.iter().copied().max().unwrap_or(0);
    }
    Ok(1.0 - sum_max as f64 / h.total as f64)
}

/// Anything that maps true locations to obfuscated ones, one draw per input.
pub trait Obfuscator {
    fn obfuscate_batch(&self, locs: &[Location], rng: &mut ChaCha8Rng) -> Result<Vec<Location>>;
}

impl Obfuscator for TrainedGenerator {
    fn obfuscate_batch(&self, locs: &[Location], rng: &mut ChaCha8Rng) -> Result<Vec<Location>> {
        self.apply(locs, rng)
    }
}

impl Obfuscator for PlanarLaplace {
    fn obfuscate_batch(&self, locs: &[Location], rng: &mut ChaCha8Rng) -> Result<Vec<Location>> {
        Ok(locs.iter().map(|w| self.sample(w, rng)).collect())
    }
}

/// Reports locations unchanged; the no-privacy baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMechanism;

impl Obfuscator for IdentityMechanism {
    fn obfuscate_batch(&self, locs: &[Location], _rng: &mut ChaCha8Rng) -> Result<Vec<Location>> {
        Ok(locs.to_vec())
    }
}

/// Bayes-error estimates across grid sizes and hits-per-original counts.
/// `values[[i, j]]` pairs `obf_counts[i]` with `grids[j]`.
#[derive(Debug, Clone)]
pub struct BayesReport {
    pub cells_per_side: Vec<usize>,
    pub obf_counts: Vec<usize>,
    pub values: Array2<f64>,
    /// Obfuscated samples that landed outside the region (over the full
    /// max-count draw) and were clamped into boundary cells.
    pub clamped: u64,
    pub samples: u64,
}

impl BayesReport {
    /// Estimate for a given (hits per original, cells per side) pair.
    pub fn value(&self, obf_count: usize, cells_per_side: usize) -> Option<f64> {
        let i = self.obf_counts.iter().position(|&c| c == obf_count)?;
        let j = self.cells_per_side.iter().position(|&g| g == cells_per_side)?;
        Some(self.values[[i, j]])
    }
}

/// Draws `max(obf_counts)` obfuscated hits per original location, then
/// estimates the Bayes error for every (grid, count) pair; smaller counts
/// reuse the first draws so the whole matrix comes from one pass.
pub fn evaluate_mechanism(
    mech: &dyn Obfuscator,
    data: &Dataset,
    grids: &[Grid],
    obf_counts: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<BayesReport> {
    if grids.is_empty() || obf_counts.is_empty() {
        return Err(Error::invalid("need at least one grid and one count"));
    }
    if obf_counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid("obfuscation counts must be >= 1"));
    }
    if data.samples.is_empty() {
        return Err(Error::data("dataset is empty"));
    }
    let n = data.samples.len();
    let max_count = *obf_counts.iter().max().unwrap();

    // One draw pass, laid out per-original so prefixes are valid subsamples.
    let originals: Vec<Location> = data.samples.iter().map(|s| s.loc).collect();
    let mut z_all: Vec<Location> = Vec::with_capacity(n * max_count);
    for _ in 0..max_count {
        z_all.extend(mech.obfuscate_batch(&originals, rng)?);
    }

    let region = &data.region;
    let clamped = z_all.iter().filter(|z| !region.contains(z)).count() as u64;

    let mut values = Array2::zeros((obf_counts.len(), grids.len()));
    for (j, grid) in grids.iter().enumerate() {
        // Cell assignment is count-independent, so compute it once per grid.
        let cells: Vec<usize> =
            z_all.iter().map(|z| grid.assign_cell(z).0).collect();
        for (i, &count) in obf_counts.iter().enumerate() {
            let mut table = HitTable::new(grid.cells(), data.num_classes)?;
            for r in 0..count {
                let base = r * n;
                for (o, s) in data.samples.iter().enumerate() {
                    table.record(cells[base + o], s.class_id);
                }
            }
            values[[i, j]] = bayes_error_grid(&table)?;
        }
    }

    Ok(BayesReport {
        cells_per_side: grids.iter().map(|g| g.cells_per_side).collect(),
        obf_counts: obf_counts.to_vec(),
        values,
        clamped,
        samples: (n * max_count) as u64,
    })
}

/// Plain accuracy and macro-averaged F1 over `num_classes` classes. A class
/// with no true or predicted instances contributes an F1 of zero.
pub fn accuracy_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::dim("pred and truth must be non-empty and equal length"));
    }
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be >= 1"));
    }
    if let Some(&c) = pred.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(Error::invalid(format!("label {c} out of range {num_classes}")));
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fne = vec![0u64; num_classes];
    let mut hits = 0u64;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[t] += 1;
            hits += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let mut f1_sum = 0.0;
    for c in 0..num_classes {
        let denom = 2 * tp[c] + fp[c] + fne[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok((hits as f64 / pred.len() as f64, f1_sum / num_classes as f64))
}

/// Mean Euclidean displacement over (original, obfuscated) pairs, meters.
pub fn empirical_distortion(pairs: &[(Location, Location)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::data("no pairs"));
    }
    let total: f64 = pairs.iter().map(|(w, z)| w.distance(z)).sum();
    Ok(total / pairs.len() as f64)
}
