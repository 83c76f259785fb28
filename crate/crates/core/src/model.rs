//! Formal objects of the privacy game: locations, regions, labeled datasets,
//! probability tables, and the joint distribution they induce.
//!
//! The game is a chain identity → true location → reported location →
//! predicted identity. With a data model `P(X,W)`, an obfuscation channel
//! `P(Z|W)` and a prediction channel `P(Y|Z)`, the full joint factorizes as
//! `P(x,w,z,y) = P(x,w)·P(z|w)·P(y|z)`; everything downstream (marginals,
//! posteriors, error measures) derives from that product.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks on probability vectors and table rows.
pub const PROB_TOL: f64 = 1e-9;

/// A point in local metric coordinates: east/north offsets in meters from
/// the region center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub x_m: f64,
    pub y_m: f64,
}

impl Location {
    pub fn new(x_m: f64, y_m: f64) -> Self {
        Location { x_m, y_m }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }

    /// Normalized coordinates in [-1, 1]² relative to a square region side:
    /// `2·meters/side`.
    pub fn normalized(&self, side_m: f64) -> [f64; 2] {
        [2.0 * self.x_m / side_m, 2.0 * self.y_m / side_m]
    }

    pub fn from_normalized(nx: f64, ny: f64, side_m: f64) -> Self {
        Location::new(nx * side_m / 2.0, ny * side_m / 2.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x_m.is_finite() && self.y_m.is_finite()
    }
}

/// Square geographic region: center in degrees, side in meters. All metric
/// coordinates in a dataset are offsets from this center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center_lat: f64,
    pub center_lon: f64,
    pub side_m: f64,
}

impl Region {
    pub fn new(center_lat: f64, center_lon: f64, side_m: f64) -> Result<Self> {
        if !(side_m.is_finite() && side_m > 0.0) {
            return Err(Error::invalid(format!("region side must be > 0, got {side_m}")));
        }
        if !(center_lat.is_finite() && center_lat.abs() <= 90.0) {
            return Err(Error::invalid(format!("latitude out of range: {center_lat}")));
        }
        if !(center_lon.is_finite() && center_lon.abs() <= 180.0) {
            return Err(Error::invalid(format!("longitude out of range: {center_lon}")));
        }
        Ok(Region { center_lat, center_lon, side_m })
    }

    pub fn half_side(&self) -> f64 {
        self.side_m / 2.0
    }

    pub fn contains(&self, loc: &Location) -> bool {
        loc.x_m.abs() <= self.half_side() && loc.y_m.abs() <= self.half_side()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::invalid(format!("unknown split tag {other:?}"))),
        }
    }
}

/// One observation: which class produced it and where.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub class_id: usize,
    pub loc: Location,
}

/// A labeled point set over a region, tagged with its split role.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    pub region: Region,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(
        samples: Vec<LabeledSample>,
        num_classes: usize,
        region: Region,
        split_tag: SplitTag,
    ) -> Result<Self> {
        let ds = Dataset { samples, num_classes, region, split_tag };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks class ids, finiteness, region containment, and (for the train
    /// split) that every class is represented.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::data("dataset declares zero classes"));
        }
        if self.samples.is_empty() {
            return Err(Error::data(format!("{} split is empty", self.split_tag)));
        }
        let mut seen = vec![false; self.num_classes];
        for (i, s) in self.samples.iter().enumerate() {
            if s.class_id >= self.num_classes {
                return Err(Error::data(format!(
                    "sample {i}: class_id {} outside [0, {})",
                    s.class_id, self.num_classes
                )));
            }
            if !s.loc.is_finite() {
                return Err(Error::data(format!("sample {i}: non-finite coordinates")));
            }
            if !self.region.contains(&s.loc) {
                return Err(Error::data(format!(
                    "sample {i}: ({}, {}) outside region half-side {}",
                    s.loc.x_m,
                    s.loc.y_m,
                    self.region.half_side()
                )));
            }
            seen[s.class_id] = true;
        }
        if self.split_tag == SplitTag::Train {
            if let Some(missing) = seen.iter().position(|&b| !b) {
                return Err(Error::data(format!("class {missing} absent from train split")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for s in &self.samples {
            counts[s.class_id] += 1;
        }
        counts
    }

    /// Empirical class prior: each sample weighs 1/N.
    pub fn class_prior(&self) -> DiscreteDist {
        let counts = self.class_counts();
        let n = self.samples.len() as f64;
        DiscreteDist::new(counts.iter().map(|&c| c as f64 / n).collect())
            .expect("counts normalize to a distribution")
    }

    /// Writes `class_id,x_m,y_m` rows plus a `.meta.toml` sidecar next to the
    /// CSV. `provenance` becomes a `#` comment line above the header.
    pub fn write_csv(&self, path: &Path, provenance: &str, seed: u64) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "# {provenance}")?;
        writeln!(w, "class_id,x_m,y_m")?;
        for s in &self.samples {
            writeln!(w, "{},{},{}", s.class_id, s.loc.x_m, s.loc.y_m)?;
        }
        w.flush()?;
        let meta = DatasetMeta {
            num_classes: self.num_classes,
            count: self.samples.len(),
            split: self.split_tag,
            seed,
            region: self.region,
        };
        fs::write(
            sidecar_path(path),
            toml::to_string(&meta).map_err(|e| Error::invalid(format!("sidecar encode: {e}")))?,
        )?;
        Ok(())
    }
}

/// Sidecar metadata stored beside each dataset CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub count: usize,
    pub split: SplitTag,
    pub seed: u64,
    pub region: Region,
}

/// `foo.csv` → `foo.meta.toml`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

/// Reads a dataset CSV written by [`Dataset::write_csv`], using its sidecar
/// for region/split/class information.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let meta_path = sidecar_path(path);
    let meta_text = fs::read_to_string(&meta_path)?;
    let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut header_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != "class_id,x_m,y_m" {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected header class_id,x_m,y_m, got {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg,
        };
        let class_id: usize = fields
            .next()
            .ok_or_else(|| parse_err("missing class_id".into()))?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("class_id: {e}")))?;
        let x_m: f64 = fields
            .next()
            .ok_or_else(|| parse_err("missing x_m".into()))?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("x_m: {e}")))?;
        let y_m: f64 = fields
            .next()
            .ok_or_else(|| parse_err("missing y_m".into()))?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("y_m: {e}")))?;
        samples.push(LabeledSample { class_id, loc: Location::new(x_m, y_m) });
    }
    if samples.len() != meta.count {
        return Err(Error::data(format!(
            "{} rows in CSV but sidecar declares {}",
            samples.len(),
            meta.count
        )));
    }
    Dataset::new(samples, meta.num_classes, meta.region, meta.split)
}

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid(format!("probs[{i}] = {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(DiscreteDist { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs at least one outcome");
        DiscreteDist { probs: vec![1.0 / n as f64; n] }
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("all counts zero"));
        }
        Ok(DiscreteDist {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(0.0, f64::max)
    }
}

/// A row-stochastic conditional table `P(col | row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTable {
    m: Array2<f64>,
}

impl CondTable {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::dim("conditional table must be non-empty"));
        }
        for (i, row) in m.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::invalid(format!("table[{i}][{j}] = {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(CondTable { m })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("ragged rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let m = Array2::from_shape_vec((r, c), flat)
            .map_err(|e| Error::dim(e.to_string()))?;
        CondTable::new(m)
    }

    pub fn identity(n: usize) -> Self {
        CondTable { m: Array2::eye(n) }
    }

    /// Channel sending every input to the single output `col`.
    pub fn constant_column(rows: usize, cols: usize, col: usize) -> Self {
        assert!(col < cols);
        let mut m = Array2::zeros((rows, cols));
        m.column_mut(col).fill(1.0);
        CondTable { m }
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.m.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    /// Convex combination `λ·a + (1−λ)·b`. Row-stochasticity is preserved
    /// exactly up to rounding, so the constructor check passes.
    pub fn mix(a: &CondTable, b: &CondTable, lambda: f64) -> Result<CondTable> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::dim(format!(
                "mix of {}x{} with {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("mix weight {lambda} outside [0,1]")));
        }
        CondTable::new(lambda * &a.m + (1.0 - lambda) * &b.m)
    }

    /// Chains this table with a following one: `(self ∘ next)(c|a) =
    /// Σ_b self(b|a)·next(c|b)`.
    pub fn compose(&self, next: &CondTable) -> Result<CondTable> {
        if self.cols() != next.rows() {
            return Err(Error::dim(format!(
                "compose {}x{} with {}x{}",
                self.rows(),
                self.cols(),
                next.rows(),
                next.cols()
            )));
        }
        CondTable::new(self.m.dot(&next.m))
    }
}

/// Draws an index from a probability row using one uniform draw in [0,1).
/// Cumulative walk; rounding dust at the tail falls to the last nonzero entry.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    debug_assert!((0.0..1.0).contains(&u));
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_nonzero
}

/// Joint distribution over (identity X, true location W, reported location Z,
/// predicted identity Y), stored with axes in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    p: Array4<f64>,
}

/// Posterior `P(X|Z)` as a table with one row per reported location. Outputs
/// with zero marginal mass get a uniform row and are listed in
/// `zero_mass_outputs`; downstream decision rules must not consult them.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub table: CondTable,
    pub zero_mass_outputs: Vec<usize>,
}

impl JointTable {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.p.dim();
        (d.0, d.1, d.2, d.3)
    }

    pub fn prob(&self, x: usize, w: usize, z: usize, y: usize) -> f64 {
        self.p[[x, w, z, y]]
    }

    pub fn sum(&self) -> f64 {
        self.p.sum()
    }

    pub fn marginal_x(&self) -> DiscreteDist {
        self.marginal(Axis(0))
    }

    pub fn marginal_w(&self) -> DiscreteDist {
        self.marginal(Axis(1))
    }

    pub fn marginal_z(&self) -> DiscreteDist {
        self.marginal(Axis(2))
    }

    pub fn marginal_y(&self) -> DiscreteDist {
        self.marginal(Axis(3))
    }

    fn marginal(&self, keep: Axis) -> DiscreteDist {
        let mut probs = vec![0.0; self.p.len_of(keep)];
        for (idx, &v) in self.p.indexed_iter() {
            let i = [idx.0, idx.1, idx.2, idx.3][keep.0];
            probs[i] += v;
        }
        // Rounding can leave the sum a hair off one; the tolerance absorbs it.
        DiscreteDist::new(probs).expect("marginal of a valid joint")
    }

    /// Pairwise joint P(x, z).
    pub fn pair_xz(&self) -> Array2<f64> {
        self.p.sum_axis(Axis(3)).sum_axis(Axis(1))
    }

    /// Pairwise joint P(x, y).
    pub fn pair_xy(&self) -> Array2<f64> {
        self.p.sum_axis(Axis(2)).sum_axis(Axis(1))
    }

    /// Pairwise joint P(z, y).
    pub fn pair_zy(&self) -> Array2<f64> {
        self.p.sum_axis(Axis(1)).sum_axis(Axis(0))
    }

    /// Pairwise joint P(x, w).
    pub fn pair_xw(&self) -> Array2<f64> {
        self.p.sum_axis(Axis(3)).sum_axis(Axis(2))
    }

    /// Bayes inversion of P(x, z): row per reported location z.
    pub fn posterior_x_given_z(&self) -> Posterior {
        posterior_from_pair(&self.pair_xz())
    }
}

/// Bayes inversion of a pairwise joint `P(a, b)` into `P(a | b)` with one row
/// per value of `b`. Zero-mass values of `b` get a uniform row and a flag.
pub fn posterior_from_pair(pair_ab: &Array2<f64>) -> Posterior {
    let (na, nb) = pair_ab.dim();
    let mut rows = Array2::zeros((nb, na));
    let mut zero_mass = Vec::new();
    for b in 0..nb {
        let mass: f64 = (0..na).map(|a| pair_ab[[a, b]]).sum();
        if mass == 0.0 {
            rows.row_mut(b).fill(1.0 / na as f64);
            zero_mass.push(b);
        } else {
            for a in 0..na {
                rows[[b, a]] = pair_ab[[a, b]] / mass;
            }
        }
    }
    // Normalize away division dust so the constructor's tolerance holds.
    for mut row in rows.rows_mut() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }
    Posterior {
        table: CondTable::new(rows).expect("posterior rows normalize"),
        zero_mass_outputs: zero_mass,
    }
}

/// Builds the full joint `P(x,w,z,y) = P(x,w)·P(z|w)·P(y|z)`.
///
/// `p_xw` is the empirical data model (sums to one), `mech` the obfuscation
/// channel over locations, `pred` the prediction channel over reports.
pub fn derive_joint(p_xw: &Array2<f64>, mech: &CondTable, pred: &CondTable) -> Result<JointTable> {
    let (nx, nw) = p_xw.dim();
    if nw != mech.rows() {
        return Err(Error::dim(format!(
            "data model has {nw} locations but mechanism has {} rows",
            mech.rows()
        )));
    }
    if mech.cols() != pred.rows() {
        return Err(Error::dim(format!(
            "mechanism outputs {} values but predictor has {} rows",
            mech.cols(),
            pred.rows()
        )));
    }
    let mut sum = 0.0;
    for (idx, &v) in p_xw.indexed_iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(format!("p_xw[{idx:?}] = {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!("data model sums to {sum}, not 1")));
    }
    let (nz, ny) = (mech.cols(), pred.cols());
    let p = Array4::from_shape_fn((nx, nw, nz, ny), |(x, w, z, y)| {
        p_xw[[x, w]] * mech.get(w, z) * pred.get(z, y)
    });
    Ok(JointTable { p })
}

/// Expected distortion `Σ_w Σ_z P(w)·mech(z|w)·loss(w,z)` of a channel under
/// a prior on true locations. `loss` must be non-negative.
pub fn expected_distortion<F>(p_w: &DiscreteDist, mech: &CondTable, loss: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    if p_w.len() != mech.rows() {
        return Err(Error::dim(format!(
            "prior over {} locations but mechanism has {} rows",
            p_w.len(),
            mech.rows()
        )));
    }
    let mut total = 0.0;
    for w in 0..mech.rows() {
        let pw = p_w.get(w);
        if pw == 0.0 {
            continue;
        }
        for z in 0..mech.cols() {
            let p = mech.get(w, z);
            if p == 0.0 {
                continue;
            }
            let l = loss(w, z);
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::invalid(format!("loss({w},{z}) = {l}")));
            }
            total += pw * p * l;
        }
    }
    Ok(total)
}

/// Euclidean distance in meters between support points, as an index loss.
pub fn euclidean_loss<'a>(
    ws: &'a [Location],
    zs: &'a [Location],
) -> impl Fn(usize, usize) -> f64 + 'a {
    move |w, z| ws[w].distance(&zs[z])
}
