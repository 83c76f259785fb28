//! Concrete obfuscation mechanisms: planar Laplace noise and tabular
//! channels over an explicit output support.
//!
//! The planar Laplace at privacy parameter ε has density
//! `ε²/(2π)·e^{−ε·d(w,z)}` around the true location w and expected
//! displacement exactly `2/ε`, independent of the prior. Sampling is exact:
//! uniform angle, radius through the inverse CDF, which needs the −1 branch
//! of the Lambert W function.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{sample_categorical, CondTable, Location};

/// Lambert W, branch −1: the solution `w ≤ −1` of `w·e^w = x` for
/// `x ∈ [−1/e, 0)`.
///
/// Series seed near the branch point, asymptotic seed near zero, then Halley
/// iteration to 1e-10 relative tolerance (a handful of steps in practice).
pub fn lambert_w_m1(x: f64) -> f64 {
    assert!(
        (-1.0 / std::f64::consts::E..0.0).contains(&x) || is_branch_point(x),
        "lambert_w_m1 domain is [-1/e, 0), got {x}"
    );
    // 2(e·x + 1) can round a hair negative at the branch point itself.
    let sigma_sq = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0);
    if sigma_sq < 1e-24 {
        return -1.0;
    }
    let mut w = if x < -0.32 {
        // Branch-point series: W₋₁ = −1 − σ − σ²/3 − 11σ³/72 − …
        let s = sigma_sq.sqrt();
        -1.0 - s - sigma_sq / 3.0 - 11.0 / 72.0 * s * sigma_sq
    } else {
        // Asymptotic seed for small |x|: W₋₁ ≈ ln(−x) − ln(−ln(−x)) + …
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1 + l2 * (l2 - 2.0) / (2.0 * l1 * l1)
    };
    const MAX_ITERATIONS: usize = 100;
    for _ in 0..MAX_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - x;
        let fp = ew * (w + 1.0);
        let denom = fp - f * (w + 2.0) / (2.0 * (w + 1.0));
        if denom == 0.0 {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= 1e-10 * w.abs() {
            break;
        }
    }
    w
}

fn is_branch_point(x: f64) -> bool {
    // Accept the closest representable values of −1/e on either side.
    (x + 1.0 / std::f64::consts::E).abs() < 1e-15
}

/// Isotropic planar Laplace noise with parameter ε (units 1/meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarLaplace {
    epsilon: f64,
}

impl PlanarLaplace {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(PlanarLaplace { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Probability density (1/m²) of reporting `z` from true location `w`:
    /// `ε²/(2π)·e^{−ε·d(w,z)}`.
    pub fn density(&self, w: &Location, z: &Location) -> f64 {
        let e = self.epsilon;
        e * e / std::f64::consts::TAU * (-e * w.distance(z)).exp()
    }

    /// Expected displacement, exactly `2/ε` for any prior.
    pub fn expected_distortion(&self) -> f64 {
        2.0 / self.epsilon
    }

    /// Inverse of the radial CDF `F(r) = 1 − (1+εr)·e^{−εr}`:
    /// `r = −(1/ε)·(W₋₁((u−1)/e) + 1)`.
    pub fn inverse_radius_cdf(&self, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u));
        let arg = (u - 1.0) / std::f64::consts::E;
        -(lambert_w_m1(arg) + 1.0) / self.epsilon
    }

    /// Draws one reported location: uniform angle, exact inverse-CDF radius.
    /// Output is never truncated to any region.
    pub fn sample<R: Rng + ?Sized>(&self, w: &Location, rng: &mut R) -> Location {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let r = self.inverse_radius_cdf(rng.random::<f64>());
        Location::new(w.x_m + r * theta.cos(), w.y_m + r * theta.sin())
    }
}

/// An explicit finite channel: input index → distribution over output
/// support points.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMechanism {
    support: Vec<Location>,
    table: CondTable,
}

impl TabularMechanism {
    pub fn new(support: Vec<Location>, table: CondTable) -> Result<Self> {
        if support.len() != table.cols() {
            return Err(Error::dim(format!(
                "{} support points vs {} table columns",
                support.len(),
                table.cols()
            )));
        }
        if let Some(bad) = support.iter().find(|l| !l.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite support point ({}, {})",
                bad.x_m, bad.y_m
            )));
        }
        Ok(TabularMechanism { support, table })
    }

    pub fn support(&self) -> &[Location] {
        &self.support
    }

    pub fn table(&self) -> &CondTable {
        &self.table
    }

    pub fn sample<R: Rng + ?Sized>(&self, w_index: usize, rng: &mut R) -> Result<Location> {
        if w_index >= self.table.rows() {
            return Err(Error::invalid(format!(
                "input index {w_index} outside [0, {})",
                self.table.rows()
            )));
        }
        let row = self.table.row(w_index);
        let j = sample_categorical(row.as_slice().expect("contiguous row"), rng.random());
        Ok(self.support[j])
    }

    /// Writes a plain text form: support coordinates, then the row-major
    /// table. Floats use shortest round-trip formatting, so read-back is
    /// exact.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "# tabular mechanism: rows map input index to support points")?;
        writeln!(out, "support {}", self.support.len())?;
        for p in &self.support {
            writeln!(out, "{} {}", p.x_m, p.y_m)?;
        }
        writeln!(out, "table {} {}", self.table.rows(), self.table.cols())?;
        for i in 0..self.table.rows() {
            let row: Vec<String> = self.table.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));

        let (ln, header) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
        let n_support: usize = header
            .strip_prefix("support ")
            .ok_or_else(|| err(ln + 1, format!("expected `support N`, got {header:?}")))?
            .trim()
            .parse()
            .map_err(|e| err(ln + 1, format!("support count: {e}")))?;
        let mut support = Vec::with_capacity(n_support);
        for _ in 0..n_support {
            let (ln, line) = lines.next().ok_or_else(|| err(0, "truncated support".into()))?;
            let mut it = line.split_whitespace();
            let x: f64 = it
                .next()
                .ok_or_else(|| err(ln + 1, "missing x".into()))?
                .parse()
                .map_err(|e| err(ln + 1, format!("x: {e}")))?;
            let y: f64 = it
                .next()
                .ok_or_else(|| err(ln + 1, "missing y".into()))?
                .parse()
                .map_err(|e| err(ln + 1, format!("y: {e}")))?;
            support.push(Location::new(x, y));
        }

        let (ln, header) = lines.next().ok_or_else(|| err(0, "missing table header".into()))?;
        let dims: Vec<usize> = header
            .strip_prefix("table ")
            .ok_or_else(|| err(ln + 1, format!("expected `table R C`, got {header:?}")))?
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(ln + 1, format!("table dims: {e}")))?;
        if dims.len() != 2 {
            return Err(err(ln + 1, "expected `table R C`".into()));
        }
        let mut rows = Vec::with_capacity(dims[0]);
        for _ in 0..dims[0] {
            let (ln, line) = lines.next().ok_or_else(|| err(0, "truncated table".into()))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(ln + 1, format!("row entry: {e}")))?;
            if row.len() != dims[1] {
                return Err(err(ln + 1, format!("expected {} entries", dims[1])));
            }
            rows.push(row);
        }
        TabularMechanism::new(support, CondTable::from_rows(rows)?)
    }
}
