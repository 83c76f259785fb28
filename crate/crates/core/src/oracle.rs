//! Exact optima on tiny discrete instances.
//!
//! Realistic grids are far beyond linear programming, but a handful of
//! locations is not: these routines find the distortion-bounded mechanism
//! with the largest Bayes error by exhaustive simplex-lattice search (up to
//! three locations) or projected supergradient ascent with random restarts
//! (up to six), giving ground truth to calibrate the learned mechanisms
//! against. Output support is restricted to the instance's own locations,
//! which keeps the search finite.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::info::{entropy, mutual_info};
use crate::model::{CondTable, DiscreteDist, Location};

/// A discrete obfuscation problem small enough to solve outright: each
/// class sits at one location, mechanisms map class locations to reported
/// locations, and reports are limited to the instance's own points.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub locations: Vec<Location>,
    pub prior: DiscreteDist,
    /// Location index each class occupies.
    pub class_loc: Vec<usize>,
    pub budget_m: f64,
}

impl TinyInstance {
    pub fn new(
        locations: Vec<Location>,
        prior: DiscreteDist,
        class_loc: Vec<usize>,
        budget_m: f64,
    ) -> Result<Self> {
        if locations.is_empty() || locations.len() > 6 {
            return Err(Error::invalid(format!(
                "instance needs 1 to 6 locations, got {}",
                locations.len()
            )));
        }
        if locations.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("locations must be finite"));
        }
        if class_loc.len() != prior.len() {
            return Err(Error::dim(format!(
                "{} classes in prior but {} location assignments",
                prior.len(),
                class_loc.len()
            )));
        }
        if let Some(&i) = class_loc.iter().find(|&&i| i >= locations.len()) {
            return Err(Error::invalid(format!("class location index {i} out of range")));
        }
        if !budget_m.is_finite() {
            return Err(Error::invalid("budget must be finite"));
        }
        Ok(TinyInstance { locations, prior, class_loc, budget_m })
    }

    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.locations.len()
    }

    /// Pairwise distances between locations; symmetric with zero diagonal.
    pub fn distances(&self) -> Array2<f64> {
        let n = self.locations.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.locations[i].distance(&self.locations[j]))
    }

    // Distance from a class's location to each output location.
    fn class_distances(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.num_classes(), self.num_outputs()), |(x, z)| {
            self.locations[self.class_loc[x]].distance(&self.locations[z])
        })
    }

    /// Expected displacement of a mechanism under the prior, meters.
    pub fn mechanism_distortion(&self, m: &CondTable) -> Result<f64> {
        self.check_dims(m)?;
        let d = self.class_distances();
        let mut total = 0.0;
        for x in 0..self.num_classes() {
            for z in 0..self.num_outputs() {
                total += self.prior.get(x) * m.get(x, z) * d[[x, z]];
            }
        }
        Ok(total)
    }

    /// Error of the best guesser that sees the mechanism's output.
    pub fn mechanism_bayes_error(&self, m: &CondTable) -> Result<f64> {
        self.check_dims(m)?;
        let mut sum_max = 0.0;
        for z in 0..self.num_outputs() {
            let mut best = 0.0;
            for x in 0..self.num_classes() {
                best = f64::max(best, self.prior.get(x) * m.get(x, z));
            }
            sum_max += best;
        }
        Ok(1.0 - sum_max)
    }

    /// Joint distribution over (class, reported location).
    pub fn joint(&self, m: &CondTable) -> Result<Array2<f64>> {
        self.check_dims(m)?;
        Ok(Array2::from_shape_fn((self.num_classes(), self.num_outputs()), |(x, z)| {
            self.prior.get(x) * m.get(x, z)
        }))
    }

    fn check_dims(&self, m: &CondTable) -> Result<()> {
        if m.rows() != self.num_classes() || m.cols() != self.num_outputs() {
            return Err(Error::dim(format!(
                "mechanism is {}x{}, instance wants {}x{}",
                m.rows(),
                m.cols(),
                self.num_classes(),
                self.num_outputs()
            )));
        }
        Ok(())
    }
}

// Candidate ranking: feasible maximal Bayes error first, then smaller
// distortion, then larger prior-weighted row entropy. The entropy tie-break
// picks the symmetric mechanism out of an optimal face.
const TIE_TOL: f64 = 1e-9;

struct Best {
    m: Array2<f64>,
    bayes: f64,
    distortion: f64,
    row_entropy: f64,
}

fn row_entropy(prior: &DiscreteDist, m: &Array2<f64>) -> f64 {
    let mut h = 0.0;
    for (x, row) in m.rows().into_iter().enumerate() {
        let mut hx = 0.0;
        for &p in row {
            if p > 0.0 {
                hx -= p * p.ln();
            }
        }
        h += prior.get(x) * hx;
    }
    h
}

fn better(cand: (f64, f64, f64), inc: (f64, f64, f64)) -> bool {
    if cand.0 > inc.0 + TIE_TOL {
        return true;
    }
    if cand.0 < inc.0 - TIE_TOL {
        return false;
    }
    if cand.1 < inc.1 - TIE_TOL {
        return true;
    }
    if cand.1 > inc.1 + TIE_TOL {
        return false;
    }
    cand.2 > inc.2 + TIE_TOL
}

fn consider(best: &mut Option<Best>, inst: &TinyInstance, m: &Array2<f64>, bayes: f64, dist: f64) {
    let h = row_entropy(&inst.prior, m);
    let replace = match best {
        None => true,
        Some(b) => better((bayes, dist, h), (b.bayes, b.distortion, b.row_entropy)),
    };
    if replace {
        *best = Some(Best { m: m.clone(), bayes, distortion: dist, row_entropy: h });
    }
}

// All length-`parts` probability rows on the lattice {0, 1/k, ..., 1}.
fn simplex_lattice(k: usize, parts: usize) -> Vec<Vec<f64>> {
    fn rec(k_left: usize, parts_left: usize, k: usize, prefix: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if parts_left == 1 {
            prefix.push(k_left as f64 / k as f64);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for take in 0..=k_left {
            prefix.push(take as f64 / k as f64);
            rec(k_left - take, parts_left - 1, k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, parts, k, &mut Vec::new(), &mut out);
    out
}

/// The distortion-bounded mechanism with maximal Bayes error, and that
/// error. Up to 3 classes over up to 3 locations are searched exhaustively
/// on a simplex lattice of the given step; larger instances (up to 6) run
/// projected supergradient ascent from 32 fixed random restarts, where
/// `resolution` only bounds the acceptable infeasibility. Ties resolve to
/// the least-distortion, then most-symmetric (highest row entropy)
/// mechanism.
pub fn optimal_bayes_mechanism(
    inst: &TinyInstance,
    resolution: f64,
) -> Result<(CondTable, f64)> {
    if inst.budget_m < 0.0 {
        return Err(Error::invalid(format!("budget must be >= 0, got {}", inst.budget_m)));
    }
    if !(resolution > 0.0 && resolution <= 0.5) {
        return Err(Error::invalid(format!("resolution must lie in (0, 0.5], got {resolution}")));
    }
    let classes = inst.num_classes();
    let outputs = inst.num_outputs();

    let best = if classes <= 3 && outputs <= 3 {
        let k = (1.0 / resolution).round().max(1.0) as usize;
        let rows = simplex_lattice(k, outputs);
        let combos = (rows.len() as f64).powi(classes as i32);
        if combos > 3e8 {
            return Err(Error::invalid(format!(
                "lattice holds {combos:.1e} mechanisms; coarsen the resolution"
            )));
        }
        exhaustive_search(inst, &rows)
    } else {
        ascent_search(inst)
    };

    let best = best.ok_or_else(|| Error::data("no feasible mechanism found"))?;
    Ok((CondTable::new(best.m)?, best.bayes))
}

fn exhaustive_search(inst: &TinyInstance, rows: &[Vec<f64>]) -> Option<Best> {
    let classes = inst.num_classes();
    let outputs = inst.num_outputs();
    let d = inst.class_distances();
    let budget = inst.budget_m + TIE_TOL;

    // Per-class expected displacement of each candidate row, so the
    // recursion can prune on the budget as it stacks rows.
    let row_cost: Vec<Vec<f64>> = (0..classes)
        .map(|x| {
            rows.iter()
                .map(|row| {
                    inst.prior.get(x) * row.iter().zip(d.row(x)).map(|(p, dd)| p * dd).sum::<f64>()
                })
                .collect()
        })
        .collect();

    let mut best: Option<Best> = None;
    let mut choice = vec![0usize; classes];

    fn rec(
        x: usize,
        cost_so_far: f64,
        inst: &TinyInstance,
        rows: &[Vec<f64>],
        row_cost: &[Vec<f64>],
        budget: f64,
        choice: &mut Vec<usize>,
        best: &mut Option<Best>,
        outputs: usize,
    ) {
        let classes = inst.num_classes();
        if x == classes {
            let m = Array2::from_shape_fn((classes, outputs), |(i, j)| rows[choice[i]][j]);
            let mut sum_max = 0.0;
            for z in 0..outputs {
                let mut col_best = 0.0;
                for i in 0..classes {
                    col_best = f64::max(col_best, inst.prior.get(i) * m[[i, z]]);
                }
                sum_max += col_best;
            }
            consider(best, inst, &m, 1.0 - sum_max, cost_so_far);
            return;
        }
        for (r, &c) in row_cost[x].iter().enumerate() {
            if cost_so_far + c <= budget {
                choice[x] = r;
                rec(x + 1, cost_so_far + c, inst, rows, row_cost, budget, choice, best, outputs);
            }
        }
    }

    rec(0, 0.0, inst, rows, &row_cost, budget, &mut choice, &mut best, outputs);
    best
}

// Euclidean projection of a vector onto the probability simplex: subtract
// the largest threshold that keeps the clamped coordinates summing to one.
fn project_row_to_simplex(row: &mut [f64]) {
    let n = row.len();
    let mut sorted: Vec<f64> = row.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = (sorted.iter().sum::<f64>() - 1.0) / n as f64;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i + 1) as f64;
        if v > t {
            theta = t;
        }
    }
    for v in row.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
    // Normalize away the last bits of float error.
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        for v in row.iter_mut() {
            *v /= s;
        }
    } else {
        let u = 1.0 / n as f64;
        for v in row.iter_mut() {
            *v = u;
        }
    }
}

fn identity_channel(inst: &TinyInstance) -> Array2<f64> {
    let mut m = Array2::zeros((inst.num_classes(), inst.num_outputs()));
    for (x, &l) in inst.class_loc.iter().enumerate() {
        m[[x, l]] = 1.0;
    }
    m
}

// Mixing toward the zero-distortion identity decreases distortion linearly,
// so any infeasible point can be pulled exactly onto the budget.
fn repair_to_budget(inst: &TinyInstance, m: &Array2<f64>, dist: f64) -> (Array2<f64>, f64) {
    if dist <= inst.budget_m {
        return (m.clone(), dist);
    }
    let t = inst.budget_m / dist;
    let id = identity_channel(inst);
    let repaired = m * t + &id * (1.0 - t);
    (repaired, inst.budget_m)
}

fn eval(inst: &TinyInstance, m: &Array2<f64>) -> (f64, f64) {
    let classes = inst.num_classes();
    let outputs = inst.num_outputs();
    let d = inst.class_distances();
    let mut sum_max = 0.0;
    let mut dist = 0.0;
    for z in 0..outputs {
        let mut col_best = 0.0;
        for x in 0..classes {
            col_best = f64::max(col_best, inst.prior.get(x) * m[[x, z]]);
        }
        sum_max += col_best;
    }
    for x in 0..classes {
        for z in 0..outputs {
            dist += inst.prior.get(x) * m[[x, z]] * d[[x, z]];
        }
    }
    (1.0 - sum_max, dist)
}

const ASCENT_RESTARTS: u64 = 32;
const ASCENT_STEPS: usize = 3000;

fn ascent_search(inst: &TinyInstance) -> Option<Best> {
    let classes = inst.num_classes();
    let outputs = inst.num_outputs();
    let d = inst.class_distances();
    let max_d = d.iter().cloned().fold(0.0, f64::max).max(1.0);
    let mut best: Option<Best> = None;

    let track = |inst: &TinyInstance, m: &Array2<f64>, best: &mut Option<Best>| {
        let (_, dist) = eval(inst, m);
        let (m2, dist2) = repair_to_budget(inst, m, dist);
        let (b2, _) = eval(inst, &m2);
        consider(best, inst, &m2, b2, dist2);
    };

    // Deterministic warm starts: do-nothing, all-confusing, and every
    // single-point collapse.
    track(inst, &identity_channel(inst), &mut best);
    track(
        inst,
        &Array2::from_elem((classes, outputs), 1.0 / outputs as f64),
        &mut best,
    );
    for z in 0..outputs {
        let mut m = Array2::zeros((classes, outputs));
        for x in 0..classes {
            m[[x, z]] = 1.0;
        }
        track(inst, &m, &mut best);
    }

    for restart in 0..ASCENT_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e55ed + restart);
        let mut m = Array2::from_shape_fn((classes, outputs), |_| -rng.random::<f64>().ln());
        for mut row in m.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }

        for step in 0..ASCENT_STEPS {
            let (_, dist) = eval(inst, &m);
            // Supergradient of the Bayes error plus a budget penalty.
            let mut g: Array2<f64> = Array2::zeros((classes, outputs));
            for z in 0..outputs {
                let mut arg = 0;
                for x in 1..classes {
                    if inst.prior.get(x) * m[[x, z]] > inst.prior.get(arg) * m[[arg, z]] {
                        arg = x;
                    }
                }
                g[[arg, z]] -= inst.prior.get(arg);
            }
            if dist > inst.budget_m {
                for x in 0..classes {
                    for z in 0..outputs {
                        g[[x, z]] -= 4.0 * inst.prior.get(x) * d[[x, z]] / max_d;
                    }
                }
            }
            let eta = 0.5 / ((step + 1) as f64).sqrt();
            m = &m + &g.mapv(|v| v * eta);
            for mut row in m.rows_mut() {
                let r = row.as_slice_mut().expect("contiguous row");
                project_row_to_simplex(r);
            }
            if step % 50 == 0 {
                track(inst, &m, &mut best);
            }
        }
        track(inst, &m, &mut best);
    }
    best
}

/// The best achievable privacy on an instance: maximal Bayes error and the
/// mutual information (nats) of the mechanism achieving it.
#[derive(Debug, Clone, Copy)]
pub struct GameValue {
    pub bayes_error: f64,
    pub mi_nats: f64,
}

/// Solves the instance at a dimension-appropriate resolution and reports
/// the optimum's Bayes error and mutual information.
pub fn game_value_bounds(inst: &TinyInstance) -> Result<GameValue> {
    let resolution = match (inst.num_classes(), inst.num_outputs()) {
        (c, o) if c <= 2 && o <= 2 => 1e-3,
        (c, o) if c <= 3 && o <= 2 => 5e-3,
        (c, o) if c <= 2 && o <= 3 => 5e-3,
        _ => 0.05,
    };
    let (m, bayes) = optimal_bayes_mechanism(inst, resolution)?;
    let mi = mutual_info(&inst.joint(&m)?);
    Ok(GameValue { bayes_error: bayes, mi_nats: mi })
}

/// The two-user, two-location worked example: payoff matrices for every
/// pair of deterministic generator and classifier strategies, under three
/// payoffs (classifier success rate, mutual information in bits between
/// identity and guess, one minus the Bayes error of the guess).
#[derive(Debug, Clone)]
pub struct PayoffTables {
    pub gen_strategies: [&'static str; 4],
    pub clf_strategies: [&'static str; 4],
    pub success: [[f64; 4]; 4],
    pub mi_bits: [[f64; 4]; 4],
    pub one_minus_bayes: [[f64; 4]; 4],
}

/// Computes the demo tables from first principles: two users at two
/// locations with a uniform prior, generators mapping locations to
/// locations, classifiers mapping observed locations to user guesses.
pub fn payoff_tables_demo() -> PayoffTables {
    // Strategy f(0), f(1) encoded as a pair.
    const STRATEGIES: [[usize; 2]; 4] = [[0, 1], [1, 0], [0, 0], [1, 1]];
    let gen_strategies = ["keep", "swap", "all first", "all second"];
    let clf_strategies = ["match", "flip", "always first", "always second"];

    let mut success = [[0.0; 4]; 4];
    let mut mi_bits = [[0.0; 4]; 4];
    let mut one_minus_bayes = [[0.0; 4]; 4];

    for (gi, g) in STRATEGIES.iter().enumerate() {
        for (ci, c) in STRATEGIES.iter().enumerate() {
            // Joint distribution of (user, guess) under the uniform prior;
            // user x sits at location x.
            let mut joint = Array2::zeros((2, 2));
            for x in 0..2 {
                joint[[x, c[g[x]]]] += 0.5;
            }
            success[gi][ci] = joint[[0, 0]] + joint[[1, 1]];
            mi_bits[gi][ci] = crate::info::nats_to_bits(mutual_info(&joint));
            one_minus_bayes[gi][ci] = 1.0 - crate::info::bayes_error_joint(&joint);
        }
    }
    PayoffTables { gen_strategies, clf_strategies, success, mi_bits, one_minus_bayes }
}

/// Entropy of the instance's class prior, nats. The largest mutual
/// information any mechanism on the instance could leak.
pub fn prior_entropy(inst: &TinyInstance) -> f64 {
    entropy(&inst.prior)
}
