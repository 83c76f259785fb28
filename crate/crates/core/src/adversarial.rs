//! The alternating privacy game: a generator that obfuscates locations
//! against a classifier that tries to re-identify them.
//!
//! Each outer iteration trains a *fresh* classifier on the current
//! generator's output, logs how well it does, and then trains the generator
//! against that frozen classifier. The generator's objective combines a
//! hinge-like distortion penalty with the batch mutual-information estimate;
//! an alternative objective that maximizes the classifier's cross entropy is
//! kept because it demonstrably fails to converge (each round the generator
//! relocates clusters, the next classifier re-learns them), and that failure
//! mode is part of the test surface.
//!
//! Networks never see raw meters. A [`CoordScaler`] fitted on the training
//! split maps locations to centered, unit-spread features so the coordinate
//! signal and the uniform noise seed input live on the same scale; all
//! distortion accounting converts back to meters through the scaler.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{batch_mutual_info, batch_mutual_info_grad, BatchMats};
use crate::model::{Dataset, Location};
use crate::neural::{adam_step, glorot_init, AdamState, Grads, Head, Mlp, TrainConfig};
use crate::seeds::RngFactory;

const LOG_FLOOR: f64 = 1e-12;

/// How the generator's privacy term is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorLossMode {
    /// Minimize the batch mutual-information estimate. Sound: drives the
    /// achievable re-identification accuracy itself down.
    MutualInfo,
    /// Maximize the frozen classifier's cross entropy. Unsound on purpose:
    /// it only fools the *current* classifier, so a freshly trained one
    /// recovers full accuracy every round.
    CrossEntropyUnsound,
}

/// Affine map between meters and the feature coordinates the networks see:
/// `feature = (meters − center) / meters_per_unit`, isotropic so Euclidean
/// distances convert by the single factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordScaler {
    pub center_x_m: f64,
    pub center_y_m: f64,
    pub meters_per_unit: f64,
}

impl CoordScaler {
    /// Centroid plus root-mean-square radius of the samples (at least 1 m,
    /// so degenerate data cannot produce a zero scale).
    pub fn fit(data: &Dataset) -> Self {
        let n = data.samples.len() as f64;
        let (mut cx, mut cy) = (0.0, 0.0);
        for s in &data.samples {
            cx += s.loc.x_m;
            cy += s.loc.y_m;
        }
        cx /= n;
        cy /= n;
        let mut ms = 0.0;
        for s in &data.samples {
            ms += (s.loc.x_m - cx).powi(2) + (s.loc.y_m - cy).powi(2);
        }
        CoordScaler { center_x_m: cx, center_y_m: cy, meters_per_unit: (ms / n).sqrt().max(1.0) }
    }

    pub fn features(&self, loc: &Location) -> [f64; 2] {
        [
            (loc.x_m - self.center_x_m) / self.meters_per_unit,
            (loc.y_m - self.center_y_m) / self.meters_per_unit,
        ]
    }

    pub fn location(&self, fx: f64, fy: f64) -> Location {
        Location::new(
            fx * self.meters_per_unit + self.center_x_m,
            fy * self.meters_per_unit + self.center_y_m,
        )
    }

    /// One row of features per dataset sample.
    pub fn features_of(&self, data: &Dataset) -> Array2<f64> {
        let mut w = Array2::zeros((data.samples.len(), 2));
        for (i, s) in data.samples.iter().enumerate() {
            let [x, y] = self.features(&s.loc);
            w[[i, 0]] = x;
            w[[i, 1]] = y;
        }
        w
    }
}

/// Everything one game needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct GameConfig {
    /// Distortion budget in meters.
    pub budget_m: f64,
    /// Weight of the distortion penalty.
    pub alpha: f64,
    /// Weight of the privacy term.
    pub beta: f64,
    /// Generator layer sizes; input is (x, y, seed), output (x, y).
    pub gen_sizes: Vec<usize>,
    /// Classifier layer sizes; input (x, y), output one score per class.
    pub clf_sizes: Vec<usize>,
    pub gen_cfg: TrainConfig,
    pub clf_cfg: TrainConfig,
    pub max_iterations: usize,
    /// Stop once validation accuracy is within this margin of chance.
    pub stop_delta: f64,
    /// Noisy replicas generated per original location for classifier training.
    pub seeds_per_location: usize,
    pub mode: GeneratorLossMode,
    /// Supervised pretraining epochs that teach the generator an at-budget
    /// isotropic spread before the first iteration. Starting the game from a
    /// wide mechanism keeps the privacy gradient alive between distant
    /// clusters; a cold-started generator is near-deterministic and can stall
    /// in a partial merge. 0 disables.
    pub warm_start_epochs: usize,
}

impl GameConfig {
    /// Defaults sized for the experiments in this repository; the budget is
    /// always explicit.
    pub fn new(budget_m: f64, num_classes: usize) -> Self {
        GameConfig {
            budget_m,
            alpha: 1.0,
            beta: 2.0,
            gen_sizes: vec![3, 100, 100, 100, 2],
            clf_sizes: vec![2, 60, 100, 51, num_classes],
            gen_cfg: TrainConfig::new(128, 50, 1e-4),
            clf_cfg: TrainConfig::new(256, 40, 1e-3),
            max_iterations: 200,
            stop_delta: 0.02,
            seeds_per_location: 10,
            mode: GeneratorLossMode::MutualInfo,
            warm_start_epochs: 40,
        }
    }

    pub fn num_classes(&self) -> usize {
        *self.clf_sizes.last().expect("non-empty classifier sizes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_m.is_finite() && self.budget_m > 0.0) {
            return Err(Error::invalid(format!("budget_m must be > 0, got {}", self.budget_m)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be >= 0"));
        }
        if !(self.stop_delta > 0.0 && self.stop_delta < 0.5) {
            return Err(Error::invalid(format!(
                "stop_delta must lie in (0, 0.5), got {}",
                self.stop_delta
            )));
        }
        if self.max_iterations == 0 || self.seeds_per_location == 0 {
            return Err(Error::invalid("max_iterations and seeds_per_location must be >= 1"));
        }
        if self.gen_sizes.len() < 2 || self.gen_sizes[0] != 3 || *self.gen_sizes.last().unwrap() != 2
        {
            return Err(Error::invalid("generator must map (x, y, seed) to (x, y)"));
        }
        if self.clf_sizes.len() < 2 || self.clf_sizes[0] != 2 {
            return Err(Error::invalid("classifier must take (x, y) input"));
        }
        // Mutual information over a batch is only meaningful when every
        // class can show up several times.
        if self.gen_cfg.batch_size < 16 * self.num_classes() {
            return Err(Error::invalid(format!(
                "generator batch size {} is below 16 per class times {} classes",
                self.gen_cfg.batch_size,
                self.num_classes()
            )));
        }
        self.gen_cfg.validate()?;
        self.clf_cfg.validate()
    }
}

/// One row of the game's progress log.
#[derive(Debug, Clone, Copy)]
pub struct IterationLog {
    pub iteration: usize,
    pub acc_train: f64,
    pub acc_val: f64,
    pub acc_test: f64,
    pub mi_nats: f64,
    pub distortion_m: f64,
    pub seconds: f64,
}

/// A generator network together with the coordinate scaler it was trained
/// under; only the pair can turn raw locations into obfuscated locations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGenerator {
    pub net: Mlp,
    pub scaler: CoordScaler,
}

impl TrainedGenerator {
    /// Obfuscates each location once, drawing one noise seed per row.
    pub fn apply(&self, locs: &[Location], rng: &mut ChaCha8Rng) -> Result<Vec<Location>> {
        let mut inputs = Array2::zeros((locs.len(), 3));
        for (i, loc) in locs.iter().enumerate() {
            let [fx, fy] = self.scaler.features(loc);
            inputs[[i, 0]] = fx;
            inputs[[i, 1]] = fy;
            inputs[[i, 2]] = rng.random::<f64>();
        }
        let z = self.net.forward(&inputs)?;
        Ok((0..locs.len()).map(|i| self.scaler.location(z[[i, 0]], z[[i, 1]])).collect())
    }

    /// Network checkpoint at `path` plus a `.scaler.toml` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.net.save(path)?;
        let text = toml::to_string(&self.scaler)
            .map_err(|e| Error::invalid(format!("scaler encode: {e}")))?;
        fs::write(scaler_path(path), text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net = Mlp::load(path)?;
        let spath = scaler_path(path);
        let text = fs::read_to_string(&spath)?;
        let scaler: CoordScaler = toml::from_str(&text).map_err(|e| Error::Parse {
            path: spath.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(TrainedGenerator { net, scaler })
    }
}

fn scaler_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("scaler.toml")
}

/// Result of a full game run. `selected` is the iteration number (matching
/// `IterationLog::iteration`) whose generator is returned: the final one on
/// convergence, otherwise the best-ranked in-budget iteration.
#[derive(Debug, Clone)]
pub struct GameOutcome {
    pub generator: TrainedGenerator,
    pub logs: Vec<IterationLog>,
    pub converged: bool,
    pub selected: usize,
}

/// `ln(1 + e^(measured − budget))`: near zero well under budget, slope one
/// well over it. Overflow-safe for any finite argument.
pub fn softplus_penalty(measured_m: f64, budget_m: f64) -> f64 {
    let d = measured_m - budget_m;
    if d > 30.0 {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    }
}

/// Derivative of [`softplus_penalty`] in its first argument: the logistic
/// `1/(1 + e^(budget − measured))`.
pub fn softplus_slope(measured_m: f64, budget_m: f64) -> f64 {
    1.0 / (1.0 + (budget_m - measured_m).exp())
}

/// A generator training batch: original locations in feature coordinates,
/// one noise seed per row, and the class labels.
#[derive(Debug, Clone)]
pub struct GenBatch {
    pub w_feat: Array2<f64>,
    pub seeds: Vec<f64>,
    pub labels: Vec<usize>,
}

impl GenBatch {
    fn validate(&self, num_classes: usize) -> Result<()> {
        let n = self.w_feat.nrows();
        if self.w_feat.ncols() != 2 {
            return Err(Error::dim("w_feat must have two columns"));
        }
        if self.seeds.len() != n || self.labels.len() != n || n == 0 {
            return Err(Error::dim("batch rows, seeds and labels must agree and be non-empty"));
        }
        if let Some(&c) = self.labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::invalid(format!("label {c} out of range {num_classes}")));
        }
        Ok(())
    }
}

/// Generator loss value, diagnostics, and gradients for one batch.
#[derive(Debug)]
pub struct GenEval {
    pub loss: f64,
    pub mi_nats: f64,
    pub distortion_m: f64,
    pub grads: Grads,
    /// The batch held a single class; the mutual-information term is then 0.
    pub single_class: bool,
}

/// Composite generator objective on one batch, differentiated through the
/// frozen classifier back into the generator:
/// `alpha·softplus(mean displacement, budget) + beta·privacy`.
/// Displacement is measured in meters (`meters_per_unit` converts from
/// feature coordinates), so the penalty is a sharp hinge at the budget.
pub fn generator_loss(
    gen: &Mlp,
    clf: &Mlp,
    batch: &GenBatch,
    meters_per_unit: f64,
    cfg: &GameConfig,
) -> Result<GenEval> {
    let num_classes = clf.output_width();
    batch.validate(num_classes)?;
    if gen.input_width() != 3 || gen.output_width() != 2 || clf.input_width() != 2 {
        return Err(Error::dim("generator is (x, y, seed) -> (x, y), classifier reads (x, y)"));
    }
    if !(meters_per_unit.is_finite() && meters_per_unit > 0.0) {
        return Err(Error::invalid(format!("meters_per_unit must be > 0, got {meters_per_unit}")));
    }
    let n = batch.w_feat.nrows();
    let nf = n as f64;

    let mut inputs = Array2::zeros((n, 3));
    for i in 0..n {
        inputs[[i, 0]] = batch.w_feat[[i, 0]];
        inputs[[i, 1]] = batch.w_feat[[i, 1]];
        inputs[[i, 2]] = batch.seeds[i];
    }
    let gen_cache = gen.forward_cached(&inputs)?;
    let z = gen_cache.output().clone();

    // Mean displacement in meters and its gradient w.r.t. each z entry.
    let diff = &z - &batch.w_feat;
    let mut mean_dist = 0.0;
    for i in 0..n {
        mean_dist += diff[[i, 0]].hypot(diff[[i, 1]]);
    }
    mean_dist = mean_dist * meters_per_unit / nf;
    let penalty = softplus_penalty(mean_dist, cfg.budget_m);
    let slope = softplus_slope(mean_dist, cfg.budget_m);
    let mut d_pen_dz = Array2::zeros((n, 2));
    for i in 0..n {
        let r = diff[[i, 0]].hypot(diff[[i, 1]]);
        if r > 1e-12 {
            let scale = slope * meters_per_unit / (nf * r);
            d_pen_dz[[i, 0]] = scale * diff[[i, 0]];
            d_pen_dz[[i, 1]] = scale * diff[[i, 1]];
        }
    }

    let clf_cache = clf.forward_cached(&z)?;
    let q = clf_cache.output().clone();
    let mats = BatchMats::from_labels(&batch.labels, num_classes, q.clone())?;
    let single_class = batch.labels.windows(2).all(|w| w[0] == w[1]);

    // Privacy term and its gradient w.r.t. the classifier output.
    let (mi_nats, term, d_term_dq) = match cfg.mode {
        GeneratorLossMode::MutualInfo => {
            let (mi, grad) = batch_mutual_info_grad(&mats);
            (mi, mi, grad)
        }
        GeneratorLossMode::CrossEntropyUnsound => {
            let mi = batch_mutual_info(&mats);
            let mut ce = 0.0;
            let mut grad = Array2::zeros(q.dim());
            for (i, &c) in batch.labels.iter().enumerate() {
                let qi = q[[i, c]];
                ce -= qi.max(LOG_FLOOR).ln() / nf;
                if qi > LOG_FLOOR {
                    grad[[i, c]] = 1.0 / (nf * qi);
                }
            }
            (mi, -ce, grad)
        }
    };

    let d_out = if cfg.beta > 0.0 {
        let d_term_dz = clf.backward_to_input(&clf_cache, &d_term_dq);
        d_term_dz.mapv(|v| v * cfg.beta) + d_pen_dz.mapv(|v| v * cfg.alpha)
    } else {
        d_pen_dz.mapv(|v| v * cfg.alpha)
    };
    let grads = gen.backward(&gen_cache, &d_out);

    Ok(GenEval {
        loss: cfg.alpha * penalty + cfg.beta * term,
        mi_nats,
        distortion_m: mean_dist,
        grads,
        single_class,
    })
}

/// Minibatch cross-entropy training of a (freshly initialized) classifier.
/// `inputs` are feature coordinates, one row per obfuscated location.
pub fn train_classifier(
    mut clf: Mlp,
    inputs: &Array2<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Mlp> {
    cfg.validate()?;
    let n = inputs.nrows();
    if labels.len() != n || n == 0 {
        return Err(Error::dim("inputs and labels must agree and be non-empty"));
    }
    let k = clf.output_width();
    if let Some(&c) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("label {c} out of range {k}")));
    }
    let mut state = AdamState::new(&clf);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let cache = clf.forward_cached(&x)?;
            let q = cache.output();
            let bf = chunk.len() as f64;
            let mut g = Array2::zeros(q.dim());
            for (row, &idx) in chunk.iter().enumerate() {
                let c = labels[idx];
                g[[row, c]] = -1.0 / (bf * q[[row, c]].max(LOG_FLOOR));
            }
            let grads = clf.backward(&cache, &g);
            adam_step(&mut clf, &grads, &mut state, cfg);
        }
    }
    Ok(clf)
}

/// Mean argmax accuracy; ties resolve to the lowest class index.
pub fn accuracy(clf: &Mlp, inputs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if inputs.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::dim("inputs and labels must agree and be non-empty"));
    }
    let q = clf.forward(inputs)?;
    let mut hits = 0usize;
    for (row, &c) in q.rows().into_iter().zip(labels) {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        hits += usize::from(best == c);
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Original and obfuscated feature coordinates for a dataset pass, replicas
/// interleaved per sample.
#[derive(Debug, Clone)]
pub struct ObfBatch {
    pub w_feat: Array2<f64>,
    pub z_feat: Array2<f64>,
    pub labels: Vec<usize>,
}

impl ObfBatch {
    /// Mean displacement between originals and their obfuscations, meters.
    pub fn mean_distortion_m(&self, meters_per_unit: f64) -> f64 {
        let n = self.w_feat.nrows() as f64;
        let mut total = 0.0;
        for (w, z) in self.w_feat.rows().into_iter().zip(self.z_feat.rows()) {
            total += (z[0] - w[0]).hypot(z[1] - w[1]);
        }
        total * meters_per_unit / n
    }
}

/// Runs every dataset location through the generator `replicas` times with
/// fresh noise seeds.
pub fn obfuscate(
    gen: &Mlp,
    data: &Dataset,
    scaler: &CoordScaler,
    replicas: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ObfBatch> {
    if replicas == 0 {
        return Err(Error::invalid("replicas must be >= 1"));
    }
    let n = data.samples.len() * replicas;
    let mut inputs = Array2::zeros((n, 3));
    let mut w_feat = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for (i, s) in data.samples.iter().enumerate() {
        let [wx, wy] = scaler.features(&s.loc);
        for r in 0..replicas {
            let row = i * replicas + r;
            inputs[[row, 0]] = wx;
            inputs[[row, 1]] = wy;
            inputs[[row, 2]] = rng.random::<f64>();
            w_feat[[row, 0]] = wx;
            w_feat[[row, 1]] = wy;
            labels.push(s.class_id);
        }
    }
    let z_feat = gen.forward(&inputs)?;
    Ok(ObfBatch { w_feat, z_feat, labels })
}

// Shuffle within each class, then deal classes round-robin so any contiguous
// batch window is close to class-balanced.
fn stratified_order(labels: &[usize], num_classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    for v in by_class.iter_mut() {
        v.shuffle(rng);
    }
    let mut order = Vec::with_capacity(labels.len());
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..longest {
        for v in &by_class {
            if r < v.len() {
                order.push(v[r]);
            }
        }
    }
    order
}

fn rank(within_budget: bool, acc_val: f64, distortion: f64) -> (u8, f64, f64) {
    (u8::from(!within_budget), acc_val, distortion)
}

fn rank_less(a: (u8, f64, f64), b: (u8, f64, f64)) -> bool {
    (a.0, a.1, a.2) < (b.0, b.1, b.2)
}

/// Teaches a fresh generator to spread reports over a disc whose mean radius
/// is the distortion budget, by regressing onto a spiral parameterized by the
/// seed input. The resulting mechanism overlaps neighboring classes from the
/// start, which is what gives the privacy term a usable gradient.
fn warm_start(
    gen: &mut Mlp,
    train_w: &Array2<f64>,
    budget_feat: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n = train_w.nrows();
    let mut adam = AdamState::new(gen);
    let cfg = TrainConfig::new(batch_size, epochs, 1e-3);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let m = chunk.len();
            let mut inputs = Array2::zeros((m, 3));
            let mut targets = Array2::zeros((m, 2));
            for (r, &i) in chunk.iter().enumerate() {
                let s: f64 = rng.random();
                // One spiral turn, radius ramping 0..2*budget (mean = budget).
                // Low-frequency in the seed, so a few hundred steps suffice;
                // higher winding counts get smoothed away to the identity map.
                let radius = 2.0 * budget_feat * s;
                let theta = 2.0 * std::f64::consts::PI * s;
                inputs[[r, 0]] = train_w[[i, 0]];
                inputs[[r, 1]] = train_w[[i, 1]];
                inputs[[r, 2]] = s;
                targets[[r, 0]] = train_w[[i, 0]] + radius * theta.cos();
                targets[[r, 1]] = train_w[[i, 1]] + radius * theta.sin();
            }
            let cache = gen.forward_cached(&inputs)?;
            let d_out = (cache.output() - &targets).mapv(|v| 2.0 * v / m as f64);
            let grads = gen.backward(&cache, &d_out);
            adam_step(gen, &grads, &mut adam, &cfg);
        }
    }
    Ok(())
}

/// The full alternating game. Each iteration: train a fresh classifier on
/// the current generator's output, log its accuracy, stop if it has been at
/// chance level for three consecutive iterations, otherwise train the
/// generator against it. On hitting `max_iterations` the best generator seen
/// (lowest validation accuracy among budget-respecting iterations) is
/// returned with `converged = false`.
pub fn run_game(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    cfg: &GameConfig,
    factory: &RngFactory,
) -> Result<GameOutcome> {
    cfg.validate()?;
    let k = cfg.num_classes();
    for (name, d) in [("train", train), ("val", val), ("test", test)] {
        if d.samples.is_empty() {
            return Err(Error::data(format!("{name} split is empty")));
        }
        if d.num_classes != k {
            return Err(Error::data(format!(
                "{name} split has {} classes, classifier expects {k}",
                d.num_classes
            )));
        }
    }
    let scaler = CoordScaler::fit(train);
    let scale = scaler.meters_per_unit;
    let chance = 1.0 / k as f64;

    let train_w = scaler.features_of(train);
    let train_labels: Vec<usize> = train.samples.iter().map(|s| s.class_id).collect();

    let gen_seed: u64 = factory.stream0("init-gen").random();
    let mut gen = glorot_init(&cfg.gen_sizes, Head::Linear, gen_seed);
    if cfg.warm_start_epochs > 0 {
        // Small batches regardless of the game's batch size: pretraining
        // needs step count, not gradient fidelity.
        warm_start(
            &mut gen,
            &train_w,
            cfg.budget_m / scale,
            cfg.warm_start_epochs,
            cfg.gen_cfg.batch_size.min(128),
            &mut factory.stream0("warm-start"),
        )?;
    }

    let mut logs = Vec::new();
    let mut consecutive = 0usize;
    let mut best: Option<(Mlp, usize, (u8, f64, f64))> = None;

    for i in 1..=cfg.max_iterations {
        let t0 = Instant::now();
        gen.iteration = i as u64;

        let clf_seed: u64 = factory.stream("init-clf", i as u64).random();
        let clf0 = glorot_init(&cfg.clf_sizes, Head::Softmax, clf_seed);

        let obf_train = obfuscate(
            &gen,
            train,
            &scaler,
            cfg.seeds_per_location,
            &mut factory.stream("obf-train", i as u64),
        )?;
        let clf = train_classifier(
            clf0,
            &obf_train.z_feat,
            &obf_train.labels,
            &cfg.clf_cfg,
            &mut factory.stream("clf-train", i as u64),
        )?;

        let obf_val = obfuscate(
            &gen,
            val,
            &scaler,
            cfg.seeds_per_location,
            &mut factory.stream("obf-val", i as u64),
        )?;
        let obf_test = obfuscate(
            &gen,
            test,
            &scaler,
            cfg.seeds_per_location,
            &mut factory.stream("obf-test", i as u64),
        )?;
        let acc_train = accuracy(&clf, &obf_train.z_feat, &obf_train.labels)?;
        let acc_val = accuracy(&clf, &obf_val.z_feat, &obf_val.labels)?;
        let acc_test = accuracy(&clf, &obf_test.z_feat, &obf_test.labels)?;

        let q_train = clf.forward(&obf_train.z_feat)?;
        let mi_nats = batch_mutual_info(&BatchMats::from_labels(&obf_train.labels, k, q_train)?);
        let distortion_m = obf_test.mean_distortion_m(scale);

        logs.push(IterationLog {
            iteration: i,
            acc_train,
            acc_val,
            acc_test,
            mi_nats,
            distortion_m,
            seconds: t0.elapsed().as_secs_f64(),
        });

        let cand = rank(distortion_m <= cfg.budget_m * 1.05, acc_val, distortion_m);
        if best.as_ref().is_none_or(|(_, _, b)| rank_less(cand, *b)) {
            best = Some((gen.clone(), i, cand));
        }

        if cfg.mode == GeneratorLossMode::MutualInfo && acc_val <= chance + cfg.stop_delta {
            consecutive += 1;
            if consecutive >= 3 {
                return Ok(GameOutcome {
                    generator: TrainedGenerator { net: gen, scaler },
                    logs,
                    converged: true,
                    selected: i,
                });
            }
        } else {
            consecutive = 0;
        }

        // Generator update against the frozen classifier.
        let mut gen_rng = factory.stream("gen-train", i as u64);
        let mut adam = AdamState::new(&gen);
        for _ in 0..cfg.gen_cfg.epochs {
            let order = stratified_order(&train_labels, k, &mut gen_rng);
            for chunk in order.chunks(cfg.gen_cfg.batch_size) {
                if chunk.len() < 16 * k {
                    continue;
                }
                let batch = GenBatch {
                    w_feat: train_w.select(Axis(0), chunk),
                    seeds: (0..chunk.len()).map(|_| gen_rng.random()).collect(),
                    labels: chunk.iter().map(|&j| train_labels[j]).collect(),
                };
                let eval = generator_loss(&gen, &clf, &batch, scale, cfg)?;
                adam_step(&mut gen, &eval.grads, &mut adam, &cfg.gen_cfg);
            }
        }
    }

    let (net, selected, _) = best.expect("at least one iteration ran");
    Ok(GameOutcome {
        generator: TrainedGenerator { net, scaler },
        logs,
        converged: false,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::TabularMechanism;
    use crate::model::{CondTable, DiscreteDist, LabeledSample, Region, SplitTag};
    use crate::neural::finite_diff_grad;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use rand_chacha::rand_core::SeedableRng;

    fn test_region() -> Region {
        Region::new(48.8635, 2.3486, 6500.0).unwrap()
    }

    // Four disk clusters on the vertices (±150, ±150) m.
    fn clusters(per_class: usize, radius_m: f64, rng: &mut ChaCha8Rng, split: SplitTag) -> Dataset {
        let centers = [(150.0, 150.0), (150.0, -150.0), (-150.0, 150.0), (-150.0, -150.0)];
        let mut samples = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let r = radius_m * rng.random::<f64>().sqrt();
                let th = rng.random::<f64>() * std::f64::consts::TAU;
                samples.push(LabeledSample {
                    class_id: c,
                    loc: Location::new(cx + r * th.cos(), cy + r * th.sin()),
                });
            }
        }
        Dataset::new(samples, 4, test_region(), split).unwrap()
    }

    fn feat_and_labels(d: &Dataset) -> (CoordScaler, Array2<f64>, Vec<usize>) {
        let scaler = CoordScaler::fit(d);
        let feats = scaler.features_of(d);
        (scaler, feats, d.samples.iter().map(|s| s.class_id).collect())
    }

    // Classifier that labels the four quadrants with overwhelming margins.
    fn quadrant_classifier(sharpness: f64) -> Mlp {
        let w = Array2::from_shape_vec(
            (2, 4),
            vec![
                sharpness, sharpness, -sharpness, -sharpness,
                sharpness, -sharpness, sharpness, -sharpness,
            ],
        )
        .unwrap();
        Mlp::from_parts(vec![2, 4], vec![w], vec![Array1::zeros(4)], Head::Softmax, 0, 0).unwrap()
    }

    fn identity_generator() -> Mlp {
        let w = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        Mlp::from_parts(vec![3, 2], vec![w], vec![Array1::zeros(2)], Head::Linear, 0, 0).unwrap()
    }

    fn gen_batch_from(d: &Dataset, rng: &mut ChaCha8Rng) -> (CoordScaler, GenBatch) {
        let (scaler, w_feat, labels) = feat_and_labels(d);
        let seeds = (0..labels.len()).map(|_| rng.random()).collect();
        (scaler, GenBatch { w_feat, seeds, labels })
    }

    #[test]
    fn scaler_round_trips_and_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = clusters(50, 45.0, &mut rng, SplitTag::Train);
        let scaler = CoordScaler::fit(&data);
        // Symmetric clusters put the centroid near the origin and the rms
        // radius near the vertex distance of about 212 m.
        assert!(scaler.center_x_m.abs() < 20.0);
        assert!(scaler.center_y_m.abs() < 20.0);
        assert!((180.0..=250.0).contains(&scaler.meters_per_unit));
        for s in data.samples.iter().take(10) {
            let [fx, fy] = scaler.features(&s.loc);
            let back = scaler.location(fx, fy);
            assert_abs_diff_eq!(back.x_m, s.loc.x_m, epsilon = 1e-9);
            assert_abs_diff_eq!(back.y_m, s.loc.y_m, epsilon = 1e-9);
        }
    }

    #[test]
    fn softplus_reference_points() {
        assert_abs_diff_eq!(softplus_penalty(270.0, 270.0), 2f64.ln(), epsilon = 1e-12);
        let tiny = softplus_penalty(250.0, 270.0);
        assert!((tiny / 2.0611536224385578e-9 - 1.0).abs() < 1e-8, "{tiny}");
        assert_abs_diff_eq!(softplus_penalty(275.0, 270.0), 5.006715348489118, epsilon = 1e-9);
        // Overflow safety far from the budget on both sides.
        assert_eq!(softplus_penalty(1e6, 0.0), 1e6);
        assert_eq!(softplus_penalty(0.0, 1e6), 0.0);
        assert_eq!(softplus_slope(1e6, 0.0), 1.0);
        assert_eq!(softplus_slope(0.0, 1e6), 0.0);
    }

    #[test]
    fn softplus_slope_matches_finite_differences() {
        for d in [-30.0, -5.0, -0.5, 0.0, 0.5, 5.0, 25.0] {
            let measured = 100.0 + d;
            let fd = finite_diff_grad(|p| softplus_penalty(p[0], 100.0), &[measured], 1e-6)[0];
            assert_abs_diff_eq!(softplus_slope(measured, 100.0), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn softplus_is_increasing() {
        let mut prev = softplus_penalty(-50.0, 0.0);
        for i in 1..100 {
            let v = softplus_penalty(-50.0 + i as f64, 0.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn loss_identity_generator_perfect_classifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = clusters(16, 45.0, &mut rng, SplitTag::Train);
        let (scaler, batch) = gen_batch_from(&data, &mut rng);
        let mut cfg = GameConfig::new(270.0, 4);
        cfg.alpha = 0.0;
        cfg.beta = 1.0;
        let eval = generator_loss(
            &identity_generator(),
            &quadrant_classifier(30.0),
            &batch,
            scaler.meters_per_unit,
            &cfg,
        )
        .unwrap();
        // Perfectly recoverable labels: the loss is the full class entropy.
        assert_abs_diff_eq!(eval.loss, 4f64.ln(), epsilon = 1e-4);
        assert!(eval.distortion_m < 1e-9);
        assert!(!eval.single_class);
    }

    #[test]
    fn loss_collapsing_generator_kills_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = clusters(16, 45.0, &mut rng, SplitTag::Train);
        let (scaler, batch) = gen_batch_from(&data, &mut rng);
        let mut collapse = identity_generator();
        collapse.set_params_flat(&vec![0.0; collapse.param_count()]);
        let mut cfg = GameConfig::new(270.0, 4);
        cfg.alpha = 0.0;
        cfg.beta = 1.0;
        let eval = generator_loss(
            &collapse,
            &quadrant_classifier(30.0),
            &batch,
            scaler.meters_per_unit,
            &cfg,
        )
        .unwrap();
        assert!(eval.loss.abs() < 1e-10, "loss {}", eval.loss);
        assert!(eval.mi_nats.abs() < 1e-10);
    }

    #[test]
    fn loss_single_class_batch_flagged_with_zero_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w_feat = Array2::from_shape_fn((20, 2), |_| rng.random::<f64>() * 0.1);
        let seeds = (0..20).map(|_| rng.random()).collect();
        let batch = GenBatch { w_feat, seeds, labels: vec![2; 20] };
        let cfg = GameConfig::new(270.0, 4);
        let gen = glorot_init(&[3, 8, 2], Head::Linear, 4);
        let clf = glorot_init(&[2, 8, 4], Head::Softmax, 5);
        let eval = generator_loss(&gen, &clf, &batch, 200.0, &cfg).unwrap();
        assert!(eval.single_class);
        assert!(eval.mi_nats.abs() < 1e-10);
    }

    #[test]
    fn composite_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = clusters(17, 45.0, &mut rng, SplitTag::Train);
        let (scaler, batch) = gen_batch_from(&data, &mut rng);
        let mut cfg = GameConfig::new(150.0, 4);
        cfg.alpha = 1.0;
        cfg.beta = 2.0;
        let gen = glorot_init(&[3, 6, 2], Head::Linear, 7);
        let clf = glorot_init(&[2, 8, 4], Head::Softmax, 8);

        let eval = generator_loss(&gen, &clf, &batch, scaler.meters_per_unit, &cfg).unwrap();
        let mut analytic = Vec::new();
        for l in 0..eval.grads.weights.len() {
            analytic.extend(eval.grads.weights[l].iter());
            analytic.extend(eval.grads.biases[l].iter());
        }
        let fd = finite_diff_grad(
            |p| {
                generator_loss(&gen.clone_with_params(p), &clf, &batch, scaler.meters_per_unit, &cfg)
                    .unwrap()
                    .loss
            },
            &gen.params_flat(),
            1e-5,
        );
        let err = crate::neural::max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn unsound_mode_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = clusters(17, 45.0, &mut rng, SplitTag::Train);
        let (scaler, batch) = gen_batch_from(&data, &mut rng);
        let mut cfg = GameConfig::new(150.0, 4);
        cfg.mode = GeneratorLossMode::CrossEntropyUnsound;
        let gen = glorot_init(&[3, 6, 2], Head::Linear, 10);
        let clf = glorot_init(&[2, 8, 4], Head::Softmax, 11);

        let eval = generator_loss(&gen, &clf, &batch, scaler.meters_per_unit, &cfg).unwrap();
        let mut analytic = Vec::new();
        for l in 0..eval.grads.weights.len() {
            analytic.extend(eval.grads.weights[l].iter());
            analytic.extend(eval.grads.biases[l].iter());
        }
        let fd = finite_diff_grad(
            |p| {
                generator_loss(&gen.clone_with_params(p), &clf, &batch, scaler.meters_per_unit, &cfg)
                    .unwrap()
                    .loss
            },
            &gen.params_flat(),
            1e-5,
        );
        let err = crate::neural::max_rel_err(&analytic, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn mi_term_invariant_under_head_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = clusters(16, 45.0, &mut rng, SplitTag::Train);
        let (scaler, batch) = gen_batch_from(&data, &mut rng);
        let mut cfg = GameConfig::new(270.0, 4);
        cfg.alpha = 0.0;
        cfg.beta = 1.0;
        let gen = glorot_init(&[3, 8, 2], Head::Linear, 13);
        let clf = glorot_init(&[2, 10, 4], Head::Softmax, 14);

        // Relabel the classifier's output classes by permuting the final
        // layer's columns and bias entries.
        let perm = [2usize, 0, 3, 1];
        let flat = clf.params_flat();
        let mut permuted = clf.clone();
        {
            let sizes = permuted.sizes().to_vec();
            let last_in = sizes[sizes.len() - 2];
            let tail = flat.len() - (last_in * 4 + 4);
            let mut new_flat = flat.clone();
            for r in 0..last_in {
                for c in 0..4 {
                    new_flat[tail + r * 4 + perm[c]] = flat[tail + r * 4 + c];
                }
            }
            for c in 0..4 {
                new_flat[tail + last_in * 4 + perm[c]] = flat[tail + last_in * 4 + c];
            }
            permuted.set_params_flat(&new_flat);
        }

        let a = generator_loss(&gen, &clf, &batch, scaler.meters_per_unit, &cfg).unwrap();
        let b = generator_loss(&gen, &permuted, &batch, scaler.meters_per_unit, &cfg).unwrap();
        assert!((a.mi_nats - b.mi_nats).abs() < 1e-12);
    }

    #[test]
    fn classifier_learns_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let data = clusters(60, 45.0, &mut rng, SplitTag::Train);
        let (_, inputs, labels) = feat_and_labels(&data);
        let clf0 = glorot_init(&[2, 16, 4], Head::Softmax, 21);
        let cfg = TrainConfig::new(64, 60, 1e-3);
        let mut train_rng = ChaCha8Rng::seed_from_u64(22);
        let clf = train_classifier(clf0, &inputs, &labels, &cfg, &mut train_rng).unwrap();
        let acc = accuracy(&clf, &inputs, &labels).unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn classifier_on_random_labels_is_at_chance_on_fresh_data() {
        // Labels independent of position: whatever regions the classifier
        // carves out of the training noise, a fresh sample's label agrees
        // with them with probability exactly 1/4.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut draw = |n: usize| {
            let inputs = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            (inputs, labels)
        };
        let (inputs, labels) = draw(240);
        let (val_inputs, val_labels) = draw(400);

        let clf0 = glorot_init(&[2, 16, 4], Head::Softmax, 24);
        let cfg = TrainConfig::new(64, 60, 1e-3);
        let mut train_rng = ChaCha8Rng::seed_from_u64(25);
        let clf = train_classifier(clf0, &inputs, &labels, &cfg, &mut train_rng).unwrap();
        let acc = accuracy(&clf, &val_inputs, &val_labels).unwrap();
        assert!((acc - 0.25).abs() <= 0.06, "holdout accuracy {acc}");
    }

    #[test]
    fn classifier_training_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(26);
            let data = clusters(30, 45.0, &mut rng, SplitTag::Train);
            let (_, inputs, labels) = feat_and_labels(&data);
            let clf0 = glorot_init(&[2, 12, 4], Head::Softmax, 27);
            let cfg = TrainConfig::new(32, 20, 1e-3);
            let mut train_rng = ChaCha8Rng::seed_from_u64(28);
            train_classifier(clf0, &inputs, &labels, &cfg, &mut train_rng)
                .unwrap()
                .params_flat()
        };
        assert_eq!(run(), run());
    }

    // A classifier trained to cross-entropy optimality on a small discrete
    // channel makes argmax decisions whose exact risk matches the channel's
    // Bayes error.
    #[test]
    fn trained_argmax_risk_matches_bayes_error() {
        let z_points = [
            Location::new(-1000.0, -1000.0),
            Location::new(1000.0, -1000.0),
            Location::new(-1000.0, 1000.0),
            Location::new(1000.0, 1000.0),
        ];
        let rows = [
            [0.7, 0.1, 0.1, 0.1],
            [0.1, 0.7, 0.1, 0.1],
            [0.1, 0.1, 0.4, 0.4],
        ];
        let mech = TabularMechanism::new(
            z_points.to_vec(),
            CondTable::new(Array2::from_shape_vec((3, 4), rows.concat()).unwrap()).unwrap(),
        )
        .unwrap();

        // Exact Bayes error of the channel under a uniform prior.
        let prior = DiscreteDist::uniform(3);
        let mut joint = Array2::zeros((3, 4));
        for x in 0..3 {
            for z in 0..4 {
                joint[[x, z]] = prior.get(x) * rows[x][z];
            }
        }
        let mut sum_max = 0.0;
        for z in 0..4 {
            let mut best = 0.0;
            for x in 0..3 {
                best = f64::max(best, joint[[x, z]]);
            }
            sum_max += best;
        }
        let bayes = 1.0 - sum_max;

        // Train on samples from the channel, in feature coordinates.
        let scaler = CoordScaler { center_x_m: 0.0, center_y_m: 0.0, meters_per_unit: 1000.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let n = 3000;
        let mut inputs = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let x = rng.random_range(0..3);
            let z = mech.sample(x, &mut rng).unwrap();
            let [zx, zy] = scaler.features(&z);
            inputs[[i, 0]] = zx;
            inputs[[i, 1]] = zy;
            labels.push(x);
        }
        let clf0 = glorot_init(&[2, 16, 3], Head::Softmax, 31);
        let cfg = TrainConfig::new(128, 80, 1e-3);
        let mut train_rng = ChaCha8Rng::seed_from_u64(32);
        let clf = train_classifier(clf0, &inputs, &labels, &cfg, &mut train_rng).unwrap();

        // Exact risk of the learned argmax rule: only four distinct inputs.
        let mut grid = Array2::zeros((4, 2));
        for (i, p) in z_points.iter().enumerate() {
            let [x, y] = scaler.features(p);
            grid[[i, 0]] = x;
            grid[[i, 1]] = y;
        }
        let q = clf.forward(&grid).unwrap();
        let mut risk = 1.0;
        for z in 0..4 {
            let row = q.row(z);
            let mut pick = 0;
            for j in 1..3 {
                if row[j] > row[pick] {
                    pick = j;
                }
            }
            risk -= joint[[pick, z]];
        }
        assert!((risk - bayes).abs() < 0.01, "risk {risk} vs bayes {bayes}");
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let good = GameConfig::new(100.0, 4);
        assert!(good.validate().is_ok());
        let mut c = good.clone();
        c.budget_m = 0.0;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.stop_delta = 0.5;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.alpha = -1.0;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.gen_cfg.batch_size = 63;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.gen_sizes = vec![2, 2];
        assert!(c.validate().is_err());
        let mut c = good;
        c.seeds_per_location = 0;
        assert!(c.validate().is_err());
    }

    fn small_game_config(budget_m: f64) -> GameConfig {
        let mut cfg = GameConfig::new(budget_m, 4);
        cfg.gen_sizes = vec![3, 32, 32, 2];
        cfg.clf_sizes = vec![2, 24, 4];
        cfg.gen_cfg = TrainConfig::new(64, 30, 1e-3);
        cfg.clf_cfg = TrainConfig::new(64, 30, 1e-3);
        cfg.seeds_per_location = 4;
        cfg.max_iterations = 5;
        cfg
    }

    #[test]
    fn utility_only_game_stays_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let train = clusters(60, 45.0, &mut rng, SplitTag::Train);
        let val = clusters(20, 45.0, &mut rng, SplitTag::Val);
        let test = clusters(20, 45.0, &mut rng, SplitTag::Test);
        let mut cfg = small_game_config(5.0);
        cfg.beta = 0.0;
        cfg.gen_cfg = TrainConfig::new(64, 120, 2e-3);
        cfg.max_iterations = 3;
        let factory = RngFactory::new(41);
        let out = run_game(&train, &val, &test, &cfg, &factory).unwrap();
        assert!(!out.converged);
        let last = out.logs.last().unwrap();
        assert!(last.distortion_m < 30.0, "distortion {}", last.distortion_m);
        assert!(last.acc_val >= 0.95, "accuracy {}", last.acc_val);
    }

    #[test]
    fn warm_start_spreads_reports_to_budget_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let train = clusters(60, 45.0, &mut rng, SplitTag::Train);
        let scaler = CoordScaler::fit(&train);
        let train_w = scaler.features_of(&train);
        let budget_m = 270.0;
        let mut gen = glorot_init(&[3, 32, 32, 2], Head::Linear, 51);
        warm_start(
            &mut gen,
            &train_w,
            budget_m / scaler.meters_per_unit,
            60,
            64,
            &mut ChaCha8Rng::seed_from_u64(52),
        )
        .unwrap();

        let n = train_w.nrows();
        let mut seed_rng = ChaCha8Rng::seed_from_u64(53);
        let mut inputs = Array2::zeros((n, 3));
        for i in 0..n {
            inputs[[i, 0]] = train_w[[i, 0]];
            inputs[[i, 1]] = train_w[[i, 1]];
            inputs[[i, 2]] = seed_rng.random();
        }
        let z = gen.forward(&inputs).unwrap();
        let mut mean = 0.0;
        for i in 0..n {
            mean += (z[[i, 0]] - inputs[[i, 0]]).hypot(z[[i, 1]] - inputs[[i, 1]]);
        }
        mean = mean * scaler.meters_per_unit / n as f64;
        assert!(
            (mean / budget_m - 1.0).abs() < 0.35,
            "warm-started mean displacement {mean} not near budget {budget_m}"
        );
    }

    #[test]
    fn unsound_mode_never_defeats_fresh_classifiers() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let train = clusters(60, 45.0, &mut rng, SplitTag::Train);
        let val = clusters(20, 45.0, &mut rng, SplitTag::Val);
        let test = clusters(20, 45.0, &mut rng, SplitTag::Test);
        let mut cfg = small_game_config(400.0);
        cfg.clf_sizes = vec![2, 32, 4];
        cfg.gen_cfg = TrainConfig::new(64, 30, 3e-4);
        cfg.clf_cfg = TrainConfig::new(64, 60, 1e-3);
        cfg.mode = GeneratorLossMode::CrossEntropyUnsound;
        // Start sharp: this test is about the swapping dynamic itself, not
        // about how fast cross entropy denoises a wide initial mechanism.
        cfg.warm_start_epochs = 0;
        let factory = RngFactory::new(43);
        let out = run_game(&train, &val, &test, &cfg, &factory).unwrap();
        // Every freshly trained classifier recovers accuracy far above the
        // 0.25 chance level, so the stopping rule never fires.
        assert!(!out.converged);
        assert_eq!(out.logs.len(), 5);
        for log in &out.logs {
            assert!(log.acc_val >= 0.75, "iteration {} accuracy {}", log.iteration, log.acc_val);
        }
        let peak = out.logs.iter().map(|l| l.acc_val).fold(0.0, f64::max);
        assert!(peak >= 0.9, "peak accuracy {peak}");
    }

    #[test]
    fn game_logs_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let train = clusters(40, 45.0, &mut rng, SplitTag::Train);
        let val = clusters(15, 45.0, &mut rng, SplitTag::Val);
        let test = clusters(15, 45.0, &mut rng, SplitTag::Test);
        let mut cfg = small_game_config(270.0);
        cfg.max_iterations = 3;
        let factory = RngFactory::new(45);
        let out = run_game(&train, &val, &test, &cfg, &factory).unwrap();
        for (i, log) in out.logs.iter().enumerate() {
            assert_eq!(log.iteration, i + 1);
            for acc in [log.acc_train, log.acc_val, log.acc_test] {
                assert!((0.0..=1.0).contains(&acc));
            }
            assert!(log.distortion_m >= 0.0);
            assert!(log.mi_nats >= -1e-12);
            assert!(log.seconds >= 0.0);
        }
    }

    #[test]
    fn game_is_deterministic_apart_from_wall_time() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(46);
            let train = clusters(30, 45.0, &mut rng, SplitTag::Train);
            let val = clusters(10, 45.0, &mut rng, SplitTag::Val);
            let test = clusters(10, 45.0, &mut rng, SplitTag::Test);
            let mut cfg = small_game_config(270.0);
            cfg.max_iterations = 2;
            cfg.gen_cfg.epochs = 10;
            cfg.clf_cfg.epochs = 10;
            let factory = RngFactory::new(47);
            let out = run_game(&train, &val, &test, &cfg, &factory).unwrap();
            let stats: Vec<(f64, f64, f64, f64, f64)> = out
                .logs
                .iter()
                .map(|l| (l.acc_train, l.acc_val, l.acc_test, l.mi_nats, l.distortion_m))
                .collect();
            (out.generator.net.params_flat(), stats)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trained_generator_round_trips_and_applies_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.txt");
        let gen = TrainedGenerator {
            net: glorot_init(&[3, 8, 2], Head::Linear, 50),
            scaler: CoordScaler { center_x_m: 3.0, center_y_m: -4.0, meters_per_unit: 215.0 },
        };
        gen.save(&path).unwrap();
        let back = TrainedGenerator::load(&path).unwrap();
        assert_eq!(back, gen);

        let locs = vec![Location::new(100.0, -50.0), Location::new(-30.0, 70.0)];
        let a = gen.apply(&locs, &mut ChaCha8Rng::seed_from_u64(51)).unwrap();
        let b = back.apply(&locs, &mut ChaCha8Rng::seed_from_u64(51)).unwrap();
        assert_eq!(a.len(), 2);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.x_m, q.x_m);
            assert_eq!(p.y_m, q.y_m);
        }
    }
}
