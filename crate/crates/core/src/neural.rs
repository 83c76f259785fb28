//! Minimal feed-forward network core, sized for this project's two
//! architectures and nothing more.
//!
//! Dense layers with ReLU hidden activations and a linear or softmax head,
//! Glorot-uniform initialization, analytic backprop (including the gradient
//! with respect to the *input* batch, which lets a frozen classifier pass
//! loss signal back into the generator that feeds it), Adam updates, and a
//! central-difference gradient checker. Everything is `f64` and
//! deterministic given the seeds.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Softmax,
}

impl Head {
    fn tag(&self) -> &'static str {
        match self {
            Head::Linear => "linear",
            Head::Softmax => "softmax",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "linear" => Ok(Head::Linear),
            "softmax" => Ok(Head::Softmax),
            other => Err(Error::invalid(format!("unknown head tag {other:?}"))),
        }
    }
}

/// Hyperparameters for one training run of one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn new(batch_size: usize, epochs: usize, learning_rate: f64) -> Self {
        TrainConfig {
            batch_size,
            epochs,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A fully connected network. Layer `l` maps `sizes[l] → sizes[l+1]`;
/// every hidden layer is ReLU, the last applies the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    head: Head,
    seed: u64,
    pub iteration: u64,
}

/// Per-parameter gradients in the same shapes as the network, plus the
/// gradient with respect to the input batch.
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

/// Activations remembered by [`Mlp::forward_cached`] for one backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    // post[0] is the input batch; post[l] the output of layer l-1 after
    // activation; the last entry is the head output.
    post: Vec<Array2<f64>>,
    // ReLU masks per hidden layer (1.0 where the pre-activation was > 0).
    masks: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("cache holds at least the input")
    }
}

/// Glorot-uniform init: weights ~ U(−a, a) with a = √(6/(fan_in+fan_out)),
/// giving variance 2/(fan_in+fan_out); biases zero.
pub fn glorot_init(sizes: &[usize], head: Head, seed: u64) -> Mlp {
    assert!(sizes.len() >= 2, "need at least input and output sizes");
    assert!(sizes.iter().all(|&s| s > 0), "zero-width layer");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a));
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Mlp { sizes: sizes.to_vec(), weights, biases, head, seed, iteration: 0 }
}

impl Mlp {
    /// Assembles a network from explicit parameters, checking that shapes
    /// chain correctly.
    pub fn from_parts(
        sizes: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        head: Head,
        seed: u64,
        iteration: u64,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("need at least input and output sizes"));
        }
        if weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(Error::dim("layer count does not match sizes"));
        }
        for l in 0..weights.len() {
            if weights[l].dim() != (sizes[l], sizes[l + 1]) {
                return Err(Error::dim(format!(
                    "weight {l} is {:?}, expected ({}, {})",
                    weights[l].dim(),
                    sizes[l],
                    sizes[l + 1]
                )));
            }
            if biases[l].len() != sizes[l + 1] {
                return Err(Error::dim(format!(
                    "bias {l} has length {}, expected {}",
                    biases[l].len(),
                    sizes[l + 1]
                )));
            }
        }
        Ok(Mlp { sizes, weights, biases, head, seed, iteration })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let mut cache = self.forward_cached(batch)?;
        Ok(cache.post.pop().expect("cache holds at least the input"))
    }

    /// Copy of this network with parameters replaced from a flat slice, in
    /// [`Mlp::params_flat`] order. Used by gradient checks.
    pub fn clone_with_params(&self, flat: &[f64]) -> Mlp {
        let mut net = self.clone();
        net.set_params_flat(flat);
        net
    }

    pub fn forward_cached(&self, batch: &Array2<f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.input_width() {
            return Err(Error::dim(format!(
                "batch width {} vs input width {}",
                batch.ncols(),
                self.input_width()
            )));
        }
        let layers = self.weights.len();
        let mut post = Vec::with_capacity(layers + 1);
        let mut masks = Vec::with_capacity(layers.saturating_sub(1));
        post.push(batch.clone());
        for l in 0..layers {
            let mut z = post[l].dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < layers {
                let mask = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                z = z * &mask;
                masks.push(mask);
            } else if self.head == Head::Softmax {
                softmax_rows(&mut z);
            }
            post.push(z);
        }
        Ok(ForwardCache { post, masks })
    }

    /// Backward pass from `d_out = ∂Loss/∂output` (for a softmax head, the
    /// derivative with respect to the probabilities; the softmax Jacobian is
    /// applied here). Returns parameter gradients and the input gradient.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Grads {
        let (dw, db, d_input) = self.backward_impl(cache, d_out, true);
        Grads { weights: dw, biases: db, input: d_input }
    }

    /// Like [`Mlp::backward`] but skips parameter gradients; used when this
    /// network is frozen and only the loss signal at its input is needed.
    pub fn backward_to_input(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Array2<f64> {
        self.backward_impl(cache, d_out, false).2
    }

    #[allow(clippy::type_complexity)]
    fn backward_impl(
        &self,
        cache: &ForwardCache,
        d_out: &Array2<f64>,
        want_params: bool,
    ) -> (Vec<Array2<f64>>, Vec<Array1<f64>>, Array2<f64>) {
        let layers = self.weights.len();
        assert_eq!(cache.post.len(), layers + 1, "cache does not match net");
        assert_eq!(d_out.dim(), cache.post[layers].dim(), "loss grad shape");

        // Head: convert ∂L/∂output into ∂L/∂logits of the last layer. For
        // softmax, dz_j = q_j·(g_j − Σ_k g_k·q_k) per row.
        let mut dz = match self.head {
            Head::Linear => d_out.clone(),
            Head::Softmax => {
                let q = &cache.post[layers];
                let gq = d_out * q;
                let rowsum = gq.sum_axis(Axis(1)).insert_axis(Axis(1));
                gq - q * &rowsum
            }
        };

        let mut dw = Vec::with_capacity(layers);
        let mut db = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            if want_params {
                dw.push(cache.post[l].t().dot(&dz));
                db.push(dz.sum_axis(Axis(0)));
            }
            let mut d_prev = dz.dot(&self.weights[l].t());
            if l > 0 {
                d_prev = d_prev * &cache.masks[l - 1];
            }
            dz = d_prev;
        }
        dw.reverse();
        db.reverse();
        (dw, db, dz)
    }

    /// All parameters flattened layer by layer (weights row-major, then
    /// biases), the order used by checkpoints and the gradient checker.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            out.extend(self.weights[l].iter());
            out.extend(self.biases[l].iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count");
        let mut k = 0;
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter_mut() {
                *v = flat[k];
                k += 1;
            }
            for v in self.biases[l].iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }

    /// Writes a plain-text checkpoint; floats use shortest round-trip
    /// formatting so reload is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "# mlp checkpoint")?;
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "sizes {}", sizes.join(" "))?;
        writeln!(out, "head {}", self.head.tag())?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "iteration {}", self.iteration)?;
        for l in 0..self.weights.len() {
            writeln!(out, "weights {} {} {}", l, self.sizes[l], self.sizes[l + 1])?;
            for row in self.weights[l].rows() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", cells.join(" "))?;
            }
            writeln!(out, "biases {} {}", l, self.sizes[l + 1])?;
            let cells: Vec<String> = self.biases[l].iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(" "))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        // (1-based line number, content), blank and comment lines dropped.
        let rows: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let mut k = 0;
        let mut take = |prefix: &str| -> Result<(usize, String)> {
            let &(ln, line) = rows
                .get(k)
                .ok_or_else(|| err(rows.last().map_or(0, |r| r.0), format!("missing `{prefix}`")))?;
            k += 1;
            match line.strip_prefix(prefix) {
                Some(rest) => Ok((ln, rest.trim().to_string())),
                None => Err(err(ln, format!("expected `{prefix} ...`, got {line:?}"))),
            }
        };
        fn nums<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
            s.split_whitespace().map(|t| t.parse()).collect()
        }

        let (ln, sizes_s) = take("sizes")?;
        let sizes: Vec<usize> = nums(&sizes_s).map_err(|e| err(ln, format!("sizes: {e}")))?;
        let (_, head_s) = take("head")?;
        let head = Head::from_tag(&head_s)?;
        let (ln, seed_s) = take("seed")?;
        let seed: u64 = seed_s.parse().map_err(|e| err(ln, format!("seed: {e}")))?;
        let (ln, iter_s) = take("iteration")?;
        let iteration: u64 = iter_s.parse().map_err(|e| err(ln, format!("iteration: {e}")))?;
        if sizes.len() < 2 {
            return Err(err(ln, "need at least two layer sizes".into()));
        }

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (ln, dims) = take("weights")?;
            let fields: Vec<usize> = nums(&dims).map_err(|e| err(ln, format!("weights: {e}")))?;
            if fields != [l, sizes[l], sizes[l + 1]] {
                return Err(err(ln, format!("unexpected weights header {fields:?}")));
            }
            let mut w = Array2::zeros((sizes[l], sizes[l + 1]));
            for r in 0..sizes[l] {
                let (ln, line) = take("")?;
                let row: Vec<f64> = nums(&line).map_err(|e| err(ln, format!("weight: {e}")))?;
                if row.len() != sizes[l + 1] {
                    return Err(err(ln, format!("expected {} entries", sizes[l + 1])));
                }
                for (c, v) in row.into_iter().enumerate() {
                    w[[r, c]] = v;
                }
            }
            weights.push(w);
            let (ln, dims) = take("biases")?;
            let fields: Vec<usize> = nums(&dims).map_err(|e| err(ln, format!("biases: {e}")))?;
            if fields != [l, sizes[l + 1]] {
                return Err(err(ln, format!("unexpected biases header {fields:?}")));
            }
            let (ln, line) = take("")?;
            let b: Vec<f64> = nums(&line).map_err(|e| err(ln, format!("bias: {e}")))?;
            if b.len() != sizes[l + 1] {
                return Err(err(ln, format!("expected {} entries", sizes[l + 1])));
            }
            biases.push(Array1::from_vec(b));
        }
        Mlp::from_parts(sizes, weights, biases, head, seed, iteration)
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Adam accumulator state, shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        let n = net.param_count();
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update in place. Zero gradients leave parameters untouched.
pub fn adam_step(net: &mut Mlp, grads: &Grads, state: &mut AdamState, cfg: &TrainConfig) {
    let mut flat = net.params_flat();
    let gflat = {
        let mut g: Vec<f64> = Vec::with_capacity(flat.len());
        for l in 0..grads.weights.len() {
            g.extend(grads.weights[l].iter());
            g.extend(grads.biases[l].iter());
        }
        g
    };
    assert_eq!(gflat.len(), flat.len(), "gradient shapes match parameters");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..flat.len() {
        let g = gflat[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        if g == 0.0 && state.m[i] == 0.0 && state.v[i] == 0.0 {
            continue;
        }
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        flat[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    net.set_params_flat(&flat);
}

/// Central finite differences of a scalar function at `point`:
/// `(f(x+h·e_i) − f(x−h·e_i)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(point.len());
    let mut work = point.to_vec();
    for i in 0..point.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = f(&work);
        work[i] = orig - eps;
        let minus = f(&work);
        work[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    grad
}

/// Largest relative disagreement between an analytic and a reference
/// gradient, with a small absolute floor so near-zero entries compare sanely.
pub fn max_rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    analytic
        .iter()
        .zip(reference)
        .map(|(&a, &r)| (a - r).abs() / a.abs().max(r.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
