//! Single-layer LSTM classifier for the five hummed scale degrees.
//!
//! Each column of the 20×20 MFCC matrix is one timestep. The final hidden
//! state feeds a linear readout and a softmax. Training is mini-batch Adam on
//! cross-entropy with global gradient-norm clipping; gradients come from
//! backpropagation through time.

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfcc::{mfcc_matrix, MfccConfig, MfccMatrix, MFCC_DIM};
use crate::signal_io::AudioSegment;

pub const N_SCALES: usize = 5;

/// The five hummed scale degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleClass {
    Do,
    Re,
    Mi,
    Fa,
    So,
}

impl ScaleClass {
    pub const ALL: [ScaleClass; N_SCALES] = [
        ScaleClass::Do,
        ScaleClass::Re,
        ScaleClass::Mi,
        ScaleClass::Fa,
        ScaleClass::So,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleClass::Do => "do",
            ScaleClass::Re => "re",
            ScaleClass::Mi => "mi",
            ScaleClass::Fa => "fa",
            ScaleClass::So => "so",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }
}

impl fmt::Display for ScaleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weights of one gate: `hidden × input`, `hidden × hidden` and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

impl Gate {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_x: Array2::zeros((hidden, input)),
            w_h: Array2::zeros((hidden, hidden)),
            b: Array1::zeros(hidden),
        }
    }

    fn preact(&self, x: ArrayView1<f64>, h: &Array1<f64>) -> Array1<f64> {
        self.w_x.dot(&x) + self.w_h.dot(h) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub input: Gate,
    pub forget: Gate,
    pub cell: Gate,
    pub output: Gate,
    /// `classes × hidden`.
    pub readout_w: Array2<f64>,
    pub readout_b: Array1<f64>,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            input: Gate::zeros(hidden_dim, input_dim),
            forget: Gate::zeros(hidden_dim, input_dim),
            cell: Gate::zeros(hidden_dim, input_dim),
            output: Gate::zeros(hidden_dim, input_dim),
            readout_w: Array2::zeros((classes, hidden_dim)),
            readout_b: Array1::zeros(classes),
        }
    }

    /// Weights uniform in ±1/√hidden, biases zero, forget bias 1.
    pub fn init(input_dim: usize, hidden_dim: usize, classes: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, classes);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for gate in [&mut p.input, &mut p.forget, &mut p.cell, &mut p.output] {
            gate.w_x.mapv_inplace(|_| dist.sample(&mut rng));
            gate.w_h.mapv_inplace(|_| dist.sample(&mut rng));
        }
        p.readout_w.mapv_inplace(|_| dist.sample(&mut rng));
        p.forget.b.fill(FORGET_BIAS_INIT);
        p
    }

    pub fn classes(&self) -> usize {
        self.readout_b.len()
    }

    fn arrays(&self) -> [&[f64]; 14] {
        fn sl(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn sv(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            sl(&self.input.w_x),
            sl(&self.input.w_h),
            sv(&self.input.b),
            sl(&self.forget.w_x),
            sl(&self.forget.w_h),
            sv(&self.forget.b),
            sl(&self.cell.w_x),
            sl(&self.cell.w_h),
            sv(&self.cell.b),
            sl(&self.output.w_x),
            sl(&self.output.w_h),
            sv(&self.output.b),
            sl(&self.readout_w),
            sv(&self.readout_b),
        ]
    }

    fn arrays_mut(&mut self) -> [&mut [f64]; 14] {
        fn sl(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn sv(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        [
            sl(&mut self.input.w_x),
            sl(&mut self.input.w_h),
            sv(&mut self.input.b),
            sl(&mut self.forget.w_x),
            sl(&mut self.forget.w_h),
            sv(&mut self.forget.b),
            sl(&mut self.cell.w_x),
            sl(&mut self.cell.w_h),
            sv(&mut self.cell.b),
            sl(&mut self.output.w_x),
            sl(&mut self.output.w_h),
            sv(&mut self.output.b),
            sl(&mut self.readout_w),
            sv(&mut self.readout_b),
        ]
    }

    /// Names of the parameter blocks, in flat order.
    pub const BLOCK_NAMES: [&'static str; 14] = [
        "input.w_x",
        "input.w_h",
        "input.b",
        "forget.w_x",
        "forget.w_h",
        "forget.b",
        "cell.w_x",
        "cell.w_h",
        "cell.b",
        "output.w_x",
        "output.w_h",
        "output.b",
        "readout.w",
        "readout.b",
    ];

    /// Flat index range of every parameter block.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        let mut start = 0;
        Self::BLOCK_NAMES
            .iter()
            .zip(self.arrays())
            .map(|(name, a)| {
                let r = start..start + a.len();
                start = r.end;
                (*name, r)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.arrays().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut offset = 0;
        for a in self.arrays_mut() {
            a.copy_from_slice(&flat[offset..offset + a.len()]);
            offset += a.len();
        }
    }

    /// Hash of the parameter bits, or an error if any value is not finite.
    fn fingerprint(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for a in self.arrays() {
            for &v in a {
                if !v.is_finite() {
                    return Err(Error::Numeric("non-finite LSTM parameter".into()));
                }
                h = (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
            }
        }
        Ok(h)
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim, self.input_dim);
        for g in [&self.input, &self.forget, &self.cell, &self.output] {
            if g.w_x.dim() != (h, d) || g.w_h.dim() != (h, h) || g.b.len() != h {
                return Err(Error::Validation("inconsistent gate shapes".into()));
            }
        }
        if self.readout_w.dim() != (self.readout_b.len(), h) {
            return Err(Error::Validation("inconsistent readout shape".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

/// Everything backpropagation needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    xs: Vec<Array1<f64>>,
    i: Vec<Array1<f64>>,
    f: Vec<Array1<f64>>,
    g: Vec<Array1<f64>>,
    o: Vec<Array1<f64>>,
    /// `c[0]` and `h[0]` are the zero initial state.
    c: Vec<Array1<f64>>,
    h: Vec<Array1<f64>>,
    pub probs: Array1<f64>,
}

impl ForwardCache {
    pub fn loss(&self, target: ScaleClass) -> f64 {
        -self.probs[target.index()].max(f64::MIN_POSITIVE).ln()
    }
}

/// Runs the recurrence over the matrix's columns and returns class
/// probabilities with the cache for [`lstm_backward`].
pub fn lstm_forward(params: &LstmParams, input: &MfccMatrix) -> Result<(Array1<f64>, ForwardCache)> {
    forward_columns(params, input.coeffs())
}

/// Forward pass over the columns of any `input_dim × T` matrix.
pub fn forward_columns(params: &LstmParams, input: &Array2<f64>) -> Result<(Array1<f64>, ForwardCache)> {
    let fingerprint = params.fingerprint()?;
    params.check_shapes()?;
    if input.nrows() != params.input_dim || input.ncols() == 0 {
        return Err(Error::arg(format!(
            "input is {:?}, expected {} rows",
            input.dim(),
            params.input_dim
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input feature".into()));
    }
    let steps = input.ncols();
    let hdim = params.hidden_dim;
    let mut cache = ForwardCache {
        fingerprint,
        xs: Vec::with_capacity(steps),
        i: Vec::with_capacity(steps),
        f: Vec::with_capacity(steps),
        g: Vec::with_capacity(steps),
        o: Vec::with_capacity(steps),
        c: vec![Array1::zeros(hdim)],
        h: vec![Array1::zeros(hdim)],
        probs: Array1::zeros(params.classes()),
    };
    for t in 0..steps {
        let x = input.column(t);
        let h_prev = &cache.h[t];
        let i = params.input.preact(x, h_prev).mapv(sigmoid);
        let f = params.forget.preact(x, h_prev).mapv(sigmoid);
        let g = params.cell.preact(x, h_prev).mapv(f64::tanh);
        let o = params.output.preact(x, h_prev).mapv(sigmoid);
        let c = &f * &cache.c[t] + &i * &g;
        let h = &o * &c.mapv(f64::tanh);
        cache.xs.push(x.to_owned());
        cache.i.push(i);
        cache.f.push(f);
        cache.g.push(g);
        cache.o.push(o);
        cache.c.push(c);
        cache.h.push(h);
    }
    let logits = params.readout_w.dot(&cache.h[steps]) + &params.readout_b;
    let probs = softmax(&logits);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite class probability".into()));
    }
    cache.probs = probs.clone();
    Ok((probs, cache))
}

fn outer_add(acc: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &av) in acc.rows_mut().into_iter().zip(a) {
        if av != 0.0 {
            row.scaled_add(av, b);
        }
    }
}

/// Gradient of the cross-entropy loss with respect to every parameter,
/// returned in the same shape as the parameters.
pub fn lstm_backward(params: &LstmParams, cache: &ForwardCache, target: ScaleClass) -> Result<LstmParams> {
    if params.fingerprint()? != cache.fingerprint {
        return Err(Error::Contract("forward cache was computed with different parameters".into()));
    }
    if target.index() >= params.classes() {
        return Err(Error::arg("target outside the readout's classes"));
    }
    let mut grad = LstmParams::zeros(params.input_dim, params.hidden_dim, params.classes());
    let steps = cache.xs.len();

    let mut dlogits = cache.probs.clone();
    dlogits[target.index()] -= 1.0;
    outer_add(&mut grad.readout_w, &dlogits, &cache.h[steps]);
    grad.readout_b += &dlogits;

    let mut dh = params.readout_w.t().dot(&dlogits);
    let mut dc = Array1::<f64>::zeros(params.hidden_dim);
    for t in (0..steps).rev() {
        let (i, f, g, o) = (&cache.i[t], &cache.f[t], &cache.g[t], &cache.o[t]);
        let tanh_c = cache.c[t + 1].mapv(f64::tanh);
        let d_o = &dh * &tanh_c;
        dc = dc + &dh * o * &tanh_c.mapv(|v| 1.0 - v * v);
        let d_i = &dc * g;
        let d_g = &dc * i;
        let d_f = &dc * &cache.c[t];

        let da_i = d_i * &i.mapv(|v| v * (1.0 - v));
        let da_f = d_f * &f.mapv(|v| v * (1.0 - v));
        let da_g = d_g * &g.mapv(|v| 1.0 - v * v);
        let da_o = d_o * &o.mapv(|v| v * (1.0 - v));

        let x = &cache.xs[t];
        let h_prev = &cache.h[t];
        let mut dh_prev = Array1::<f64>::zeros(params.hidden_dim);
        for (gate, pgate, da) in [
            (&mut grad.input, &params.input, &da_i),
            (&mut grad.forget, &params.forget, &da_f),
            (&mut grad.cell, &params.cell, &da_g),
            (&mut grad.output, &params.output, &da_o),
        ] {
            outer_add(&mut gate.w_x, da, x);
            outer_add(&mut gate.w_h, da, h_prev);
            gate.b += da;
            dh_prev += &pgate.w_h.t().dot(da);
        }
        dc = &dc * f;
        dh = dh_prev;
    }
    Ok(grad)
}

/// Mini-batch Adam settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm the gradient is clipped to.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch's batches.
    pub loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_eval_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.eval_accuracy)
    }
}

/// Adam optimiser over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales `grad` down so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradient(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Mean loss and mean flat gradient over a batch.
pub fn batch_gradient(params: &LstmParams, batch: &[&(MfccMatrix, ScaleClass)]) -> Result<(f64, Vec<f64>, usize)> {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, y) in batch {
        let (probs, cache) = lstm_forward(params, x)?;
        loss += cache.loss(*y);
        if argmax(&probs) == y.index() {
            correct += 1;
        }
        let g = lstm_backward(params, &cache, *y)?;
        for (acc, v) in grad.iter_mut().zip(g.to_flat()) {
            *acc += v;
        }
    }
    let n = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad, correct))
}

fn argmax(p: &Array1<f64>) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Fraction of examples whose argmax class matches the label.
pub fn accuracy(params: &LstmParams, data: &[(MfccMatrix, ScaleClass)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (x, y) in data {
        let (p, _) = lstm_forward(params, x)?;
        if argmax(&p) == y.index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains a fresh network. `eval` may be empty; when it is not, its accuracy
/// is recorded after each epoch.
pub fn train(
    dataset: &[(MfccMatrix, ScaleClass)],
    eval: &[(MfccMatrix, ScaleClass)],
    cfg: &TrainConfig,
) -> Result<(LstmParams, TrainReport)> {
    let missing: Vec<&str> = ScaleClass::ALL
        .iter()
        .filter(|c| !dataset.iter().any(|(_, y)| y == *c))
        .map(|c| c.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Training(format!("no training examples for: {}", missing.join(", "))));
    }
    if cfg.batch_size == 0 || cfg.hidden_dim == 0 {
        return Err(Error::arg("batch_size and hidden_dim must be positive"));
    }
    let mut params = LstmParams::init(MFCC_DIM, cfg.hidden_dim, N_SCALES, cfg.seed);
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&(MfccMatrix, ScaleClass)> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, mut grad, c) = batch_gradient(&params, &batch)?;
            clip_gradient(&mut grad, cfg.clip_norm);
            adam.update(&mut flat, &grad);
            params.set_flat(&flat);
            loss_sum += loss;
            batches += 1;
            correct += c;
        }
        let eval_accuracy = if eval.is_empty() { None } else { Some(accuracy(&params, eval)?) };
        report.epochs.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / batches.max(1) as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
            eval_accuracy,
        });
    }
    Ok((params, report))
}

/// A classification, or the no-intention token when confidence is too low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub best: ScaleClass,
    pub confidence: f64,
    pub accepted: bool,
}

impl Prediction {
    pub fn class(&self) -> Option<ScaleClass> {
        self.accepted.then_some(self.best)
    }
}

pub const DEFAULT_REJECT_CONFIDENCE: f64 = 0.5;

pub fn predict(params: &LstmParams, input: &MfccMatrix, reject_confidence: f64) -> Result<Prediction> {
    let (p, _) = lstm_forward(params, input)?;
    let best = argmax(&p);
    let confidence = p[best];
    Ok(Prediction {
        best: ScaleClass::from_index(best).ok_or_else(|| Error::Validation("readout has more than five classes".into()))?,
        confidence,
        accepted: confidence >= reject_confidence,
    })
}

/// Per-coefficient standardisation fitted on training matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; MFCC_DIM],
            std: vec![1.0; MFCC_DIM],
        }
    }

    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a MfccMatrix>) -> Self {
        let mut sum = [0.0; MFCC_DIM];
        let mut sq = [0.0; MFCC_DIM];
        let mut n = 0usize;
        for m in matrices {
            for (k, row) in m.coeffs().rows().into_iter().enumerate() {
                sum[k] += row.sum();
                sq[k] += row.iter().map(|v| v * v).sum::<f64>();
            }
            n += MFCC_DIM;
        }
        if n == 0 {
            return Self::identity();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64 - m * m).max(0.0).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, m: &MfccMatrix) -> MfccMatrix {
        let mut out = m.coeffs().clone();
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| (v - self.mean[k]) / self.std[k]);
        }
        MfccMatrix::new(out).expect("standardised matrix keeps its shape")
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything needed to classify a fragment exactly as in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleModel {
    pub version: u32,
    pub labels: Vec<String>,
    pub mfcc: MfccConfig,
    pub norm: FeatureNorm,
    pub params: LstmParams,
    pub reject_confidence: f64,
}

impl ScaleModel {
    pub fn features(&self, fragment: &AudioSegment) -> Result<MfccMatrix> {
        Ok(self.norm.apply(&mfcc_matrix(fragment, &self.mfcc)?))
    }

    pub fn predict(&self, fragment: &AudioSegment) -> Result<Prediction> {
        predict(&self.params, &self.features(fragment)?, self.reject_confidence)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ScaleModel = serde_json::from_str(text)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                m.version
            )));
        }
        let expected: Vec<&str> = ScaleClass::ALL.iter().map(|c| c.name()).collect();
        if m.labels != expected {
            return Err(Error::Validation(format!("unexpected class labels {:?}", m.labels)));
        }
        m.params.check_shapes()?;
        Ok(m)
    }
}

/// Computes raw fixed matrices for fragments, fits the feature norm on the
/// training part, and trains the network.
pub fn train_scale_model(
    train_set: &[(AudioSegment, ScaleClass)],
    eval_set: &[(AudioSegment, ScaleClass)],
    mfcc_cfg: &MfccConfig,
    cfg: &TrainConfig,
) -> Result<(ScaleModel, TrainReport)> {
    let raw = |set: &[(AudioSegment, ScaleClass)]| -> Result<Vec<(MfccMatrix, ScaleClass)>> {
        set.iter().map(|(a, y)| Ok((mfcc_matrix(a, mfcc_cfg)?, *y))).collect()
    };
    let train_raw = raw(train_set)?;
    let eval_raw = raw(eval_set)?;
    let norm = FeatureNorm::fit(train_raw.iter().map(|(m, _)| m));
    let apply = |set: Vec<(MfccMatrix, ScaleClass)>| -> Vec<(MfccMatrix, ScaleClass)> {
        set.into_iter().map(|(m, y)| (norm.apply(&m), y)).collect()
    };
    let (params, report) = train(&apply(train_raw), &apply(eval_raw), cfg)?;
    Ok((
        ScaleModel {
            version: MODEL_FORMAT_VERSION,
            labels: ScaleClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            mfcc: mfcc_cfg.clone(),
            norm,
            params,
            reject_confidence: DEFAULT_REJECT_CONFIDENCE,
        },
        report,
    ))
}
