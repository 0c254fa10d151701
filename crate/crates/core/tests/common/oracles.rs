//! Independent reference computations the library is checked against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use uwintent_core::head_dtw::Series;
use uwintent_core::nn::LstmParams;

/// Frame distance written out directly: root of summed squared differences.
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

pub fn sq_euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// Minimum path cost over every monotone, continuous warping path from
/// `(0, 0)` to `(n-1, m-1)`, found by explicit enumeration. Costs are summed
/// from the start of the path.
pub fn exhaustive_dtw(a: &Series, b: &Series, local: fn(&[f64], &[f64]) -> f64) -> f64 {
    fn walk(a: &Series, b: &Series, i: usize, j: usize, acc: f64, local: fn(&[f64], &[f64]) -> f64, best: &mut f64) {
        let acc = acc + local(a.frame(i), b.frame(j));
        if i + 1 == a.len() && j + 1 == b.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, local, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, local, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, local, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, local, &mut best);
    best
}

/// Textbook dynamic-programming DTW with squared frame distance, used to
/// score barycenters independently of the library.
pub fn reference_dtw_sq(a: &Series, b: &Series) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
    d[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let c = sq_euclid(a.frame(i - 1), b.frame(j - 1));
            d[i][j] = c + d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]);
        }
    }
    d[n][m]
}

pub fn random_series(rng: &mut ChaCha8Rng, len: usize, channels: usize) -> Series {
    let data = (0..len * channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Series::new(channels, data).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop LSTM forward pass over the columns of `input`
/// (`input_dim × steps`, row-major), returning class probabilities.
pub fn reference_lstm_probs(p: &LstmParams, input: &[Vec<f64>]) -> Vec<f64> {
    let hd = p.hidden_dim;
    let steps = input[0].len();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let gate = |g: &uwintent_core::nn::Gate, t: usize, h: &[f64], u: usize| -> f64 {
        let mut s = g.b[u];
        for (k, row) in input.iter().enumerate() {
            s += g.w_x[[u, k]] * row[t];
        }
        for (k, hv) in h.iter().enumerate() {
            s += g.w_h[[u, k]] * hv;
        }
        s
    };
    for t in 0..steps {
        let mut h_next = vec![0.0; hd];
        let mut c_next = vec![0.0; hd];
        for u in 0..hd {
            let i = sigmoid(gate(&p.input, t, &h, u));
            let f = sigmoid(gate(&p.forget, t, &h, u));
            let g = gate(&p.cell, t, &h, u).tanh();
            let o = sigmoid(gate(&p.output, t, &h, u));
            c_next[u] = f * c[u] + i * g;
            h_next[u] = o * c_next[u].tanh();
        }
        h = h_next;
        c = c_next;
    }
    let logits: Vec<f64> = (0..p.classes())
        .map(|k| p.readout_b[k] + (0..hd).map(|u| p.readout_w[[k, u]] * h[u]).sum::<f64>())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Closed-form first-order response `x(t) = target + (x0 - target) e^{-t/tau}`.
pub fn first_order(x0: f64, target: f64, tau: f64, t: f64) -> f64 {
    target + (x0 - target) * (-t / tau).exp()
}
