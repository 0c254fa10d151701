//! Mel-frequency cepstral coefficients and the fixed 20×20 feature matrix.
//!
//! Pipeline: pre-emphasis, Hann-windowed frames, power spectrum, triangular
//! Mel filterbank, natural log, orthonormal DCT-II. The fixed matrix is laid
//! out coefficients × time: row `k` is cepstral coefficient `k`, column `t`
//! is frame `t`.

use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::AudioSegment;

/// Rows and columns of the classifier input.
pub const MFCC_DIM: usize = 20;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the one-sided power spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `n_filters × (n_fft / 2 + 1)`.
    pub weights: Array2<f64>,
    pub centers_hz: Vec<f64>,
    pub n_fft: usize,
    pub rate: f64,
}

/// Builds `n_filters` triangles whose corners are equally spaced in Mel
/// between `fmin` and `fmax`. Neighbouring triangles share corners, so each
/// filter reaches zero at its neighbours' centres.
pub fn mel_filterbank(n_filters: usize, n_fft: usize, rate: f64, fmin: f64, fmax: f64) -> Result<FilterBank> {
    if n_filters == 0 || n_fft < 2 {
        return Err(Error::arg("filterbank needs at least one filter and n_fft >= 2"));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= rate / 2.0) {
        return Err(Error::arg(format!(
            "invalid band [{fmin}, {fmax}] Hz for rate {rate} Hz"
        )));
    }
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let corners: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    let mut weights = Array2::zeros((n_filters, bins));
    for m in 0..n_filters {
        let (lo, c, hi) = (corners[m], corners[m + 1], corners[m + 2]);
        for k in 0..bins {
            let f = k as f64 * rate / n_fft as f64;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
            weights[[m, k]] = w.max(0.0);
        }
        if weights.row(m).sum() <= 0.0 {
            return Err(Error::arg(format!(
                "filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer filters or a larger n_fft"
            )));
        }
    }
    Ok(FilterBank {
        weights,
        centers_hz: corners[1..=n_filters].to_vec(),
        n_fft,
        rate,
    })
}

impl FilterBank {
    pub fn n_filters(&self) -> usize {
        self.weights.nrows()
    }

    pub fn apply(&self, power: &[f64]) -> Array1<f64> {
        self.weights.dot(&Array1::from(power.to_vec()))
    }

    /// Bin with the largest weight in filter `m`.
    pub fn peak_bin(&self, m: usize) -> usize {
        self.weights
            .row(m)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub frame_s: f64,
    pub hop_s: f64,
    /// 0 selects the next power of two at or above the frame length.
    pub n_fft: usize,
    pub n_filters: usize,
    pub n_coeffs: usize,
    pub pre_emphasis: f64,
    pub fmin: f64,
    /// 0 selects the Nyquist frequency.
    pub fmax: f64,
    /// Filterbank energies are floored here before the log.
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_s: 0.025,
            hop_s: 0.010,
            n_fft: 0,
            n_filters: 26,
            n_coeffs: MFCC_DIM,
            pre_emphasis: 0.97,
            fmin: 0.0,
            fmax: 0.0,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self, rate: f64) -> usize {
        ((self.frame_s * rate).round() as usize).max(1)
    }

    pub fn hop(&self, rate: f64) -> usize {
        ((self.hop_s * rate).round() as usize).max(1)
    }

    pub fn fft_len(&self, rate: f64) -> usize {
        if self.n_fft > 0 {
            self.n_fft
        } else {
            self.frame_len(rate).next_power_of_two()
        }
    }

    /// Frames produced for `n` samples: `floor((n - frame) / hop) + 1`.
    pub fn frame_count(&self, n: usize, rate: f64) -> usize {
        let frame = self.frame_len(rate);
        if n < frame {
            0
        } else {
            (n - frame) / self.hop(rate) + 1
        }
    }

    pub fn filterbank(&self, rate: f64) -> Result<FilterBank> {
        let fmax = if self.fmax > 0.0 { self.fmax } else { rate / 2.0 };
        mel_filterbank(self.n_filters, self.fft_len(rate), rate, self.fmin, fmax)
    }
}

/// Log-free Mel filterbank energies, `n_filters × T`.
pub fn mel_energies(samples: &[f64], rate: f64, cfg: &MfccConfig) -> Result<Array2<f64>> {
    let frame = cfg.frame_len(rate);
    let hop = cfg.hop(rate);
    let n_fft = cfg.fft_len(rate);
    if n_fft < frame {
        return Err(Error::arg(format!("n_fft {n_fft} shorter than frame {frame}")));
    }
    let frames = cfg.frame_count(samples.len(), rate);
    if frames == 0 {
        return Err(Error::arg(format!(
            "fragment of {} samples is shorter than one {frame}-sample frame",
            samples.len()
        )));
    }
    let fb = cfg.filterbank(rate)?;

    let mut emphasized = Vec::with_capacity(samples.len());
    let mut prev = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        emphasized.push(if i == 0 { x } else { x - cfg.pre_emphasis * prev });
        prev = x;
    }

    let window: Vec<f64> = (0..frame)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos())
        .collect();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; bins];
    let mut out = Array2::zeros((fb.n_filters(), frames));
    for t in 0..frames {
        let start = t * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..frame {
            buf[i].re = emphasized[start + i] * window[i];
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        out.column_mut(t).assign(&fb.apply(&power));
    }
    Ok(out)
}

/// Orthonormal DCT-II of each column, keeping the first `keep` rows.
fn dct_columns(x: &Array2<f64>, keep: usize) -> Array2<f64> {
    let n = x.nrows();
    let keep = keep.min(n);
    let basis = Array2::from_shape_fn((keep, n), |(k, i)| {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        scale * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    });
    basis.dot(x)
}

/// Raw MFCCs of a float signal in [-1, 1), `n_coeffs × T`.
pub fn mfcc_samples(samples: &[f64], rate: f64, cfg: &MfccConfig) -> Result<Array2<f64>> {
    if cfg.n_coeffs == 0 || cfg.n_coeffs > cfg.n_filters {
        return Err(Error::arg("n_coeffs must be in 1..=n_filters"));
    }
    let energies = mel_energies(samples, rate, cfg)?;
    let logged = energies.mapv(|e| e.max(cfg.log_floor).ln());
    Ok(dct_columns(&logged, cfg.n_coeffs))
}

/// Raw MFCCs of an audio fragment, `n_coeffs × T`.
pub fn mfcc(fragment: &AudioSegment, cfg: &MfccConfig) -> Result<Array2<f64>> {
    mfcc_samples(&fragment.to_f64(), fragment.sample_rate as f64, cfg)
}

/// A 20×20 MFCC matrix, coefficients × time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccMatrix {
    coeffs: Array2<f64>,
}

impl MfccMatrix {
    pub fn new(coeffs: Array2<f64>) -> Result<Self> {
        if coeffs.dim() != (MFCC_DIM, MFCC_DIM) {
            return Err(Error::arg(format!(
                "MFCC matrix must be {MFCC_DIM}x{MFCC_DIM}, got {:?}",
                coeffs.dim()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite MFCC entry".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros() -> Self {
        Self {
            coeffs: Array2::zeros((MFCC_DIM, MFCC_DIM)),
        }
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.coeffs
    }

    /// Column `t`, the feature vector for timestep `t`.
    pub fn frame(&self, t: usize) -> ndarray::ArrayView1<'_, f64> {
        self.coeffs.column(t)
    }
}

/// Cuts or zero-pads the time axis to exactly 20 frames; the first frames
/// are kept when cutting.
pub fn fix_time_dim(raw: &Array2<f64>) -> Result<MfccMatrix> {
    let (rows, t) = raw.dim();
    if rows != MFCC_DIM {
        return Err(Error::arg(format!("expected {MFCC_DIM} coefficient rows, got {rows}")));
    }
    if t == 0 {
        return Err(Error::arg("MFCC matrix has no frames"));
    }
    let keep = t.min(MFCC_DIM);
    let mut out = Array2::zeros((MFCC_DIM, MFCC_DIM));
    out.slice_mut(s![.., ..keep]).assign(&raw.slice(s![.., ..keep]));
    MfccMatrix::new(out)
}

/// Fragment to fixed matrix in one step.
pub fn mfcc_matrix(fragment: &AudioSegment, cfg: &MfccConfig) -> Result<MfccMatrix> {
    fix_time_dim(&mfcc(fragment, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn filters_are_nonnegative_and_peak_near_center() {
        let fb = mel_filterbank(26, 512, 16_000.0, 0.0, 8_000.0).unwrap();
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        for m in 0..26 {
            assert!(fb.weights.row(m).sum() > 0.0);
            let center_bin = fb.centers_hz[m] * 512.0 / 16_000.0;
            assert!((fb.peak_bin(m) as f64 - center_bin).abs() <= 1.0, "filter {m}");
        }
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn adjacent_filters_overlap() {
        let fb = mel_filterbank(26, 512, 16_000.0, 0.0, 8_000.0).unwrap();
        for m in 0..25 {
            let shared = fb
                .weights
                .row(m)
                .iter()
                .zip(fb.weights.row(m + 1))
                .any(|(a, b)| *a > 0.0 && *b > 0.0);
            assert!(shared, "filters {m} and {}", m + 1);
        }
    }

    #[test]
    fn impulse_at_center_returns_peak_weight() {
        let fb = mel_filterbank(26, 512, 16_000.0, 0.0, 8_000.0).unwrap();
        for m in [0, 7, 25] {
            let k = fb.peak_bin(m);
            let mut spec = vec![0.0; 257];
            spec[k] = 1.0;
            let resp = fb.apply(&spec);
            assert_eq!(resp[m], fb.weights[[m, k]]);
        }
    }

    #[test]
    fn invalid_band_is_rejected() {
        assert!(mel_filterbank(26, 512, 16_000.0, 4_000.0, 2_000.0).is_err());
        assert!(mel_filterbank(26, 512, 16_000.0, 0.0, 9_000.0).is_err());
        // far more filters than bins
        assert!(mel_filterbank(200, 64, 16_000.0, 0.0, 8_000.0).is_err());
    }

    #[test]
    fn one_second_gives_98_frames() {
        let x: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.05).sin() * 0.1).collect();
        let m = mfcc_samples(&x, 16_000.0, &MfccConfig::default()).unwrap();
        assert_eq!(m.dim(), (20, 98));
        assert_eq!(MfccConfig::default().frame_count(16_000, 16_000.0), 98);
    }

    #[test]
    fn too_short_fragment_is_rejected() {
        let a = AudioSegment::new(16_000, vec![1; 399], 0.0).unwrap();
        assert!(matches!(mfcc(&a, &MfccConfig::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fix_time_dim_cuts_pads_and_keeps() {
        let raw = Array2::from_shape_fn((20, 98), |(k, t)| (k * 100 + t) as f64 + 1.0);
        let cut = fix_time_dim(&raw).unwrap();
        assert_eq!(cut.coeffs(), &raw.slice(s![.., ..20]).to_owned());

        let short = Array2::from_shape_fn((20, 7), |(k, t)| (k * 10 + t) as f64 + 1.0);
        let padded = fix_time_dim(&short).unwrap();
        assert_eq!(padded.coeffs().slice(s![.., ..7]), short);
        assert!(padded.coeffs().slice(s![.., 7..]).iter().all(|&v| v == 0.0));

        let exact = Array2::from_shape_fn((20, 20), |(k, t)| (k * t) as f64);
        assert_eq!(fix_time_dim(&exact).unwrap().coeffs(), &exact);
    }

    #[test]
    fn tone_energy_lands_in_filters_covering_it() {
        let rate = 16_000.0;
        let x: Vec<f64> = (0..8_000).map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / rate).sin()).collect();
        let cfg = MfccConfig::default();
        let e = mel_energies(&x, rate, &cfg).unwrap();
        let fb = cfg.filterbank(rate).unwrap();
        let mean: Vec<f64> = (0..fb.n_filters()).map(|m| e.row(m).mean().unwrap()).collect();
        let top = mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(m, _)| m)
            .unwrap();
        let bin_440 = (440.0 * fb.n_fft as f64 / rate).round() as usize;
        assert!(fb.weights[[top, bin_440]] > 0.0, "top filter {top} does not cover 440 Hz");
    }

    #[test]
    fn deterministic() {
        let x: Vec<f64> = (0..4_000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let a = mfcc_samples(&x, 16_000.0, &MfccConfig::default()).unwrap();
        let b = mfcc_samples(&x, 16_000.0, &MfccConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
