//! Filtering, adaptive-threshold endpoint detection, spectral noise reduction
//! and the 64 ms amplitude tracker.
//!
//! Both modalities share one detector: a per-frame activity energy is compared
//! against `median + k_sigma * MAD` of a trailing buffer of quiet frames. A
//! segment opens when the energy rises above that threshold and closes when
//! it falls to `offset_ratio` of it; closed segments are held for `min_gap`
//! frames so that a quick re-onset merges into the same segment.

use std::collections::VecDeque;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{estimate_rate, AudioSegment, ImuSample, StreamWindow};

/// Second-order Butterworth low-pass section (transposed direct form II).
#[derive(Debug, Clone)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    s1: f64,
    s2: f64,
    primed: bool,
}

impl Biquad {
    pub fn low_pass(cutoff: f64, rate: f64) -> Result<Self> {
        if !(cutoff > 0.0 && rate > 0.0 && cutoff < rate / 2.0) {
            return Err(Error::arg(format!(
                "low-pass cutoff {cutoff} Hz must lie in (0, {}) for rate {rate} Hz",
                rate / 2.0
            )));
        }
        let w0 = 2.0 * std::f64::consts::PI * cutoff / rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0 / a0;
        Ok(Self {
            b: [b0, (1.0 - cos) / a0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
            s1: 0.0,
            s2: 0.0,
            primed: false,
        })
    }

    /// Gain at 0 Hz.
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    pub fn process(&mut self, x: f64) -> f64 {
        if !self.primed {
            // start in steady state for the first input so a constant
            // stream produces no start-up transient
            self.s1 = x * (1.0 - self.b[0]);
            self.s2 = x * (self.b[2] - self.a[1]);
            self.primed = true;
        }
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Low-pass filters one channel. Output has the input's length.
pub fn low_pass(stream: &[f64], cutoff: f64, rate: f64) -> Result<Vec<f64>> {
    let mut f = Biquad::low_pass(cutoff, rate)?;
    Ok(stream.iter().map(|&x| f.process(x)).collect())
}

/// Low-pass filters all six channels of an IMU stream.
pub fn low_pass_imu(stream: &[ImuSample], cutoff: f64, rate: f64) -> Result<Vec<ImuSample>> {
    let mut lp = ImuLowPass::new(cutoff, rate)?;
    Ok(stream.iter().map(|s| lp.process(s)).collect())
}

#[derive(Debug, Clone)]
pub struct ImuLowPass {
    filters: Vec<Biquad>,
}

impl ImuLowPass {
    pub fn new(cutoff: f64, rate: f64) -> Result<Self> {
        let f = Biquad::low_pass(cutoff, rate)?;
        Ok(Self {
            filters: vec![f; 6],
        })
    }

    pub fn process(&mut self, s: &ImuSample) -> ImuSample {
        let ch = s.channels();
        let mut out = [0.0; 6];
        for ((o, x), f) in out.iter_mut().zip(ch).zip(self.filters.iter_mut()) {
            *o = f.process(x);
        }
        ImuSample::new(s.t, [out[0], out[1], out[2]], [out[3], out[4], out[5]])
    }
}

/// Endpoint-detection parameters, in seconds unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub k_sigma: f64,
    /// Length of the trailing buffer of quiet frames feeding the threshold.
    pub quiet_window_s: f64,
    /// Quiet time needed before the first onset can fire.
    pub warmup_s: f64,
    /// Offset fires when energy falls below the noise median plus this
    /// fraction of the onset threshold's excess over that median.
    pub offset_ratio: f64,
    pub min_seg_s: f64,
    pub max_seg_s: f64,
    pub min_gap_s: f64,
    /// Extra context added on both sides of a detected segment.
    pub pad_s: f64,
    /// Lower bound on the onset threshold, in activity-energy units.
    pub min_threshold: f64,
    /// Audio analysis frame; IMU segmentation works per sample.
    pub frame_s: f64,
    pub hop_s: f64,
    /// Frames a segment edge may be extended by the zero-crossing check.
    pub zcr_extend_frames: usize,
}

impl SegmenterConfig {
    pub fn imu_default() -> Self {
        Self {
            k_sigma: 4.0,
            quiet_window_s: 2.0,
            warmup_s: 0.5,
            offset_ratio: 0.5,
            min_seg_s: 0.15,
            max_seg_s: 3.0,
            min_gap_s: 0.2,
            pad_s: 0.05,
            min_threshold: 1.0,
            frame_s: 0.0,
            hop_s: 0.0,
            zcr_extend_frames: 0,
        }
    }

    pub fn audio_default() -> Self {
        Self {
            k_sigma: 4.0,
            quiet_window_s: 2.0,
            warmup_s: 0.1,
            offset_ratio: 0.5,
            min_seg_s: 0.15,
            max_seg_s: 3.0,
            min_gap_s: 0.2,
            pad_s: 0.0,
            min_threshold: 1e-7,
            frame_s: 0.032,
            hop_s: 0.016,
            zcr_extend_frames: 2,
        }
    }

    fn frames(&self, secs: f64, frame_rate: f64) -> usize {
        (secs * frame_rate).round().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_sigma >= 0.0 && self.offset_ratio > 0.0 && self.offset_ratio <= 1.0) {
            return Err(Error::arg("segmenter: k_sigma >= 0 and offset_ratio in (0, 1] required"));
        }
        if !(self.min_seg_s >= 0.0 && self.max_seg_s > self.min_seg_s) {
            return Err(Error::arg("segmenter: need 0 <= min_seg_s < max_seg_s"));
        }
        if self.quiet_window_s <= 0.0 {
            return Err(Error::arg("segmenter: quiet_window_s must be positive"));
        }
        Ok(())
    }
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self::imu_default()
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Scales a median absolute deviation to a standard deviation for normally
/// distributed data.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// `median + k * sigma` over a trailing buffer of quiet-frame energies, with
/// sigma estimated robustly as `1.4826 * MAD`.
#[derive(Debug, Clone)]
pub struct AdaptiveThreshold {
    quiet: StreamWindow<f64>,
    k_sigma: f64,
    floor: f64,
}

impl AdaptiveThreshold {
    pub fn new(capacity: usize, k_sigma: f64, floor: f64) -> Self {
        Self {
            quiet: StreamWindow::new(capacity),
            k_sigma,
            floor,
        }
    }

    pub fn observe_quiet(&mut self, energy: f64) {
        self.quiet.push(energy);
    }

    pub fn len(&self) -> usize {
        self.quiet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quiet.is_empty()
    }

    /// Median and median absolute deviation of the quiet buffer.
    pub fn median_mad(&self) -> (f64, f64) {
        let mut v = self.quiet.to_vec();
        v.sort_by(f64::total_cmp);
        let med = median(&v);
        let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        (med, median(&dev))
    }

    /// The statistical threshold, ignoring the floor.
    pub fn raw_threshold(&self) -> f64 {
        let (med, mad) = self.median_mad();
        med + self.k_sigma * MAD_TO_SIGMA * mad
    }

    pub fn threshold(&self) -> f64 {
        self.raw_threshold().max(self.floor)
    }
}

/// A detected active interval in frame indices, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub start: usize,
    pub end: usize,
    /// Frame index at which the detection became final.
    pub decided_at: usize,
}

#[derive(Debug, Clone, Copy)]
enum DetectorState {
    Idle,
    Active { start: usize, threshold: f64, offset: f64 },
    Closing { start: usize, end: usize, threshold: f64, offset: f64 },
    /// After a forced cut at max length, wait for the energy to fall.
    Cooldown { offset: f64 },
}

/// Streaming hysteresis detector over per-frame activity energies.
#[derive(Debug, Clone)]
pub struct EndpointDetector {
    threshold: AdaptiveThreshold,
    warmup: usize,
    offset_ratio: f64,
    min_len: usize,
    max_len: usize,
    min_gap: usize,
    state: DetectorState,
    index: usize,
}

impl EndpointDetector {
    /// `frame_rate` converts the configuration's seconds into frames.
    pub fn new(cfg: &SegmenterConfig, frame_rate: f64) -> Self {
        let quiet = cfg.frames(cfg.quiet_window_s, frame_rate).max(1);
        Self {
            threshold: AdaptiveThreshold::new(quiet, cfg.k_sigma, cfg.min_threshold),
            warmup: cfg.frames(cfg.warmup_s, frame_rate).clamp(1, quiet),
            offset_ratio: cfg.offset_ratio,
            min_len: cfg.frames(cfg.min_seg_s, frame_rate),
            max_len: cfg.frames(cfg.max_seg_s, frame_rate).max(1),
            min_gap: cfg.frames(cfg.min_gap_s, frame_rate),
            state: DetectorState::Idle,
            index: 0,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.state, DetectorState::Idle)
    }

    pub fn current_threshold(&self) -> f64 {
        match self.state {
            DetectorState::Idle => self.threshold.threshold(),
            DetectorState::Active { threshold, .. }
            | DetectorState::Closing { threshold, .. }
            => threshold,
            DetectorState::Cooldown { offset } => offset,
        }
    }

    pub fn adaptive(&self) -> &AdaptiveThreshold {
        &self.threshold
    }

    /// Number of frames consumed so far.
    pub fn position(&self) -> usize {
        self.index
    }

    fn finish(&self, start: usize, end: usize) -> Option<Detection> {
        (end - start >= self.min_len.max(1)).then_some(Detection {
            start,
            end,
            decided_at: self.index,
        })
    }

    pub fn push(&mut self, energy: f64) -> Option<Detection> {
        let i = self.index;
        let mut out = None;
        self.state = match self.state {
            DetectorState::Idle => {
                let thr = self.threshold.threshold();
                if self.threshold.len() >= self.warmup && energy > thr {
                    let (med, _) = self.threshold.median_mad();
                    DetectorState::Active {
                        start: i,
                        threshold: thr,
                        offset: med + self.offset_ratio * (thr - med),
                    }
                } else {
                    self.threshold.observe_quiet(energy);
                    DetectorState::Idle
                }
            }
            DetectorState::Active {
                start,
                threshold,
                offset,
            } => {
                if energy <= offset {
                    if i - start < self.min_len {
                        // too short to be a segment on its own: drop it
                        // rather than let it merge into a later one
                        DetectorState::Idle
                    } else {
                        DetectorState::Closing {
                            start,
                            end: i,
                            threshold,
                            offset,
                        }
                    }
                } else if i + 1 - start >= self.max_len {
                    out = self.finish(start, i + 1);
                    DetectorState::Cooldown { offset }
                } else {
                    DetectorState::Active {
                        start,
                        threshold,
                        offset,
                    }
                }
            }
            DetectorState::Closing {
                start,
                end,
                threshold,
                offset,
            } => {
                if energy > threshold && i + 1 - start < self.max_len {
                    DetectorState::Active {
                        start,
                        threshold,
                        offset,
                    }
                } else if i + 1 - end >= self.min_gap {
                    out = self.finish(start, end);
                    DetectorState::Idle
                } else {
                    DetectorState::Closing {
                        start,
                        end,
                        threshold,
                        offset,
                    }
                }
            }
            DetectorState::Cooldown { offset } => {
                if energy <= offset {
                    DetectorState::Idle
                } else {
                    DetectorState::Cooldown { offset }
                }
            }
        };
        self.index += 1;
        out
    }

    /// Closes any open segment at end of stream.
    pub fn flush(&mut self) -> Option<Detection> {
        let out = match self.state {
            DetectorState::Active { start, .. } => self.finish(start, self.index),
            DetectorState::Closing { start, end, .. } => self.finish(start, end),
            _ => None,
        };
        self.state = DetectorState::Idle;
        out
    }
}

/// Per-sample motion energy: squared norm of gravity-removed acceleration
/// plus squared norm of the Euler-angle rate (deg/s).
#[derive(Debug, Clone)]
pub struct MotionEnergy {
    gravity: [f64; 3],
    gravity_alpha: f64,
    prev: Option<ImuSample>,
}

impl MotionEnergy {
    /// `gravity_cutoff` sets the corner of the one-pole tracker whose output
    /// is subtracted from the acceleration.
    pub fn new(rate: f64, gravity_cutoff: f64) -> Self {
        let dt = 1.0 / rate;
        let rc = 1.0 / (2.0 * std::f64::consts::PI * gravity_cutoff);
        Self {
            gravity: [0.0; 3],
            gravity_alpha: dt / (rc + dt),
            prev: None,
        }
    }

    pub fn push(&mut self, s: &ImuSample) -> f64 {
        let Some(prev) = self.prev.replace(*s) else {
            self.gravity = s.accel;
            return 0.0;
        };
        let mut accel = 0.0;
        for (g, &a) in self.gravity.iter_mut().zip(&s.accel) {
            *g += self.gravity_alpha * (a - *g);
            accel += (a - *g).powi(2);
        }
        let dt = s.t - prev.t;
        let mut rate = 0.0;
        if dt > 0.0 {
            for k in 0..3 {
                let d = crate::signal_io::normalize_angle(s.euler[k] - prev.euler[k]) / dt;
                rate += d * d;
            }
        }
        accel + rate
    }
}

pub const GRAVITY_CUTOFF_HZ: f64 = 0.3;

/// Motion energy of a whole stream.
pub fn motion_energy(stream: &[ImuSample]) -> Vec<f64> {
    let rate = estimate_rate(stream).unwrap_or(100.0);
    let mut me = MotionEnergy::new(rate, GRAVITY_CUTOFF_HZ);
    stream.iter().map(|s| me.push(s)).collect()
}

/// A head-motion segment cut from a (filtered) IMU stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub samples: Vec<ImuSample>,
    pub start_idx: usize,
    /// Exclusive.
    pub end_idx: usize,
}

impl MotionSegment {
    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }
}

fn pad_range(start: usize, end: usize, pad: usize, lower: usize, upper: usize) -> (usize, usize) {
    (start.saturating_sub(pad).max(lower), (end + pad).min(upper))
}

/// Finds head-motion segments in a low-pass filtered IMU stream.
pub fn detect_endpoints_imu(stream: &[ImuSample], cfg: &SegmenterConfig) -> Vec<MotionSegment> {
    let rate = estimate_rate(stream).unwrap_or(100.0);
    let energy = motion_energy(stream);
    let mut det = EndpointDetector::new(cfg, rate);
    let mut hits: Vec<Detection> = energy.iter().filter_map(|&e| det.push(e)).collect();
    hits.extend(det.flush());

    let pad = cfg.frames(cfg.pad_s, rate);
    let mut out = Vec::with_capacity(hits.len());
    let mut lower = 0;
    for d in hits {
        let (s, e) = pad_range(d.start, d.end, pad, lower, stream.len());
        lower = e;
        out.push(MotionSegment {
            samples: stream[s..e].to_vec(),
            start_idx: s,
            end_idx: e,
        });
    }
    out
}

/// A segment emitted by a streaming segmenter together with the stream time
/// at which it became final.
#[derive(Debug, Clone, PartialEq)]
pub struct Finalized<S> {
    pub segment: S,
    pub decided_t: f64,
}

/// Streaming head-motion segmenter: low-pass, motion energy, detection.
#[derive(Debug, Clone)]
pub struct ImuSegmenter {
    lp: ImuLowPass,
    energy: MotionEnergy,
    detector: EndpointDetector,
    history: VecDeque<ImuSample>,
    /// Stream index of `history[0]`.
    history_start: usize,
    history_cap: usize,
    pad: usize,
    lower: usize,
    count: usize,
}

impl ImuSegmenter {
    pub fn new(cfg: &SegmenterConfig, rate: f64, cutoff: f64) -> Result<Self> {
        cfg.validate()?;
        let pad = cfg.frames(cfg.pad_s, rate);
        let history_cap = cfg.frames(cfg.max_seg_s + cfg.min_gap_s, rate) + 2 * pad + 4;
        Ok(Self {
            lp: ImuLowPass::new(cutoff, rate)?,
            energy: MotionEnergy::new(rate, GRAVITY_CUTOFF_HZ),
            detector: EndpointDetector::new(cfg, rate),
            history: VecDeque::with_capacity(history_cap),
            history_start: 0,
            history_cap,
            pad,
            lower: 0,
            count: 0,
        })
    }

    pub fn detector(&self) -> &EndpointDetector {
        &self.detector
    }

    pub fn push(&mut self, raw: &ImuSample) -> Option<Finalized<MotionSegment>> {
        let s = self.lp.process(raw);
        let e = self.energy.push(&s);
        self.history.push_back(s);
        if self.history.len() > self.history_cap {
            self.history.pop_front();
            self.history_start += 1;
        }
        self.count += 1;
        let hit = self.detector.push(e)?;
        self.cut(hit, s.t)
    }

    pub fn flush(&mut self) -> Option<Finalized<MotionSegment>> {
        let hit = self.detector.flush()?;
        let t = self.history.back().map_or(0.0, |s| s.t);
        self.cut(hit, t)
    }

    fn cut(&mut self, d: Detection, decided_t: f64) -> Option<Finalized<MotionSegment>> {
        let (s, e) = pad_range(
            d.start,
            d.end,
            self.pad,
            self.lower.max(self.history_start),
            self.count,
        );
        self.lower = e;
        (e > s).then(|| Finalized {
            segment: MotionSegment {
                samples: self
                    .history
                    .range(s - self.history_start..e - self.history_start)
                    .copied()
                    .collect(),
                start_idx: s,
                end_idx: e,
            },
            decided_t,
        })
    }
}

/// Short-time energy (mean square, full scale 1.0) per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEnvelope {
    pub values: Vec<f64>,
    pub frame_len: usize,
    pub hop: usize,
}

impl EnergyEnvelope {
    /// Frames `floor((N - frame_len) / hop) + 1`; empty if `N < frame_len`.
    pub fn compute(samples: &[f64], frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len == 0 || hop == 0 {
            return Err(Error::arg("frame length and hop must be positive"));
        }
        let values = frame_starts(samples.len(), frame_len, hop)
            .map(|s| mean_square(&samples[s..s + frame_len]))
            .collect();
        Ok(Self {
            values,
            frame_len,
            hop,
        })
    }

    /// Envelope of the first `secs` seconds, used as a noise profile.
    pub fn leading(audio: &AudioSegment, secs: f64, frame_len: usize, hop: usize) -> Result<Self> {
        let n = ((secs * audio.sample_rate as f64).round() as usize).min(audio.len());
        let x = audio.to_f64();
        Self::compute(&x[..n], frame_len, hop)
    }

    /// All-zero profile of a given frame size.
    pub fn silent(frame_len: usize, hop: usize) -> Self {
        Self {
            values: vec![0.0],
            frame_len,
            hop,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

fn frame_starts(n: usize, frame_len: usize, hop: usize) -> impl Iterator<Item = usize> {
    let count = if n >= frame_len { (n - frame_len) / hop + 1 } else { 0 };
    (0..count).map(move |i| i * hop)
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn zero_crossing_rate(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let crossings = x
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    crossings as f64 / (x.len() - 1) as f64
}

/// Streaming throat-vibration segmenter over short-time energy with a
/// zero-crossing-rate refinement of both edges.
#[derive(Debug, Clone)]
pub struct AudioSegmenter {
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
    detector: EndpointDetector,
    zcr_quiet: AdaptiveThreshold,
    k_sigma: f64,
    zcr_extend: usize,
    pad: usize,
    /// Samples not yet consumed by a full frame, plus history for cutting.
    samples: VecDeque<f64>,
    samples_start: usize,
    history_cap: usize,
    features: VecDeque<(f64, f64)>,
    features_start: usize,
    feature_cap: usize,
    next_frame_start: usize,
    received: usize,
    lower: usize,
    t0: f64,
}

impl AudioSegmenter {
    pub fn new(cfg: &SegmenterConfig, sample_rate: u32, t0: f64) -> Result<Self> {
        cfg.validate()?;
        if sample_rate == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        let rate = sample_rate as f64;
        let frame_len = ((cfg.frame_s * rate).round() as usize).max(1);
        let hop = ((cfg.hop_s * rate).round() as usize).max(1);
        let frame_rate = rate / hop as f64;
        let quiet = cfg.frames(cfg.quiet_window_s, frame_rate).max(1);
        let feature_cap = cfg.frames(cfg.max_seg_s + cfg.min_gap_s, frame_rate) + 2 * cfg.zcr_extend_frames + 8;
        Ok(Self {
            sample_rate,
            frame_len,
            hop,
            detector: EndpointDetector::new(cfg, frame_rate),
            zcr_quiet: AdaptiveThreshold::new(quiet, cfg.k_sigma, 0.0),
            k_sigma: cfg.k_sigma,
            zcr_extend: cfg.zcr_extend_frames,
            pad: (cfg.pad_s * rate).round() as usize,
            samples: VecDeque::new(),
            samples_start: 0,
            history_cap: feature_cap * hop + frame_len,
            features: VecDeque::new(),
            features_start: 0,
            feature_cap,
            next_frame_start: 0,
            received: 0,
            lower: 0,
            t0,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn push_samples(&mut self, chunk: &[i16]) -> Vec<Finalized<AudioSegment>> {
        let mut out = Vec::new();
        for &s in chunk {
            self.samples.push_back(s as f64 / 32768.0);
            self.received += 1;
            while self.received >= self.next_frame_start + self.frame_len {
                if let Some(seg) = self.process_frame() {
                    out.push(seg);
                }
            }
        }
        out
    }

    pub fn flush(&mut self) -> Option<Finalized<AudioSegment>> {
        let d = self.detector.flush()?;
        self.cut(d)
    }

    fn process_frame(&mut self) -> Option<Finalized<AudioSegment>> {
        let start = self.next_frame_start - self.samples_start;
        let frame: Vec<f64> = self
            .samples
            .range(start..start + self.frame_len)
            .copied()
            .collect();
        let energy = mean_square(&frame);
        let zcr = zero_crossing_rate(&frame);
        self.next_frame_start += self.hop;

        if self.detector.is_idle() {
            self.zcr_quiet.observe_quiet(zcr);
        }
        self.features.push_back((energy, zcr));
        if self.features.len() > self.feature_cap {
            self.features.pop_front();
            self.features_start += 1;
        }
        let hit = self.detector.push(energy);
        let out = hit.and_then(|d| self.cut(d));

        // keep enough samples to cut any segment still pending
        while self.samples.len() > self.history_cap {
            self.samples.pop_front();
            self.samples_start += 1;
        }
        out
    }

    fn zcr_deviates(&self, frame: usize) -> bool {
        if self.zcr_quiet.is_empty() || frame < self.features_start {
            return false;
        }
        let Some(&(energy, zcr)) = self.features.get(frame - self.features_start) else {
            return false;
        };
        let (med, mad) = self.zcr_quiet.median_mad();
        energy > 0.0 && (zcr - med).abs() > self.k_sigma * mad.max(1e-3)
    }

    fn cut(&mut self, d: Detection) -> Option<Finalized<AudioSegment>> {
        let first_frame = self.lower.div_ceil(self.hop);
        let mut start = d.start;
        for _ in 0..self.zcr_extend {
            if start == 0 || start - 1 < first_frame.max(self.features_start) || !self.zcr_deviates(start - 1) {
                break;
            }
            start -= 1;
        }
        let mut end = d.end;
        for _ in 0..self.zcr_extend {
            if end >= self.detector.position() || !self.zcr_deviates(end) {
                break;
            }
            end += 1;
        }

        let s = (start * self.hop).saturating_sub(self.pad).max(self.lower).max(self.samples_start);
        let e = ((end - 1) * self.hop + self.frame_len + self.pad)
            .min(self.received)
            .min(self.samples_start + self.samples.len());
        if e <= s {
            return None;
        }
        self.lower = e;
        let rate = self.sample_rate as f64;
        let samples: Vec<i16> = self
            .samples
            .range(s - self.samples_start..e - self.samples_start)
            .map(|&x| (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            .collect();
        let decided_sample = (d.decided_at * self.hop + self.frame_len)
            .min(self.received)
            .max(e);
        Some(Finalized {
            segment: AudioSegment {
                sample_rate: self.sample_rate,
                samples,
                t0: self.t0 + s as f64 / rate,
            },
            decided_t: self.t0 + decided_sample as f64 / rate,
        })
    }
}

/// Finds throat-vibration fragments; fragments shorter than `min_seg_s` are
/// discarded.
pub fn detect_endpoints_audio(audio: &AudioSegment, cfg: &SegmenterConfig) -> Vec<AudioSegment> {
    let Ok(mut seg) = AudioSegmenter::new(cfg, audio.sample_rate, audio.t0) else {
        return Vec::new();
    };
    let mut out: Vec<AudioSegment> = seg
        .push_samples(&audio.samples)
        .into_iter()
        .map(|f| f.segment)
        .collect();
    out.extend(seg.flush().map(|f| f.segment));
    out
}

/// Magnitude spectral subtraction.
///
/// The profile's mean frame energy is treated as white noise of that power;
/// each STFT bin is reduced by the matching noise magnitude and floored at
/// `SPECTRAL_FLOOR` times it. Frames use the profile's frame length with 50%
/// overlap and a periodic Hann window.
pub fn noise_reduce(audio: &AudioSegment, noise_profile: &EnergyEnvelope) -> Result<AudioSegment> {
    let x = audio.to_f64();
    let y = spectral_subtract(&x, noise_profile.mean(), noise_profile.frame_len)?;
    let samples = y
        .iter()
        .map(|v| (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        .collect();
    AudioSegment::new(audio.sample_rate, samples, audio.t0)
}

pub const SPECTRAL_FLOOR: f64 = 0.05;

/// Spectral subtraction on a float signal given the noise power per sample.
pub fn spectral_subtract(x: &[f64], noise_power: f64, frame_len: usize) -> Result<Vec<f64>> {
    if frame_len < 4 || !frame_len.is_multiple_of(2) {
        return Err(Error::arg("noise-reduction frame length must be even and >= 4"));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let n = frame_len;
    let hop = n / 2;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let win_energy: f64 = window.iter().map(|w| w * w).sum();
    let noise_mag = (noise_power.max(0.0) * win_energy).sqrt();

    let mut planner = FftPlanner::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n);

    // pad by half a frame on both sides so every sample is covered by two
    // frames whose windows sum to one
    let padded_len = x.len() + 2 * hop;
    let frames = padded_len.div_ceil(hop);
    let total = frames * hop + n;
    let mut padded = vec![0.0; total];
    padded[hop..hop + x.len()].copy_from_slice(x);
    let mut acc = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    let mut buf = vec![Complex::new(0.0, 0.0); n];

    for f in 0..frames {
        let s = f * hop;
        for i in 0..n {
            buf[i] = Complex::new(padded[s + i] * window[i], 0.0);
        }
        fwd.process(&mut buf);
        if noise_mag > 0.0 {
            for c in buf.iter_mut() {
                let mag = c.norm();
                let target = (mag - noise_mag).max(SPECTRAL_FLOOR * noise_mag);
                *c = if mag > 0.0 { *c * (target / mag) } else { Complex::new(target, 0.0) };
            }
        }
        inv.process(&mut buf);
        for i in 0..n {
            acc[s + i] += buf[i].re / n as f64;
            wsum[s + i] += window[i];
        }
    }
    Ok((0..x.len())
        .map(|i| {
            let w = wsum[i + hop];
            if w > 1e-8 {
                acc[i + hop] / w
            } else {
                x[i]
            }
        })
        .collect())
}

/// Full-scale RMS reference: a full-scale sinusoid.
pub const FULL_SCALE_RMS: f64 = 32767.0 / std::f64::consts::SQRT_2;

/// Trailing 64 ms RMS amplitude relative to a full-scale sinusoid, in [0, 1].
#[derive(Debug, Clone)]
pub struct AmplitudeTracker {
    window: VecDeque<i16>,
    capacity: usize,
    sum_sq: i64,
}

impl AmplitudeTracker {
    pub const WINDOW_S: f64 = 0.064;

    pub fn new(sample_rate: u32) -> Self {
        let capacity = ((Self::WINDOW_S * sample_rate as f64).round() as usize).max(1);
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            sum_sq: 0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, sample: i16) -> f64 {
        if self.window.len() == self.capacity {
            let old = self.window.pop_front().unwrap_or(0) as i64;
            self.sum_sq -= old * old;
        }
        self.window.push_back(sample);
        self.sum_sq += (sample as i64) * (sample as i64);
        self.amplitude()
    }

    pub fn amplitude(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        let rms = (self.sum_sq as f64 / self.window.len() as f64).sqrt();
        (rms / FULL_SCALE_RMS).clamp(0.0, 1.0)
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.sum_sq = 0;
    }
}

/// Amplitude at the end of each consecutive 64 ms window of `audio`.
pub fn amplitude_64ms(audio: &AudioSegment) -> Vec<f64> {
    let mut tr = AmplitudeTracker::new(audio.sample_rate);
    let n = tr.window_len();
    let mut out = Vec::new();
    for (i, &s) in audio.samples.iter().enumerate() {
        let a = tr.push(s);
        if (i + 1) % n == 0 {
            out.push(a);
        }
    }
    out
}

/// Largest trailing-64 ms amplitude observed over a fragment.
pub fn peak_amplitude(audio: &AudioSegment) -> f64 {
    let mut tr = AmplitudeTracker::new(audio.sample_rate);
    audio.samples.iter().map(|&s| tr.push(s)).fold(0.0, f64::max)
}
