//! Seeded generators of labelled head motions and hummed scale tones, so
//! segmentation, classification and latency can be exercised without a
//! recorded corpus.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head_dtw::{EulerAxis, HeadMotionClass};
use crate::nn::ScaleClass;
use crate::signal_io::{AudioSegment, ImuSample};

pub const GRAVITY: f64 = 9.81;
/// Distance from the neck pivot to the IMU, metres.
pub const HEAD_RADIUS_M: f64 = 0.1;
/// Accelerometer noise per degree of Euler-angle noise, m/s².
pub const ACCEL_NOISE_PER_DEG: f64 = 0.02;

/// Typical peak excursion, degrees, of each head motion.
pub fn peak_range(class: HeadMotionClass) -> (f64, f64) {
    match class {
        HeadMotionClass::Flexion => (45.0, 50.0),
        HeadMotionClass::Extension => (70.0, 80.0),
        HeadMotionClass::BendLeft | HeadMotionClass::BendRight => (35.0, 45.0),
        HeadMotionClass::RotateLeft | HeadMotionClass::RotateRight => (65.0, 75.0),
    }
}

/// Equal-tempered pitch of each scale degree around middle C, Hz.
pub fn scale_f0(scale: ScaleClass) -> f64 {
    match scale {
        ScaleClass::Do => 261.63,
        ScaleClass::Re => 293.66,
        ScaleClass::Mi => 329.63,
        ScaleClass::Fa => 349.23,
        ScaleClass::So => 392.00,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMotionSpec {
    pub class: HeadMotionClass,
    /// Peak excursion, degrees (magnitude; the sign follows the class).
    pub peak: f64,
    /// Length of the excursion, seconds.
    pub duration: f64,
    /// Gaussian noise std per channel: ax, ay, az (m/s²), roll, pitch, yaw (deg).
    pub noise_std: [f64; 6],
    pub rest_before: f64,
    pub rest_after: f64,
    pub rate: f64,
    pub t0: f64,
    pub seed: u64,
}

impl SynthMotionSpec {
    pub fn new(class: HeadMotionClass, peak: f64, duration: f64, seed: u64) -> Self {
        Self {
            class,
            peak,
            duration,
            noise_std: [0.0; 6],
            rest_before: 1.0,
            rest_after: 1.0,
            rate: 100.0,
            t0: 0.0,
            seed,
        }
    }

    /// Sets Euler noise to `deg` and accelerometer noise proportionally.
    pub fn with_noise(mut self, deg: f64) -> Self {
        let a = deg * ACCEL_NOISE_PER_DEG;
        self.noise_std = [a, a, a, deg, deg, deg];
        self
    }

    /// Ground-truth start and end time of the excursion.
    pub fn motion_interval(&self) -> (f64, f64) {
        let start = self.t0 + self.rest_before;
        (start, start + self.duration)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.duration > 0.0
            && self.rate > 0.0
            && self.rest_before >= 0.0
            && self.rest_after >= 0.0
            && self.peak.is_finite()
            && self.noise_std.iter().all(|s| *s >= 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::arg("invalid motion spec"))
        }
    }
}

/// Raised-cosine excursion `0 → peak → 0` over `[0, d]`.
fn raised_cosine(t: f64, d: f64) -> (f64, f64) {
    if !(0.0..=d).contains(&t) {
        return (0.0, 0.0);
    }
    let w = 2.0 * PI / d;
    let shape = 0.5 * (1.0 - (w * t).cos());
    let second_derivative = 0.5 * w * w * (w * t).cos();
    (shape, second_derivative)
}

/// One head motion placed on a timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionEvent {
    pub class: HeadMotionClass,
    pub peak: f64,
    pub duration: f64,
    /// Onset relative to the start of the stream, seconds.
    pub start: f64,
}

/// A head motion embedded in rest: Euler excursion on the class's axis,
/// tangential acceleration from the angular acceleration at the head radius,
/// and gravity projected through the current roll and pitch.
pub fn gen_head_motion(spec: &SynthMotionSpec) -> Result<Vec<ImuSample>> {
    spec.validate()?;
    let event = MotionEvent {
        class: spec.class,
        peak: spec.peak,
        duration: spec.duration,
        start: spec.rest_before,
    };
    gen_imu_timeline(
        &[event],
        spec.rest_before + spec.duration + spec.rest_after,
        spec.rate,
        spec.noise_std,
        spec.t0,
        spec.seed,
    )
}

/// A stream of `total_s` seconds at `rate` containing the given motions
/// (overlapping excursions add).
pub fn gen_imu_timeline(
    events: &[MotionEvent],
    total_s: f64,
    rate: f64,
    noise_std: [f64; 6],
    t0: f64,
    seed: u64,
) -> Result<Vec<ImuSample>> {
    if !(rate > 0.0 && total_s >= 0.0) || events.iter().any(|e| !(e.duration > 0.0 && e.peak.is_finite())) {
        return Err(Error::arg("invalid motion timeline"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (total_s * rate).round() as usize + 1;
    let noises: Vec<Option<Normal<f64>>> = noise_std
        .iter()
        .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("finite std")))
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let local = i as f64 / rate;
        let mut euler = [0.0; 3];
        let mut tangential = [0.0; 3];
        for e in events {
            let (shape, d2) = raised_cosine(local - e.start, e.duration);
            let signed_peak = e.peak * e.class.direction();
            euler[e.class.axis().index()] += signed_peak * shape;
            let a = (signed_peak * d2).to_radians() * HEAD_RADIUS_M;
            match e.class.axis() {
                EulerAxis::Pitch => tangential[0] += a,
                EulerAxis::Roll | EulerAxis::Yaw => tangential[1] += a,
            }
        }
        let (roll, pitch) = (euler[0].to_radians(), euler[1].to_radians());
        let accel = [
            -GRAVITY * pitch.sin() + tangential[0],
            GRAVITY * roll.sin() * pitch.cos() + tangential[1],
            GRAVITY * roll.cos() * pitch.cos() + tangential[2],
        ];
        let mut ch = [accel[0], accel[1], accel[2], euler[0], euler[1], euler[2]];
        for (v, noise) in ch.iter_mut().zip(&noises) {
            if let Some(d) = noise {
                *v += d.sample(&mut rng);
            }
        }
        out.push(ImuSample::new(t0 + local, [ch[0], ch[1], ch[2]], [ch[3], ch[4], ch[5]]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthToneSpec {
    pub scale: ScaleClass,
    pub f0: f64,
    /// Length of the tone, seconds, including attack and release.
    pub duration: f64,
    /// Peak amplitude as a fraction of full scale.
    pub amplitude: f64,
    /// Relative vibrato depth (0.01 = ±1%).
    pub vibrato_depth: f64,
    pub vibrato_rate: f64,
    /// Signal-to-noise ratio of additive white noise; `None` for none.
    pub snr_db: Option<f64>,
    pub rest_before: f64,
    pub rest_after: f64,
    pub sample_rate: u32,
    pub t0: f64,
    pub seed: u64,
}

pub const HARMONICS: usize = 4;
pub const ATTACK_S: f64 = 0.05;

impl SynthToneSpec {
    pub fn new(scale: ScaleClass, duration: f64, amplitude: f64, seed: u64) -> Self {
        Self {
            scale,
            f0: scale_f0(scale),
            duration,
            amplitude,
            vibrato_depth: 0.01,
            vibrato_rate: 5.0,
            snr_db: None,
            rest_before: 0.5,
            rest_after: 0.3,
            sample_rate: 16_000,
            t0: 0.0,
            seed,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = Some(snr_db);
        self
    }

    pub fn tone_interval(&self) -> (f64, f64) {
        let start = self.t0 + self.rest_before;
        (start, start + self.duration)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.f0 > 0.0
            && self.duration > 0.0
            && (0.0..=1.0).contains(&self.amplitude)
            && self.vibrato_depth >= 0.0
            && self.rest_before >= 0.0
            && self.rest_after >= 0.0
            && self.sample_rate > 0
            && self.f0 * HARMONICS as f64 * (1.0 + self.vibrato_depth) < self.sample_rate as f64 / 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::arg("invalid tone spec"))
        }
    }
}

/// Harmonic tone (fundamental plus three overtones at 1/h amplitude) with
/// vibrato and a 50 ms linear attack and release, in full-scale-1.0 units.
fn render_tone(f0: f64, duration: f64, amplitude: f64, vib_depth: f64, vib_rate: f64, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let body = (duration * rate).round() as usize;
    let norm: f64 = (1..=HARMONICS).map(|h| 1.0 / h as f64).sum();
    let gain = amplitude * 32767.0 / 32768.0 / norm;
    let ramp = (ATTACK_S * rate).min(body as f64 / 2.0).max(1.0);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut x = Vec::with_capacity(body);
    for k in 0..body {
        let t = k as f64 / rate;
        let env = (k as f64 / ramp).min((body - k) as f64 / ramp).min(1.0);
        let v: f64 = (1..=HARMONICS).map(|h| (h as f64 * phase).sin() / h as f64).sum();
        x.push(gain * env * v);
        let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin());
        phase = (phase + 2.0 * PI * f / rate) % (2.0 * PI);
    }
    x
}

fn quantize(x: &[f64]) -> Vec<i16> {
    x.iter()
        .map(|v| (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        .collect()
}

/// A tone embedded in rest, with optional white noise at the requested SNR
/// (relative to the tone's mean power) over the whole clip.
pub fn gen_scale_tone(spec: &SynthToneSpec) -> Result<AudioSegment> {
    spec.validate()?;
    let rate = f64::from(spec.sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pre = (spec.rest_before * rate).round() as usize;
    let post = (spec.rest_after * rate).round() as usize;
    let body = render_tone(
        spec.f0,
        spec.duration,
        spec.amplitude,
        spec.vibrato_depth,
        spec.vibrato_rate,
        rate,
        &mut rng,
    );
    let signal_power = body.iter().map(|v| v * v).sum::<f64>() / body.len().max(1) as f64;
    let mut x = vec![0.0; pre + body.len() + post];
    x[pre..pre + body.len()].copy_from_slice(&body);
    if let Some(snr) = spec.snr_db {
        add_noise(&mut x, (signal_power / 10f64.powf(snr / 10.0)).sqrt(), &mut rng);
    }
    AudioSegment::new(spec.sample_rate, quantize(&x), spec.t0)
}

fn add_noise(x: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    if std > 0.0 {
        let d = Normal::new(0.0, std).expect("finite std");
        for v in x {
            *v += d.sample(rng);
        }
    }
}

/// One hummed tone placed on a timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneEvent {
    pub scale: ScaleClass,
    pub start: f64,
    pub duration: f64,
    pub amplitude: f64,
}

/// An audio stream of `total_s` seconds with the given tones and white
/// noise of RMS `noise_rms` (full scale 1.0) throughout.
pub fn gen_audio_timeline(
    events: &[ToneEvent],
    total_s: f64,
    sample_rate: u32,
    noise_rms: f64,
    seed: u64,
) -> Result<AudioSegment> {
    let rate = f64::from(sample_rate);
    if sample_rate == 0 || total_s < 0.0 || noise_rms < 0.0 {
        return Err(Error::arg("invalid audio timeline"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; (total_s * rate).round() as usize];
    for e in events {
        if !(e.duration > 0.0 && (0.0..=1.0).contains(&e.amplitude) && e.start >= 0.0) {
            return Err(Error::arg("invalid tone event"));
        }
        let body = render_tone(scale_f0(e.scale), e.duration, e.amplitude, 0.01, 5.0, rate, &mut rng);
        let at = (e.start * rate).round() as usize;
        for (k, v) in body.iter().enumerate() {
            if let Some(slot) = x.get_mut(at + k) {
                *slot += v;
            }
        }
    }
    add_noise(&mut x, noise_rms, &mut rng);
    AudioSegment::new(sample_rate, quantize(&x), 0.0)
}

/// Mean power of a tone of the given peak amplitude (full scale 1.0).
pub fn tone_power(amplitude: f64) -> f64 {
    let norm: f64 = (1..=HARMONICS).map(|h| 1.0 / h as f64).sum();
    let g = amplitude * 32767.0 / 32768.0 / norm;
    (1..=HARMONICS).map(|h| 0.5 * (g / h as f64).powi(2)).sum()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Parameters for a labelled head-motion corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCorpusConfig {
    pub per_class: usize,
    pub noise_deg: f64,
    pub duration_range: (f64, f64),
    pub rate: f64,
    pub seed: u64,
}

impl Default for HeadCorpusConfig {
    fn default() -> Self {
        Self {
            per_class: 120,
            noise_deg: 2.0,
            duration_range: (0.8, 1.2),
            rate: 100.0,
            seed: 1,
        }
    }
}

/// Specs for `per_class` motions of every class, interleaved by class, with
/// peaks drawn from each class's typical range.
pub fn head_corpus_specs(cfg: &HeadCorpusConfig) -> Vec<SynthMotionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.per_class * 6);
    for _ in 0..cfg.per_class {
        for class in HeadMotionClass::ALL {
            let peak = uniform(&mut rng, peak_range(class));
            let duration = uniform(&mut rng, cfg.duration_range);
            let mut spec = SynthMotionSpec::new(class, peak, duration, rng.gen()).with_noise(cfg.noise_deg);
            spec.rate = cfg.rate;
            out.push(spec);
        }
    }
    out
}

/// Parameters for a labelled tone corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneCorpusConfig {
    pub per_class: usize,
    pub snr_db: f64,
    pub duration_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for ToneCorpusConfig {
    fn default() -> Self {
        Self {
            per_class: 200,
            snr_db: 20.0,
            duration_range: (0.3, 0.9),
            amplitude_range: (0.3, 0.9),
            sample_rate: 16_000,
            seed: 2,
        }
    }
}

pub fn tone_corpus_specs(cfg: &ToneCorpusConfig) -> Vec<SynthToneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.per_class * 5);
    for _ in 0..cfg.per_class {
        for scale in ScaleClass::ALL {
            let duration = uniform(&mut rng, cfg.duration_range);
            let amplitude = uniform(&mut rng, cfg.amplitude_range);
            let mut spec = SynthToneSpec::new(scale, duration, amplitude, rng.gen()).with_snr(cfg.snr_db);
            spec.sample_rate = cfg.sample_rate;
            out.push(spec);
        }
    }
    out
}
