//! Streaming recognition pipeline: segmentation, classification, mapping and
//! plant simulation, with latency accounting in stream time.
//!
//! The three stages are independent single-owner structs so they can run on
//! separate threads joined by bounded queues, or sequentially for a
//! deterministic replay ([`replay`]). All times are stream seconds; the
//! classifier's processing time is modelled by `classify_delay_s` so replays
//! are reproducible regardless of host speed.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head_dtw::{classify_head, HeadMotionClass, TemplateSet};
use crate::mapper::{ActionVector, ControlMode, DurationClass, GainConfig, Mapper, Scheme, SuperlimbCommand, Token};
use crate::nn::{predict, ScaleClass, ScaleModel};
use crate::preprocess::{
    noise_reduce, peak_amplitude, AudioSegmenter, EnergyEnvelope, ImuSegmenter, MotionSegment, SegmenterConfig,
};
use crate::signal_io::{decimate_imu, read_imu_csv, read_wav, AudioSegment, ImuSample};
use crate::sim::{Plant, PlantConfig, TraceRow};
use crate::synthgen::{gen_audio_timeline, gen_imu_timeline, MotionEvent, ToneEvent, ACCEL_NOISE_PER_DEG};

/// Frame length and hop of the leading noise profile, seconds.
pub const NOISE_FRAME_S: f64 = 0.032;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scheme: Scheme,
    pub gains: GainConfig,
    pub imu_segmenter: SegmenterConfig,
    /// Partial tables are completed from the audio defaults.
    #[serde(deserialize_with = "audio_segmenter_patch")]
    pub audio_segmenter: SegmenterConfig,
    /// Head-motion low-pass cutoff, Hz.
    pub imu_cutoff_hz: f64,
    /// IMU rate after decimation, Hz.
    pub imu_rate: f64,
    /// Keep every n-th raw IMU sample.
    pub imu_decimation: usize,
    /// Length of the leading stretch used as the noise profile, seconds.
    pub noise_profile_s: f64,
    /// Modelled classification time per segment, seconds.
    pub classify_delay_s: f64,
    /// Multimodal decision tick, seconds.
    pub decision_tick_s: f64,
    /// Audio is fed to the segmenter in chunks of this length, seconds.
    pub audio_chunk_s: f64,
    /// Simulated time after the last input, seconds.
    pub tail_s: f64,
    pub plant: PlantConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Multimodal,
            gains: GainConfig::default(),
            imu_segmenter: SegmenterConfig::imu_default(),
            audio_segmenter: SegmenterConfig::audio_default(),
            imu_cutoff_hz: 5.0,
            imu_rate: 100.0,
            imu_decimation: 1,
            noise_profile_s: 0.25,
            classify_delay_s: 0.05,
            decision_tick_s: 0.25,
            audio_chunk_s: 0.016,
            tail_s: 1.0,
            plant: PlantConfig::default(),
        }
    }
}

/// Reads an audio segmenter table whose missing fields take the audio
/// defaults rather than the IMU ones.
fn audio_segmenter_patch<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SegmenterConfig, D::Error> {
    use serde::de::Error as _;
    let patch = serde_json::Value::deserialize(d)?;
    let serde_json::Value::Object(fields) = patch else {
        return Err(D::Error::custom("audio_segmenter must be a table"));
    };
    let mut base = serde_json::to_value(SegmenterConfig::audio_default()).map_err(D::Error::custom)?;
    for (k, v) in fields {
        base[k] = v;
    }
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        self.imu_segmenter.validate()?;
        self.audio_segmenter.validate()?;
        self.plant.validate()?;
        let positive = [
            ("imu_cutoff_hz", self.imu_cutoff_hz),
            ("imu_rate", self.imu_rate),
            ("decision_tick_s", self.decision_tick_s),
            ("audio_chunk_s", self.audio_chunk_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if self.imu_decimation == 0 {
            return Err(Error::Validation("imu_decimation must be at least 1".into()));
        }
        if !(self.classify_delay_s >= 0.0 && self.noise_profile_s >= 0.0 && self.tail_s >= 0.0) {
            return Err(Error::Validation("delays must be non-negative".into()));
        }
        Ok(())
    }

    fn uses_imu(&self) -> bool {
        matches!(self.scheme, Scheme::Head | Scheme::Multimodal)
    }

    fn uses_audio(&self) -> bool {
        matches!(self.scheme, Scheme::Throat | Scheme::Multimodal)
    }
}

/// Trained artifacts the classifier needs.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub templates: Option<TemplateSet>,
    pub scale: Option<ScaleModel>,
}

impl Models {
    fn check(&self, scheme: Scheme) -> Result<()> {
        if matches!(scheme, Scheme::Head | Scheme::Multimodal) && self.templates.is_none() {
            return Err(Error::Validation("head-motion templates are required".into()));
        }
        if matches!(scheme, Scheme::Throat | Scheme::Multimodal) && self.scale.is_none() {
            return Err(Error::Validation("a scale model is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Head,
    Throat,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentPayload {
    Motion(MotionSegment),
    Fragment {
        audio: AudioSegment,
        noise: Option<EnergyEnvelope>,
    },
}

/// A finished segment on its way to the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEvent {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub decided_t: f64,
    pub payload: SegmentPayload,
}

impl SegmentEvent {
    pub fn modality(&self) -> Modality {
        match self.payload {
            SegmentPayload::Motion(_) => Modality::Head,
            SegmentPayload::Fragment { .. } => Modality::Throat,
        }
    }

    pub fn record(&self) -> SegmentRecord {
        SegmentRecord {
            index: self.index,
            modality: self.modality(),
            start: self.start,
            end: self.end,
            decided_t: self.decided_t,
        }
    }
}

/// Serializable summary of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub modality: Modality,
    pub start: f64,
    pub end: f64,
    pub decided_t: f64,
}

/// Stage 1: low-pass, endpoint detection and noise profiling.
#[derive(Debug)]
pub struct SegmentStage {
    imu: Option<ImuSegmenter>,
    audio: Option<AudioSegmenter>,
    decimation: usize,
    imu_seen: usize,
    noise_target: usize,
    noise_buf: Vec<f64>,
    noise: Option<EnergyEnvelope>,
    noise_frame: usize,
    count: usize,
    last_imu_t: f64,
    audio_end_t: f64,
}

impl SegmentStage {
    pub fn new(cfg: &PipelineConfig, audio_rate: u32, audio_t0: f64) -> Result<Self> {
        cfg.validate()?;
        let imu = if cfg.uses_imu() {
            Some(ImuSegmenter::new(&cfg.imu_segmenter, cfg.imu_rate, cfg.imu_cutoff_hz)?)
        } else {
            None
        };
        let audio = if cfg.uses_audio() {
            Some(AudioSegmenter::new(&cfg.audio_segmenter, audio_rate, audio_t0)?)
        } else {
            None
        };
        let rate = f64::from(audio_rate);
        let mut noise_frame = (NOISE_FRAME_S * rate).round() as usize;
        noise_frame += noise_frame % 2;
        Ok(Self {
            imu,
            audio,
            decimation: cfg.imu_decimation,
            imu_seen: 0,
            noise_target: (cfg.noise_profile_s * rate).round() as usize,
            noise_buf: Vec::new(),
            noise: None,
            noise_frame: noise_frame.max(4),
            count: 0,
            last_imu_t: f64::NEG_INFINITY,
            audio_end_t: audio_t0,
        })
    }

    fn next_index(&mut self) -> usize {
        self.count += 1;
        self.count - 1
    }

    fn motion_event(&mut self, f: crate::preprocess::Finalized<MotionSegment>) -> SegmentEvent {
        SegmentEvent {
            index: self.next_index(),
            start: f.segment.start_time(),
            end: f.segment.end_time(),
            decided_t: f.decided_t,
            payload: SegmentPayload::Motion(f.segment),
        }
    }

    fn fragment_event(&mut self, f: crate::preprocess::Finalized<AudioSegment>) -> SegmentEvent {
        let noise = self.noise.clone().or_else(|| self.partial_noise());
        SegmentEvent {
            index: self.next_index(),
            start: f.segment.t0,
            end: f.segment.end_time(),
            decided_t: f.decided_t,
            payload: SegmentPayload::Fragment {
                audio: f.segment,
                noise,
            },
        }
    }

    fn partial_noise(&self) -> Option<EnergyEnvelope> {
        let hop = self.noise_frame / 2;
        EnergyEnvelope::compute(&self.noise_buf, self.noise_frame, hop)
            .ok()
            .filter(|e| !e.values.is_empty())
    }

    /// Feeds one raw IMU sample (before decimation).
    pub fn push_imu(&mut self, s: &ImuSample) -> Result<Option<SegmentEvent>> {
        let Some(seg) = self.imu.as_mut() else { return Ok(None) };
        if s.t <= self.last_imu_t {
            return Err(Error::Validation(format!("IMU time {} is not increasing", s.t)));
        }
        self.last_imu_t = s.t;
        self.imu_seen += 1;
        if !(self.imu_seen - 1).is_multiple_of(self.decimation) {
            return Ok(None);
        }
        Ok(seg.push(s).map(|f| self.motion_event(f)))
    }

    /// Feeds a chunk of audio samples.
    pub fn push_audio(&mut self, chunk: &[i16], sample_rate: u32) -> Vec<SegmentEvent> {
        if self.audio.is_none() {
            return Vec::new();
        }
        self.audio_end_t += chunk.len() as f64 / f64::from(sample_rate);
        if self.noise.is_none() {
            let need = self.noise_target - self.noise_buf.len();
            self.noise_buf
                .extend(chunk.iter().take(need).map(|&v| f64::from(v) / 32768.0));
            if self.noise_buf.len() >= self.noise_target {
                self.noise = self.partial_noise();
            }
        }
        let found = self.audio.as_mut().expect("checked above").push_samples(chunk);
        found.into_iter().map(|f| self.fragment_event(f)).collect()
    }

    /// Closes any open segment at end of stream.
    pub fn flush(&mut self) -> Vec<SegmentEvent> {
        let mut out = Vec::new();
        if let Some(f) = self.imu.as_mut().and_then(ImuSegmenter::flush) {
            out.push(self.motion_event(f));
        }
        if let Some(f) = self.audio.as_mut().and_then(AudioSegmenter::flush) {
            out.push(self.fragment_event(f));
        }
        out
    }
}

/// Replaces a recognised action vector with another, to exercise the
/// system's behaviour under misrecognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectRule {
    pub from: ActionVector,
    pub to: ActionVector,
    /// Only the n-th (0-based) matching token is replaced; all when absent.
    #[serde(default)]
    pub occurrence: Option<usize>,
}

/// What the classifier made of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub segment: SegmentRecord,
    /// Recognised token; `None` is the no-intention token.
    pub token: Option<Token>,
    pub action: Option<ActionVector>,
    /// Softmax confidence (throat) or DTW distance (head).
    pub score: f64,
    pub injected: bool,
    /// Stream time the classification became available.
    pub emitted_t: f64,
    /// Stream time the resulting command reached the plant.
    pub applied_t: Option<f64>,
    pub command: Option<SuperlimbCommand>,
    pub mode_after: Option<ControlMode>,
    /// Why the token produced no command, if it did not.
    pub note: Option<String>,
}

impl TokenRecord {
    /// Command emission time minus segment offset time.
    pub fn latency(&self) -> Option<f64> {
        self.applied_t.map(|t| t - self.segment.end)
    }
}

/// Stage 2: template matching or MFCC + LSTM per segment.
#[derive(Debug)]
pub struct ClassifyStage {
    models: Models,
    reject_confidence: f64,
    delay: f64,
    inject: Vec<InjectRule>,
    inject_seen: Vec<usize>,
}

impl ClassifyStage {
    pub fn new(models: Models, cfg: &PipelineConfig, inject: Vec<InjectRule>) -> Result<Self> {
        models.check(cfg.scheme)?;
        Ok(Self {
            models,
            reject_confidence: cfg.gains.reject_confidence,
            delay: cfg.classify_delay_s,
            inject_seen: vec![0; inject.len()],
            inject,
        })
    }

    pub fn set_reject_confidence(&mut self, c: f64) {
        self.reject_confidence = c;
    }

    pub fn classify(&mut self, ev: &SegmentEvent) -> Result<TokenRecord> {
        let (token, score) = match &ev.payload {
            SegmentPayload::Motion(seg) => {
                let templates = self.models.templates.as_ref().ok_or_else(|| Error::arg("no templates"))?;
                let d = classify_head(seg, templates)?;
                let token = d.accepted().map(|class| Token::Head {
                    class,
                    angle: d.peak_angle,
                });
                (token, d.distance)
            }
            SegmentPayload::Fragment { audio, noise } => {
                let model = self.models.scale.as_ref().ok_or_else(|| Error::arg("no scale model"))?;
                let clean = match noise {
                    Some(n) => noise_reduce(audio, n)?,
                    None => audio.clone(),
                };
                let p = predict(&model.params, &model.features(&clean)?, self.reject_confidence)?;
                let token = p.class().map(|scale| Token::Throat {
                    scale,
                    duration_ms: audio.duration_ms(),
                    amplitude: peak_amplitude(audio),
                });
                (token, p.confidence)
            }
        };
        let (token, injected) = self.inject(token);
        Ok(TokenRecord {
            segment: ev.record(),
            action: token.map(|t| t.action_vector()),
            token,
            score,
            injected,
            emitted_t: ev.decided_t + self.delay,
            applied_t: None,
            command: None,
            mode_after: None,
            note: None,
        })
    }

    fn inject(&mut self, token: Option<Token>) -> (Option<Token>, bool) {
        let Some(t) = token else { return (None, false) };
        let v = t.action_vector();
        for (rule, seen) in self.inject.iter().zip(self.inject_seen.iter_mut()) {
            if rule.from != v {
                continue;
            }
            let hit = rule.occurrence.is_none_or(|n| n == *seen);
            *seen += 1;
            if hit {
                if let Some(replaced) = retarget(&t, &rule.to) {
                    return (Some(replaced), true);
                }
            }
        }
        (Some(t), false)
    }
}

/// The same token with a different label, keeping its measurements.
fn retarget(t: &Token, to: &ActionVector) -> Option<Token> {
    match (*t, to.scale, to.duration, to.head) {
        (Token::Head { angle, .. }, None, None, Some(class)) => Some(Token::Head { class, angle }),
        (Token::Throat { amplitude, duration_ms, .. }, Some(scale), Some(d), None) => {
            let duration_ms = if DurationClass::from_ms(duration_ms) == d {
                duration_ms
            } else {
                match d {
                    DurationClass::Short => 300.0,
                    DurationClass::Long => 700.0,
                }
            };
            Some(Token::Throat {
                scale,
                duration_ms,
                amplitude,
            })
        }
        _ => None,
    }
}

/// Stage 3: mapping state machine and plant.
#[derive(Debug)]
pub struct ControlStage {
    mapper: Mapper,
    plant: Plant,
    tick: Option<f64>,
    pending: VecDeque<(f64, TokenRecord)>,
}

impl ControlStage {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            mapper: Mapper::new(cfg.scheme, cfg.gains.clone())?,
            plant: Plant::new(cfg.plant.clone())?,
            tick: (cfg.scheme == Scheme::Multimodal).then_some(cfg.decision_tick_s),
            pending: VecDeque::new(),
        })
    }

    pub fn mapper(&self) -> &Mapper {
        &self.mapper
    }

    pub fn mapper_mut(&mut self) -> &mut Mapper {
        &mut self.mapper
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    /// Queues a token; multimodal tokens wait for the next decision tick.
    pub fn submit(&mut self, rec: TokenRecord) {
        let at = match self.tick {
            Some(tick) => (rec.emitted_t / tick - 1e-9).ceil() * tick,
            None => rec.emitted_t,
        };
        let at = self.pending.back().map_or(at, |(prev, _)| at.max(*prev));
        self.pending.push_back((at, rec));
    }

    /// Runs the plant up to `t`, applying due tokens in order. Returns the
    /// trace rows produced and the tokens that were applied.
    pub fn advance_to(&mut self, t: f64) -> (Vec<TraceRow>, Vec<TokenRecord>) {
        let mut rows = Vec::new();
        let mut done = Vec::new();
        while let Some((at, _)) = self.pending.front() {
            if *at > t {
                break;
            }
            let (at, mut rec) = self.pending.pop_front().expect("front exists");
            rows.extend(self.plant.advance_to(at));
            // Commands take effect at the next plant step boundary.
            let applied = self.plant.time();
            match rec.token {
                Some(token) => match self.mapper.apply(&token) {
                    Ok(out) => {
                        self.plant.apply(&out.command);
                        rec.command = Some(out.command);
                        rec.mode_after = Some(out.mode);
                        rec.applied_t = Some(applied);
                    }
                    Err(e) => {
                        rec.mode_after = Some(self.mapper.mode());
                        rec.note = Some(e.to_string());
                    }
                },
                None => rec.note = Some("no intention".into()),
            }
            done.push(rec);
        }
        rows.extend(self.plant.advance_to(t));
        (rows, done)
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

/// Raw signals for one replay, on a common clock.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayInput {
    pub imu: Vec<ImuSample>,
    pub audio: Option<AudioSegment>,
}

impl ReplayInput {
    pub fn end_time(&self) -> f64 {
        let imu = self.imu.last().map_or(0.0, |s| s.t);
        let audio = self.audio.as_ref().map_or(0.0, AudioSegment::end_time);
        imu.max(audio)
    }

    pub fn is_empty(&self) -> bool {
        self.imu.is_empty() && self.audio.as_ref().is_none_or(AudioSegment::is_empty)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::MIN, f64::max),
        }
    }
}

/// Everything a replay produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayOutcome {
    pub segments: Vec<SegmentRecord>,
    pub tokens: Vec<TokenRecord>,
    pub trace: Vec<TraceRow>,
    pub final_mode: Option<ControlMode>,
}

impl ReplayOutcome {
    pub fn latency(&self) -> LatencyStats {
        LatencyStats::from_values(self.tokens.iter().filter_map(TokenRecord::latency))
    }

    /// Action vectors of recognised tokens, in order.
    pub fn actions(&self) -> Vec<Option<ActionVector>> {
        self.tokens.iter().map(|t| t.action).collect()
    }
}

/// Runs the whole pipeline over recorded signals, in stream time.
pub fn replay(input: &ReplayInput, models: Models, cfg: &PipelineConfig, inject: Vec<InjectRule>) -> Result<ReplayOutcome> {
    let mut out = ReplayOutcome::default();
    if input.is_empty() {
        return Ok(out);
    }
    let (rate, t0) = input.audio.as_ref().map_or((16_000, 0.0), |a| (a.sample_rate, a.t0));
    let mut seg = SegmentStage::new(cfg, rate, t0)?;
    let mut cls = ClassifyStage::new(models, cfg, inject)?;
    let mut ctl = ControlStage::new(cfg)?;

    let imu: &[ImuSample] = if cfg.uses_imu() { &input.imu } else { &[] };
    let chunks: Vec<AudioSegment> = match (&input.audio, cfg.uses_audio()) {
        (Some(a), true) => a.chunks(((cfg.audio_chunk_s * f64::from(a.sample_rate)).round() as usize).max(1)),
        _ => Vec::new(),
    };
    let (mut i, mut j) = (0, 0);
    let mut handle = |events: Vec<SegmentEvent>, out: &mut ReplayOutcome, ctl: &mut ControlStage| -> Result<()> {
        for ev in events {
            out.segments.push(ev.record());
            ctl.submit(cls.classify(&ev)?);
        }
        Ok(())
    };
    while i < imu.len() || j < chunks.len() {
        let imu_t = imu.get(i).map_or(f64::INFINITY, |s| s.t);
        let audio_t = chunks.get(j).map_or(f64::INFINITY, AudioSegment::end_time);
        let now = if imu_t <= audio_t {
            let ev = seg.push_imu(&imu[i])?;
            i += 1;
            handle(ev.into_iter().collect(), &mut out, &mut ctl)?;
            imu_t
        } else {
            let c = &chunks[j];
            j += 1;
            handle(seg.push_audio(&c.samples, c.sample_rate), &mut out, &mut ctl)?;
            audio_t
        };
        let (rows, done) = ctl.advance_to(now);
        out.trace.extend(rows);
        out.tokens.extend(done);
    }
    handle(seg.flush(), &mut out, &mut ctl)?;
    let last_due = ctl.pending.back().map_or(0.0, |p| p.0);
    let end = input.end_time().max(last_due) + cfg.tail_s;
    let (rows, done) = ctl.advance_to(end);
    out.trace.extend(rows);
    out.tokens.extend(done);
    out.final_mode = Some(ctl.mapper.mode());
    Ok(out)
}

/// Longest motion segment the streaming segmenter finds in a stream.
pub fn extract_motion(stream: &[ImuSample], cfg: &PipelineConfig) -> Result<Option<MotionSegment>> {
    let mut seg = ImuSegmenter::new(&cfg.imu_segmenter, cfg.imu_rate, cfg.imu_cutoff_hz)?;
    let mut found: Vec<MotionSegment> = stream.iter().filter_map(|s| seg.push(s)).map(|f| f.segment).collect();
    found.extend(seg.flush().map(|f| f.segment));
    Ok(found.into_iter().max_by_key(|s| s.samples.len()))
}

/// Longest throat fragment of a clip, denoised with the clip's leading
/// noise profile, exactly as the streaming pipeline prepares it.
pub fn extract_fragment(clip: &AudioSegment, cfg: &PipelineConfig) -> Result<Option<AudioSegment>> {
    let mut seg = SegmentStage::new(
        &PipelineConfig {
            scheme: Scheme::Throat,
            ..cfg.clone()
        },
        clip.sample_rate,
        clip.t0,
    )?;
    let chunk = ((cfg.audio_chunk_s * f64::from(clip.sample_rate)).round() as usize).max(1);
    let mut events = Vec::new();
    for c in clip.chunks(chunk) {
        events.extend(seg.push_audio(&c.samples, c.sample_rate));
    }
    events.extend(seg.flush());
    let best = events.into_iter().max_by_key(|e| match &e.payload {
        SegmentPayload::Fragment { audio, .. } => audio.len(),
        SegmentPayload::Motion(_) => 0,
    });
    match best.map(|e| e.payload) {
        Some(SegmentPayload::Fragment { audio, noise: Some(n) }) => Ok(Some(noise_reduce(&audio, &n)?)),
        Some(SegmentPayload::Fragment { audio, noise: None }) => Ok(Some(audio)),
        _ => Ok(None),
    }
}

/// Expected outcome of one scripted token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedToken {
    pub action: ActionVector,
    /// Ground-truth offset time of the gesture or tone, seconds.
    pub end: f64,
}

/// A replay scenario: raw-signal files on a common clock plus ground truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub scheme: Option<Scheme>,
    /// IMU CSV, relative to the scenario file.
    pub imu: Option<PathBuf>,
    /// WAV file, relative to the scenario file.
    pub audio: Option<PathBuf>,
    pub expected: Vec<ExpectedToken>,
    pub inject: Vec<InjectRule>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((s, dir))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Reads the referenced signal files; `decimation` thins the IMU stream.
    pub fn load_input(&self, dir: &Path, decimation: usize) -> Result<ReplayInput> {
        let imu = match &self.imu {
            Some(p) => decimate_imu(&read_imu_csv(dir.join(p))?, decimation)?,
            None => Vec::new(),
        };
        let audio = match &self.audio {
            Some(p) => Some(read_wav(dir.join(p))?),
            None => None,
        };
        Ok(ReplayInput { imu, audio })
    }
}

/// A generated scenario with its signals in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedScenario {
    pub scenario: Scenario,
    pub input: ReplayInput,
}

/// Gap between scripted gestures, seconds.
const SCRIPT_GAP_S: f64 = 2.5;
const SCRIPT_LEAD_S: f64 = 2.5;

/// Twelve head actions, four about each rotational axis, separated by rest.
pub fn head_twelve_scenario(noise_deg: f64, seed: u64) -> Result<ScriptedScenario> {
    use HeadMotionClass::*;
    let plan = [
        (Flexion, 47.0),
        (Extension, 75.0),
        (Flexion, 48.0),
        (Extension, 72.0),
        (BendLeft, 40.0),
        (BendRight, 38.0),
        (BendLeft, 42.0),
        (BendRight, 40.0),
        (RotateLeft, 70.0),
        (RotateRight, 68.0),
        (RotateLeft, 72.0),
        (RotateRight, 70.0),
    ];
    let mut events = Vec::new();
    let mut expected = Vec::new();
    let mut t = SCRIPT_LEAD_S;
    for (class, peak) in plan {
        events.push(MotionEvent {
            class,
            peak,
            duration: 1.0,
            start: t,
        });
        expected.push(ExpectedToken {
            action: ActionVector::head(class),
            end: t + 1.0,
        });
        t += 1.0 + SCRIPT_GAP_S;
    }
    let a = noise_deg * ACCEL_NOISE_PER_DEG;
    let imu = gen_imu_timeline(&events, t, 100.0, [a, a, a, noise_deg, noise_deg, noise_deg], 0.0, seed)?;
    Ok(ScriptedScenario {
        scenario: Scenario {
            name: "head-twelve".into(),
            scheme: Some(Scheme::Head),
            imu: Some("imu.csv".into()),
            audio: None,
            expected,
            inject: Vec::new(),
        },
        input: ReplayInput { imu, audio: None },
    })
}

/// One scripted multimodal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScriptStep {
    Head(HeadMotionClass, f64),
    Hum(ScaleClass, DurationClass),
}

/// Servo gestures, a switch to thruster mode, thruster commands, a switch
/// back and a final servo gesture.
pub fn multimodal_script() -> Vec<ScriptStep> {
    use DurationClass::*;
    use HeadMotionClass::*;
    use ScaleClass::*;
    vec![
        ScriptStep::Head(Extension, 75.0),
        ScriptStep::Head(Flexion, 47.0),
        ScriptStep::Head(RotateLeft, 70.0),
        ScriptStep::Hum(So, Long),
        ScriptStep::Hum(Do, Short),
        ScriptStep::Hum(Fa, Short),
        ScriptStep::Hum(Re, Long),
        ScriptStep::Head(RotateRight, 70.0),
        ScriptStep::Hum(Mi, Short),
        ScriptStep::Hum(So, Short),
        ScriptStep::Head(BendRight, 40.0),
    ]
}

pub const SHORT_TONE_S: f64 = 0.3;
pub const LONG_TONE_S: f64 = 0.8;

/// Renders a multimodal script onto common-clock IMU and audio streams.
pub fn multimodal_scenario(steps: &[ScriptStep], noise_deg: f64, noise_rms: f64, seed: u64) -> Result<ScriptedScenario> {
    let mut motions = Vec::new();
    let mut tones = Vec::new();
    let mut expected = Vec::new();
    let mut t = SCRIPT_LEAD_S;
    for step in steps {
        match *step {
            ScriptStep::Head(class, peak) => {
                motions.push(MotionEvent {
                    class,
                    peak,
                    duration: 1.0,
                    start: t,
                });
                expected.push(ExpectedToken {
                    action: ActionVector::head(class),
                    end: t + 1.0,
                });
                t += 1.0;
            }
            ScriptStep::Hum(scale, d) => {
                let duration = match d {
                    DurationClass::Short => SHORT_TONE_S,
                    DurationClass::Long => LONG_TONE_S,
                };
                tones.push(ToneEvent {
                    scale,
                    start: t,
                    duration,
                    amplitude: 0.6,
                });
                expected.push(ExpectedToken {
                    action: ActionVector::throat(scale, d),
                    end: t + duration,
                });
                t += duration;
            }
        }
        t += SCRIPT_GAP_S;
    }
    let a = noise_deg * ACCEL_NOISE_PER_DEG;
    let imu = gen_imu_timeline(&motions, t, 100.0, [a, a, a, noise_deg, noise_deg, noise_deg], 0.0, seed)?;
    let audio = gen_audio_timeline(&tones, t, 16_000, noise_rms, seed ^ 0xa0d1)?;
    Ok(ScriptedScenario {
        scenario: Scenario {
            name: "multimodal".into(),
            scheme: Some(Scheme::Multimodal),
            imu: Some("imu.csv".into()),
            audio: Some("audio.wav".into()),
            expected,
            inject: Vec::new(),
        },
        input: ReplayInput {
            imu,
            audio: Some(audio),
        },
    })
}
