//! Head-motion recognition by dynamic time warping against per-class
//! templates built with DTW barycenter averaging.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::MotionSegment;
use crate::signal_io::ImuSample;

/// The six head motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMotionClass {
    BendLeft,
    BendRight,
    Extension,
    Flexion,
    RotateLeft,
    RotateRight,
}

/// Euler angle that carries a motion's magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EulerAxis {
    /// β
    Roll,
    /// α
    Pitch,
    /// γ
    Yaw,
}

impl EulerAxis {
    pub fn index(self) -> usize {
        match self {
            EulerAxis::Roll => 0,
            EulerAxis::Pitch => 1,
            EulerAxis::Yaw => 2,
        }
    }
}

impl HeadMotionClass {
    /// Ordered by command index.
    pub const ALL: [HeadMotionClass; 6] = [
        HeadMotionClass::BendRight,
        HeadMotionClass::BendLeft,
        HeadMotionClass::Extension,
        HeadMotionClass::Flexion,
        HeadMotionClass::RotateLeft,
        HeadMotionClass::RotateRight,
    ];

    /// Command index 1..=6.
    pub fn command_index(self) -> u8 {
        match self {
            HeadMotionClass::BendRight => 1,
            HeadMotionClass::BendLeft => 2,
            HeadMotionClass::Extension => 3,
            HeadMotionClass::Flexion => 4,
            HeadMotionClass::RotateLeft => 5,
            HeadMotionClass::RotateRight => 6,
        }
    }

    pub fn from_command_index(index: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.command_index() == index)
    }

    /// Position in [`HeadMotionClass::ALL`].
    pub fn ordinal(self) -> usize {
        self.command_index() as usize - 1
    }

    pub fn axis(self) -> EulerAxis {
        match self {
            HeadMotionClass::BendLeft | HeadMotionClass::BendRight => EulerAxis::Roll,
            HeadMotionClass::Extension | HeadMotionClass::Flexion => EulerAxis::Pitch,
            HeadMotionClass::RotateLeft | HeadMotionClass::RotateRight => EulerAxis::Yaw,
        }
    }

    /// Sign of the governing angle's excursion.
    pub fn direction(self) -> f64 {
        match self {
            HeadMotionClass::BendLeft | HeadMotionClass::Flexion | HeadMotionClass::RotateLeft => 1.0,
            _ => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadMotionClass::BendLeft => "bend_left",
            HeadMotionClass::BendRight => "bend_right",
            HeadMotionClass::Extension => "extension",
            HeadMotionClass::Flexion => "flexion",
            HeadMotionClass::RotateLeft => "rotate_left",
            HeadMotionClass::RotateRight => "rotate_right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }
}

impl fmt::Display for HeadMotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed-rate multichannel series stored frame-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    channels: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || !data.len().is_multiple_of(channels) {
            return Err(Error::arg(format!(
                "{} values do not form frames of {channels} channels",
                data.len()
            )));
        }
        Ok(Self { channels, data })
    }

    pub fn from_frames<const N: usize>(frames: &[[f64; N]]) -> Self {
        Self {
            channels: N,
            data: frames.iter().flatten().copied().collect(),
        }
    }

    /// Single-channel series.
    pub fn scalar(values: &[f64]) -> Self {
        Self {
            channels: 1,
            data: values.to_vec(),
        }
    }

    /// ax, ay, az, roll, pitch, yaw per sample.
    pub fn from_imu(samples: &[ImuSample]) -> Self {
        Self {
            channels: 6,
            data: samples.iter().flat_map(|s| s.channels()).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.frames().map(move |f| f[c])
    }

    pub fn scaled(&self, factor: f64) -> Series {
        Series {
            channels: self.channels,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Linear-interpolation resampling to `len` frames; endpoints preserved.
    pub fn resample(&self, len: usize) -> Series {
        let n = self.len();
        if len == n || n == 0 || len == 0 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(len * self.channels);
        for i in 0..len {
            let pos = if len == 1 {
                0.0
            } else {
                i as f64 * (n - 1) as f64 / (len - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            let (a, b) = (self.frame(lo), self.frame(hi));
            data.extend(a.iter().zip(b).map(|(x, y)| x + w * (y - x)));
        }
        Series {
            channels: self.channels,
            data,
        }
    }
}

/// Per-frame distance used inside DTW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalCost {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

impl LocalCost {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            LocalCost::Euclidean => sq.sqrt(),
            LocalCost::SquaredEuclidean => sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub distance: f64,
    /// Aligned `(i, j)` frame pairs from `(0, 0)` to `(n - 1, m - 1)`.
    pub path: Vec<(usize, usize)>,
}

fn check_pair(a: &Series, b: &Series) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("dtw needs two non-empty series"));
    }
    if a.channels() != b.channels() {
        return Err(Error::arg(format!(
            "channel mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

/// Full DTW with the symmetric step pattern {(1,0), (0,1), (1,1)}.
pub fn dtw(a: &Series, b: &Series, cost: LocalCost) -> Result<DtwResult> {
    check_pair(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cost.eval(a.frame(i), b.frame(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = acc[(i - 1) * m + j - 1];
                }
                if i > 0 {
                    best = best.min(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    best = best.min(acc[i * m + j - 1]);
                }
                best
            };
            acc[i * m + j] = best + c;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        distance: acc[n * m - 1],
        path,
    })
}

/// DTW distance only, in O(m) memory.
pub fn dtw_distance(a: &Series, b: &Series, cost: LocalCost) -> Result<f64> {
    check_pair(a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..a.len() {
        let fa = a.frame(i);
        for j in 0..m {
            let c = cost.eval(fa, b.frame(j));
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
            cur[j] = best + c;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Result of barycenter averaging.
#[derive(Debug, Clone)]
pub struct DbaOutcome {
    pub average: Series,
    /// Total within-set DTW cost of the initial average, then after each
    /// accepted iteration. Non-increasing.
    pub costs: Vec<f64>,
}

/// Cost used for alignment and reported by [`dba_average`]. The frame mean
/// minimises squared distances, so this pairing makes each update step
/// non-increasing in total cost.
pub const DBA_COST: LocalCost = LocalCost::SquaredEuclidean;

pub const DBA_TOLERANCE: f64 = 1e-6;

fn total_cost(sequences: &[Series], average: &Series) -> Result<f64> {
    sequences
        .iter()
        .map(|s| dtw_distance(average, s, DBA_COST))
        .sum()
}

/// DTW barycenter averaging.
///
/// Every iteration aligns each sequence to the current average and replaces
/// each average frame with the mean of the frames aligned to it. Stops after
/// `iters` iterations, or once the relative cost improvement falls below
/// [`DBA_TOLERANCE`]; an iteration that would raise the cost (possible only
/// through rounding) is discarded.
pub fn dba_average(sequences: &[Series], init: &Series, iters: usize) -> Result<DbaOutcome> {
    if sequences.is_empty() {
        return Err(Error::arg("dba needs at least one sequence"));
    }
    if init.is_empty() {
        return Err(Error::arg("dba initial average is empty"));
    }
    let channels = init.channels();
    if let Some(bad) = sequences.iter().find(|s| s.channels() != channels || s.is_empty()) {
        return Err(Error::arg(format!(
            "sequence with {} channels / {} frames does not match the initial average",
            bad.channels(),
            bad.len()
        )));
    }

    let mut average = init.clone();
    let mut cost = total_cost(sequences, &average)?;
    let mut costs = vec![cost];
    for _ in 0..iters {
        let mut sums = vec![0.0; average.len() * channels];
        let mut counts = vec![0usize; average.len()];
        for s in sequences {
            for (i, j) in dtw(&average, s, DBA_COST)?.path {
                counts[i] += 1;
                for (acc, v) in sums[i * channels..(i + 1) * channels].iter_mut().zip(s.frame(j)) {
                    *acc += v;
                }
            }
        }
        let data = sums
            .chunks_exact(channels)
            .zip(&counts)
            .flat_map(|(frame, &n)| frame.iter().map(move |v| v / n as f64))
            .collect();
        let candidate = Series { channels, data };
        let next = total_cost(sequences, &candidate)?;
        if next > cost {
            break;
        }
        let improvement = cost - next;
        average = candidate;
        cost = next;
        costs.push(cost);
        if improvement <= DBA_TOLERANCE * cost.abs() {
            break;
        }
    }
    Ok(DbaOutcome { average, costs })
}

/// Index of the sequence with the smallest summed DTW distance to the rest.
pub fn medoid(sequences: &[Series], cost: LocalCost) -> Result<usize> {
    if sequences.is_empty() {
        return Err(Error::arg("medoid of an empty set"));
    }
    let n = sequences.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dtw_distance(&sequences[i], &sequences[j], cost)?;
            sums[i] += d;
            sums[j] += d;
        }
    }
    Ok(sums
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0))
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn fit<'a>(series: impl IntoIterator<Item = &'a Series>) -> Result<Self> {
        let mut channels = None;
        let mut sum = Vec::new();
        let mut sum_sq = Vec::new();
        let mut n = 0usize;
        for s in series {
            let c = *channels.get_or_insert(s.channels());
            if c != s.channels() {
                return Err(Error::arg("mixed channel counts in normalizer fit"));
            }
            if sum.is_empty() {
                sum = vec![0.0; c];
                sum_sq = vec![0.0; c];
            }
            for f in s.frames() {
                for k in 0..c {
                    sum[k] += f[k];
                    sum_sq[k] += f[k] * f[k];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::arg("normalizer needs at least one frame"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n as f64 - m * m).max(0.0);
                // flat channels carry no information; leave them unscaled
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, s: &Series) -> Series {
        let c = s.channels();
        let data = s
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        Series { channels: c, data }
    }

    pub fn invert(&self, s: &Series) -> Series {
        let c = s.channels();
        let data = s
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % c] + self.mean[i % c])
            .collect();
        Series { channels: c, data }
    }
}

/// A class's averaged motion, in sensor units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTemplate {
    pub class: HeadMotionClass,
    pub sequence: Series,
    pub support_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub dba_iters: usize,
    /// Percentile of within-class training distances used for rejection.
    pub reject_percentile: f64,
    /// Multiplier on that percentile.
    pub reject_scale: f64,
    pub rate: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            dba_iters: 10,
            reject_percentile: 95.0,
            reject_scale: 2.0,
            rate: 100.0,
        }
    }
}

pub const TEMPLATE_FORMAT_VERSION: u32 = 1;

/// Trained head-motion model: six templates plus normalisation and
/// per-class rejection thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: u32,
    pub rate: f64,
    pub channels: usize,
    pub normalizer: Normalizer,
    pub templates: Vec<MotionTemplate>,
    /// Indexed like `templates`.
    pub reject_thresholds: Vec<f64>,
    #[serde(skip)]
    normalized: Vec<Series>,
}

/// Percentile by linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Builds one template per class.
///
/// Sequences are z-scored with statistics pooled over the whole training
/// set, resampled to their class's median length, and averaged with
/// [`dba_average`] starting from the class medoid.
pub fn build_templates(labeled: &[(Series, HeadMotionClass)], cfg: &TemplateConfig) -> Result<TemplateSet> {
    let missing: Vec<&str> = HeadMotionClass::ALL
        .iter()
        .filter(|c| !labeled.iter().any(|(_, l)| l == *c))
        .map(|c| c.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Training(format!(
            "no training sequences for: {}",
            missing.join(", ")
        )));
    }
    if let Some((s, c)) = labeled.iter().find(|(s, _)| s.is_empty()) {
        return Err(Error::Training(format!("empty training sequence for {c} ({} ch)", s.channels())));
    }
    let normalizer = Normalizer::fit(labeled.iter().map(|(s, _)| s))?;
    let channels = labeled[0].0.channels();

    let mut templates = Vec::with_capacity(6);
    let mut thresholds = Vec::with_capacity(6);
    for class in HeadMotionClass::ALL {
        let members: Vec<Series> = labeled
            .iter()
            .filter(|(_, l)| *l == class)
            .map(|(s, _)| normalizer.apply(s))
            .collect();
        let mut lengths: Vec<usize> = members.iter().map(Series::len).collect();
        lengths.sort_unstable();
        let target = lengths[(lengths.len() - 1) / 2];
        let resampled: Vec<Series> = members.iter().map(|s| s.resample(target)).collect();
        let init = medoid(&resampled, DBA_COST)?;
        let avg = dba_average(&resampled, &resampled[init], cfg.dba_iters)?.average;

        let dists = members
            .iter()
            .map(|s| dtw_distance(s, &avg, LocalCost::Euclidean))
            .collect::<Result<Vec<_>>>()?;
        thresholds.push(percentile(&dists, cfg.reject_percentile) * cfg.reject_scale);
        templates.push(MotionTemplate {
            class,
            sequence: normalizer.invert(&avg),
            support_count: members.len(),
        });
    }
    let set = TemplateSet::from_parts(cfg.rate, normalizer, templates, thresholds)?;
    debug_assert_eq!(set.channels, channels);
    Ok(set)
}

/// Outcome of matching one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadDecision {
    pub class: HeadMotionClass,
    pub distance: f64,
    /// Largest |angle| of the class's governing Euler channel, degrees.
    pub peak_angle: f64,
    /// Distance exceeded the class's rejection threshold.
    pub rejected: bool,
}

impl HeadDecision {
    pub fn accepted(&self) -> Option<HeadMotionClass> {
        (!self.rejected).then_some(self.class)
    }
}

/// Index and distance of the nearest template.
pub fn nearest_template(series: &Series, templates: &[Series]) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (i, t) in templates.iter().enumerate() {
        let d = dtw_distance(series, t, LocalCost::Euclidean)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    if best.1.is_finite() {
        Ok(best)
    } else {
        Err(Error::arg("no templates to match against"))
    }
}

impl TemplateSet {
    /// Rebuilds a set from stored parts.
    pub fn from_parts(
        rate: f64,
        normalizer: Normalizer,
        templates: Vec<MotionTemplate>,
        reject_thresholds: Vec<f64>,
    ) -> Result<Self> {
        let mut set = Self {
            version: TEMPLATE_FORMAT_VERSION,
            rate,
            channels: normalizer.mean.len(),
            normalizer,
            templates,
            reject_thresholds,
            normalized: Vec::new(),
        };
        set.validate()?;
        set.refresh();
        Ok(set)
    }

    fn refresh(&mut self) {
        self.normalized = self
            .templates
            .iter()
            .map(|t| self.normalizer.apply(&t.sequence))
            .collect();
    }

    fn validate(&self) -> Result<()> {
        if self.version != TEMPLATE_FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "template format version {} (expected {TEMPLATE_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.templates.len() != 6 || self.reject_thresholds.len() != 6 {
            return Err(Error::Validation("template set must hold six classes".into()));
        }
        for (t, class) in self.templates.iter().zip(HeadMotionClass::ALL) {
            if t.class != class {
                return Err(Error::Validation(format!("template order: expected {class}, found {}", t.class)));
            }
            if t.sequence.channels() != self.channels || t.sequence.is_empty() {
                return Err(Error::Validation(format!("bad template shape for {}", t.class)));
            }
        }
        if self.normalizer.std.len() != self.channels {
            return Err(Error::Validation("normalizer shape mismatch".into()));
        }
        Ok(())
    }

    pub fn template(&self, class: HeadMotionClass) -> &MotionTemplate {
        &self.templates[class.ordinal()]
    }

    /// Classifies a segment in raw sensor units.
    pub fn classify_series(&self, series: &Series, raw_euler_peak: impl Fn(EulerAxis) -> f64) -> Result<HeadDecision> {
        let (idx, distance) = nearest_template(&self.normalizer.apply(series), &self.normalized)?;
        let class = self.templates[idx].class;
        Ok(HeadDecision {
            class,
            distance,
            peak_angle: raw_euler_peak(class.axis()),
            rejected: distance > self.reject_thresholds[idx],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut set: TemplateSet = serde_json::from_str(text)?;
        set.validate()?;
        set.refresh();
        Ok(set)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Largest |angle| on one Euler axis over a run of samples.
pub fn peak_angle(samples: &[ImuSample], axis: EulerAxis) -> f64 {
    samples
        .iter()
        .map(|s| s.euler[axis.index()].abs())
        .fold(0.0, f64::max)
}

/// Nearest-template classification of a motion segment, with rejection.
pub fn classify_head(segment: &MotionSegment, templates: &TemplateSet) -> Result<HeadDecision> {
    if segment.samples.is_empty() {
        return Err(Error::arg("empty motion segment"));
    }
    let series = Series::from_imu(&segment.samples);
    templates.classify_series(&series, |axis| peak_angle(&segment.samples, axis))
}
