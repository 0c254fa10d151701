//! Labelled corpora on disk and the train/evaluate protocols over them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uwintent_core::head_dtw::{build_templates, classify_head, HeadMotionClass, Series, TemplateConfig, TemplateSet};
use uwintent_core::metrics::ConfusionMatrix;
use uwintent_core::mfcc::MfccConfig;
use uwintent_core::nn::{train_scale_model, ScaleClass, ScaleModel, TrainConfig, TrainReport};
use uwintent_core::pipeline::{extract_fragment, extract_motion, PipelineConfig};
use uwintent_core::preprocess::MotionSegment;
use uwintent_core::signal_io::{decimate_imu, read_imu_csv, read_wav, write_imu_csv, write_wav, AudioSegment};
use uwintent_core::synthgen::{
    gen_head_motion, gen_scale_tone, head_corpus_specs, tone_corpus_specs, HeadCorpusConfig, ToneCorpusConfig,
};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    /// IMU CSV files labelled with head-motion classes.
    Head,
    /// WAV files labelled with scale classes.
    Throat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: String,
}

/// Index of a labelled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: CorpusKind,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    /// Reads a manifest and resolves its item paths.
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for item in &mut m.items {
            item.path = dir.join(&item.path);
        }
        if m.items.is_empty() {
            return Err(AppError::data(format!("{}: manifest lists no items", path.display())));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(AppError::runtime)?;
        fs::write(path, text).map_err(|e| AppError::runtime(format!("{}: {e}", path.display())))
    }
}

/// Writes a synthetic head-motion corpus and its manifest into `dir`.
pub fn synth_head_corpus(dir: &Path, cfg: &HeadCorpusConfig) -> AppResult<Manifest> {
    fs::create_dir_all(dir.join("head")).map_err(|e| AppError::runtime(format!("{}: {e}", dir.display())))?;
    let mut items = Vec::new();
    for (i, spec) in head_corpus_specs(cfg).iter().enumerate() {
        let rel = PathBuf::from(format!("head/{i:05}_{}.csv", spec.class));
        write_imu_csv(dir.join(&rel), &gen_head_motion(spec)?)?;
        items.push(ManifestItem {
            path: rel,
            label: spec.class.name().into(),
        });
    }
    let m = Manifest {
        kind: CorpusKind::Head,
        items,
    };
    m.save(&dir.join("manifest.json"))?;
    Ok(m)
}

/// Writes a synthetic tone corpus and its manifest into `dir`.
pub fn synth_tone_corpus(dir: &Path, cfg: &ToneCorpusConfig) -> AppResult<Manifest> {
    fs::create_dir_all(dir.join("throat")).map_err(|e| AppError::runtime(format!("{}: {e}", dir.display())))?;
    let mut items = Vec::new();
    for (i, spec) in tone_corpus_specs(cfg).iter().enumerate() {
        let rel = PathBuf::from(format!("throat/{i:05}_{}.wav", spec.scale));
        write_wav(dir.join(&rel), &gen_scale_tone(spec)?)?;
        items.push(ManifestItem {
            path: rel,
            label: spec.scale.name().into(),
        });
    }
    let m = Manifest {
        kind: CorpusKind::Throat,
        items,
    };
    m.save(&dir.join("manifest.json"))?;
    Ok(m)
}

/// Outcome of training or evaluating on a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: CorpusKind,
    pub train_items: usize,
    pub test_items: usize,
    pub accuracy: f64,
    /// Mean of the row-normalised diagonal.
    pub diagonal_mean: f64,
    pub confusion: ConfusionMatrix,
    /// Row-normalised confusion, true classes by row.
    pub normalized: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainReport>,
}

impl EvalReport {
    fn new(kind: CorpusKind, train_items: usize, confusion: ConfusionMatrix, training: Option<TrainReport>) -> Self {
        Self {
            kind,
            train_items,
            test_items: confusion.total() as usize,
            accuracy: confusion.accuracy(),
            diagonal_mean: confusion.diagonal_mean(),
            normalized: confusion.normalized(),
            confusion,
            training,
        }
    }
}

/// A trained artifact.
#[derive(Debug, Clone)]
pub enum Artifact {
    Templates(TemplateSet),
    Scale(Box<ScaleModel>),
}

impl Artifact {
    pub fn save(&self, path: &Path) -> AppResult<()> {
        match self {
            Artifact::Templates(t) => t.save(path)?,
            Artifact::Scale(m) => m.save(path)?,
        }
        Ok(())
    }
}

/// Labelled items as (train, test).
type Split<T> = (Vec<(T, usize)>, Vec<(T, usize)>);

/// Items of one class in manifest order go to training first: the first
/// `fraction` of each class trains, the rest tests.
fn split_per_class<T>(items: Vec<(T, usize)>, classes: usize, fraction: f64) -> Split<T> {
    let mut totals = vec![0usize; classes];
    for (_, k) in &items {
        totals[*k] += 1;
    }
    let quota: Vec<usize> = totals.iter().map(|&n| (n as f64 * fraction).floor() as usize).collect();
    let mut seen = vec![0usize; classes];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (x, k) in items {
        if seen[k] < quota[k] {
            train.push((x, k));
        } else {
            test.push((x, k));
        }
        seen[k] += 1;
    }
    (train, test)
}

fn head_label(item: &ManifestItem) -> AppResult<HeadMotionClass> {
    HeadMotionClass::parse(&item.label)
        .ok_or_else(|| AppError::data(format!("{}: unknown head-motion label {:?}", item.path.display(), item.label)))
}

fn scale_label(item: &ManifestItem) -> AppResult<ScaleClass> {
    ScaleClass::parse(&item.label)
        .ok_or_else(|| AppError::data(format!("{}: unknown scale label {:?}", item.path.display(), item.label)))
}

fn load_motions(m: &Manifest, pcfg: &PipelineConfig) -> AppResult<Vec<(Option<MotionSegment>, usize)>> {
    m.items
        .iter()
        .map(|item| {
            let class = head_label(item)?;
            let stream = decimate_imu(&read_imu_csv(&item.path)?, pcfg.imu_decimation)?;
            Ok((extract_motion(&stream, pcfg)?, class.ordinal()))
        })
        .collect()
}

fn load_fragments(m: &Manifest, pcfg: &PipelineConfig) -> AppResult<Vec<(Option<AudioSegment>, usize)>> {
    m.items
        .iter()
        .map(|item| {
            let class = scale_label(item)?;
            Ok((extract_fragment(&read_wav(&item.path)?, pcfg)?, class.index()))
        })
        .collect()
}

fn require_every_class<T>(train: &[(Option<T>, usize)], labels: &[&str]) -> AppResult<()> {
    for (k, label) in labels.iter().enumerate() {
        if !train.iter().any(|(x, c)| *c == k && x.is_some()) {
            return Err(AppError::data(format!("corpus has no usable training items for class {label}")));
        }
    }
    Ok(())
}

/// Settings for [`train`].
#[derive(Debug, Clone, Default)]
pub struct TrainSettings {
    pub pipeline: PipelineConfig,
    pub templates: TemplateConfig,
    pub mfcc: MfccConfig,
    pub train: TrainConfig,
}

/// Head corpora: half of each class builds templates, half tests. Throat
/// corpora: 70% of each class trains the network, 30% tests. Items the
/// segmenter finds nothing in count as rejections when testing.
pub fn train(m: &Manifest, s: &TrainSettings) -> AppResult<(Artifact, EvalReport)> {
    match m.kind {
        CorpusKind::Head => {
            let labels: Vec<&str> = HeadMotionClass::ALL.iter().map(|c| c.name()).collect();
            let (train, test) = split_per_class(load_motions(m, &s.pipeline)?, labels.len(), 0.5);
            require_every_class(&train, &labels)?;
            let labeled: Vec<(Series, HeadMotionClass)> = train
                .iter()
                .filter_map(|(seg, k)| seg.as_ref().map(|s| (Series::from_imu(&s.samples), HeadMotionClass::ALL[*k])))
                .collect();
            let set = build_templates(&labeled, &s.templates)?;
            let confusion = head_confusion(&test, &set)?;
            Ok((Artifact::Templates(set), EvalReport::new(m.kind, labeled.len(), confusion, None)))
        }
        CorpusKind::Throat => {
            let labels: Vec<&str> = ScaleClass::ALL.iter().map(|c| c.name()).collect();
            let (train, test) = split_per_class(load_fragments(m, &s.pipeline)?, labels.len(), 0.7);
            require_every_class(&train, &labels)?;
            let present = |set: &[(Option<AudioSegment>, usize)]| -> Vec<(AudioSegment, ScaleClass)> {
                set.iter().filter_map(|(a, k)| a.clone().map(|a| (a, ScaleClass::ALL[*k]))).collect()
            };
            let train_set = present(&train);
            let (model, report) = train_scale_model(&train_set, &present(&test), &s.mfcc, &s.train)?;
            let confusion = throat_confusion(&test, &model)?;
            Ok((Artifact::Scale(Box::new(model)), EvalReport::new(m.kind, train_set.len(), confusion, Some(report))))
        }
    }
}

/// Scores every item of a corpus against a trained artifact.
pub fn evaluate(m: &Manifest, artifact: &Artifact, pcfg: &PipelineConfig) -> AppResult<EvalReport> {
    let confusion = match (m.kind, artifact) {
        (CorpusKind::Head, Artifact::Templates(set)) => head_confusion(&load_motions(m, pcfg)?, set)?,
        (CorpusKind::Throat, Artifact::Scale(model)) => throat_confusion(&load_fragments(m, pcfg)?, model)?,
        _ => return Err(AppError::data("artifact does not match the corpus kind")),
    };
    Ok(EvalReport::new(m.kind, 0, confusion, None))
}

/// Reads an artifact of the kind a corpus needs.
pub fn load_artifact(kind: CorpusKind, path: &Path) -> AppResult<Artifact> {
    Ok(match kind {
        CorpusKind::Head => Artifact::Templates(TemplateSet::load(path)?),
        CorpusKind::Throat => Artifact::Scale(Box::new(ScaleModel::load(path)?)),
    })
}

fn head_confusion(test: &[(Option<MotionSegment>, usize)], set: &TemplateSet) -> AppResult<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(HeadMotionClass::ALL.iter().map(|c| c.name()));
    for (seg, k) in test {
        let predicted = match seg {
            Some(s) => classify_head(s, set)?.accepted().map(HeadMotionClass::ordinal),
            None => None,
        };
        m.record(*k, predicted);
    }
    Ok(m)
}

fn throat_confusion(test: &[(Option<AudioSegment>, usize)], model: &ScaleModel) -> AppResult<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(ScaleClass::ALL.iter().map(|c| c.name()));
    for (frag, k) in test {
        let predicted = match frag {
            Some(a) => Some(model.predict(a)?.best.index()),
            None => None,
        };
        m.record(*k, predicted);
    }
    Ok(m)
}
