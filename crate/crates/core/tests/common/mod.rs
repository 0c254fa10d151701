#![allow(dead_code)]

pub mod criteria;
pub mod oracles;

use uwintent_core::head_dtw::{build_templates, classify_head, HeadMotionClass, Series, TemplateConfig, TemplateSet};
use uwintent_core::metrics::ConfusionMatrix;
use uwintent_core::mfcc::MfccConfig;
use uwintent_core::nn::{train_scale_model, ScaleClass, ScaleModel, TrainConfig, TrainReport};
use uwintent_core::pipeline::{extract_fragment, extract_motion, PipelineConfig};
use uwintent_core::preprocess::MotionSegment;
use uwintent_core::signal_io::AudioSegment;
use uwintent_core::synthgen::{
    gen_head_motion, gen_scale_tone, head_corpus_specs, tone_corpus_specs, HeadCorpusConfig, ToneCorpusConfig,
};

/// Segmented head corpus, split into (train, test) with the first half of
/// each class's items for training.
pub struct HeadSplit {
    pub train: Vec<(MotionSegment, HeadMotionClass)>,
    pub test: Vec<(Option<MotionSegment>, HeadMotionClass)>,
}

pub fn head_split(cfg: &HeadCorpusConfig) -> HeadSplit {
    let pcfg = PipelineConfig::default();
    let specs = head_corpus_specs(cfg);
    let mut seen = [0usize; 6];
    let mut split = HeadSplit { train: Vec::new(), test: Vec::new() };
    for spec in specs {
        let stream = gen_head_motion(&spec).unwrap();
        let seg = extract_motion(&stream, &pcfg).unwrap();
        let k = spec.class.ordinal();
        if seen[k] < cfg.per_class / 2 {
            split.train.push((seg.expect("training motion was segmented"), spec.class));
        } else {
            split.test.push((seg, spec.class));
        }
        seen[k] += 1;
    }
    split
}

pub fn head_templates(split: &HeadSplit) -> TemplateSet {
    let labeled: Vec<(Series, HeadMotionClass)> =
        split.train.iter().map(|(s, c)| (Series::from_imu(&s.samples), *c)).collect();
    build_templates(&labeled, &TemplateConfig::default()).unwrap()
}

pub fn head_confusion(split: &HeadSplit, templates: &TemplateSet) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new(HeadMotionClass::ALL.iter().map(|c| c.name()));
    for (seg, class) in &split.test {
        let predicted = seg
            .as_ref()
            .and_then(|s| classify_head(s, templates).unwrap().accepted())
            .map(|c| c.ordinal());
        m.record(class.ordinal(), predicted);
    }
    m
}

pub struct ToneSplit {
    pub train: Vec<(AudioSegment, ScaleClass)>,
    pub test: Vec<(Option<AudioSegment>, ScaleClass)>,
}

/// Fragments of a tone corpus, 70% of each class for training.
pub fn tone_split(cfg: &ToneCorpusConfig) -> ToneSplit {
    let pcfg = PipelineConfig::default();
    let n_train = cfg.per_class * 7 / 10;
    let mut seen = [0usize; 5];
    let mut split = ToneSplit { train: Vec::new(), test: Vec::new() };
    for spec in tone_corpus_specs(cfg) {
        let clip = gen_scale_tone(&spec).unwrap();
        let frag = extract_fragment(&clip, &pcfg).unwrap();
        let k = spec.scale.index();
        if seen[k] < n_train {
            split.train.push((frag.expect("training tone was segmented"), spec.scale));
        } else {
            split.test.push((frag, spec.scale));
        }
        seen[k] += 1;
    }
    split
}

pub fn train_tones(split: &ToneSplit, cfg: &TrainConfig) -> (ScaleModel, TrainReport) {
    let eval: Vec<(AudioSegment, ScaleClass)> =
        split.test.iter().filter_map(|(a, c)| a.clone().map(|a| (a, *c))).collect();
    train_scale_model(&split.train, &eval, &MfccConfig::default(), cfg).unwrap()
}

/// Argmax confusion matrix; unsegmented fragments count as rejections.
pub fn tone_confusion(split: &ToneSplit, model: &ScaleModel) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new(ScaleClass::ALL.iter().map(|c| c.name()));
    for (frag, class) in &split.test {
        let predicted = frag.as_ref().map(|a| model.predict(a).unwrap().best.index());
        m.record(class.index(), predicted);
    }
    m
}
