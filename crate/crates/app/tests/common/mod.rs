#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use uwintent::protocol::{Envelope, Kind};
use uwintent::server;
use uwintent::session::{self, SessionHandle, SessionSetup};
use uwintent::telemetry::TelemetryHub;
use uwintent_core::head_dtw::{build_templates, HeadMotionClass, Series, TemplateConfig, TemplateSet};
use uwintent_core::mapper::Scheme;
use uwintent_core::mfcc::MfccConfig;
use uwintent_core::nn::{train_scale_model, ScaleClass, ScaleModel, TrainConfig};
use uwintent_core::pipeline::{extract_fragment, extract_motion, Models, PipelineConfig};
use uwintent_core::synthgen::{
    gen_head_motion, gen_scale_tone, head_corpus_specs, tone_corpus_specs, HeadCorpusConfig, ToneCorpusConfig,
};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub fn small_templates() -> TemplateSet {
    let cfg = HeadCorpusConfig {
        per_class: 20,
        ..HeadCorpusConfig::default()
    };
    let pcfg = PipelineConfig::default();
    let labeled: Vec<(Series, HeadMotionClass)> = head_corpus_specs(&cfg)
        .iter()
        .map(|s| {
            let seg = extract_motion(&gen_head_motion(s).unwrap(), &pcfg).unwrap().unwrap();
            (Series::from_imu(&seg.samples), s.class)
        })
        .collect();
    build_templates(&labeled, &TemplateConfig::default()).unwrap()
}

/// A quickly trained, smaller network; good enough to tell the scales apart
/// on clean tones.
pub fn small_scale_model() -> ScaleModel {
    let cfg = ToneCorpusConfig {
        per_class: 40,
        ..ToneCorpusConfig::default()
    };
    let pcfg = PipelineConfig::default();
    let set: Vec<_> = tone_corpus_specs(&cfg)
        .iter()
        .filter_map(|s| extract_fragment(&gen_scale_tone(s).unwrap(), &pcfg).unwrap().map(|a| (a, s.scale)))
        .collect();
    let train = TrainConfig {
        hidden_dim: 24,
        epochs: 20,
        ..TrainConfig::default()
    };
    let (model, _) = train_scale_model(&set, &[], &MfccConfig::default(), &train).unwrap();
    assert!(set.iter().all(|(_, c)| ScaleClass::ALL.contains(c)));
    model
}

pub struct Server {
    pub url: String,
    pub handle: SessionHandle,
}

/// Starts a session and its endpoint on a free port.
pub async fn start_server(scheme: Scheme, models: Models, base_dir: &Path, capacity: usize) -> Server {
    let setup = SessionSetup {
        scheme,
        pipeline: PipelineConfig {
            scheme,
            ..PipelineConfig::default()
        },
        models,
        speed: 100.0,
        tick_s: 0.01,
        state_interval_s: 0.05,
        health_interval_s: 1.0,
        base_dir: base_dir.to_path_buf(),
    };
    let handle = session::spawn(setup, TelemetryHub::new(capacity));
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("ws://{}/ws", listener.local_addr().unwrap());
    tokio::spawn(server::serve(listener, handle.clone(), None));
    Server { url, handle }
}

pub async fn connect(url: &str) -> Ws {
    let (ws, _) = connect_async(url).await.unwrap();
    ws
}

pub async fn send(ws: &mut Ws, line: &str) {
    ws.send(Message::Text(format!("{line}\n"))).await.unwrap();
}

/// Next server message, parsed; panics after ten seconds of silence.
pub async fn next(ws: &mut Ws) -> Envelope {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .unwrap();
        if let Message::Text(text) = msg {
            assert!(text.ends_with('\n'), "messages are newline-terminated");
            return serde_json::from_str(text.trim_end()).unwrap();
        }
    }
}

/// Sends a control line and returns the reply addressed to this client,
/// collecting any telemetry that arrives first.
pub async fn request(ws: &mut Ws, line: &str, seen: &mut Vec<Envelope>) -> Envelope {
    send(ws, line).await;
    loop {
        let env = next(ws).await;
        if matches!(env.kind, Kind::Ack | Kind::Error) {
            return env;
        }
        seen.push(env);
    }
}

/// Telemetry up to and including the health message of a finished run.
pub async fn until_finished(ws: &mut Ws, seen: &mut Vec<Envelope>) {
    loop {
        let env = next(ws).await;
        let done = env.kind == Kind::Health && env.payload["finished"] == Value::Bool(true);
        seen.push(env);
        if done {
            return;
        }
    }
}

pub fn of_kind(msgs: &[Envelope], kind: Kind) -> Vec<&Envelope> {
    msgs.iter().filter(|m| m.kind == kind).collect()
}
