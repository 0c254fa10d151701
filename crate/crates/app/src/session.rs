//! Live session: plays a scenario against the wall clock through the
//! pipeline stages and publishes telemetry.
//!
//! Segmentation and control run on the session task; classification runs on
//! its own thread behind bounded queues so model inference never blocks the
//! async runtime. Stream time advances by `speed × tick` per tick while the
//! session is running, and every segment decided up to the current stream
//! time is classified before the plant is advanced past it, so a session
//! produces the same tokens as an offline replay.

use std::path::{Path, PathBuf};
use std::thread;

use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};
use tracing::{debug, warn};
use uwintent_core::mapper::Scheme;
use uwintent_core::pipeline::{
    ClassifyStage, ControlStage, InjectRule, LatencyStats, Models, PipelineConfig, ReplayInput, Scenario,
    SegmentEvent, SegmentStage, TokenRecord,
};
use uwintent_core::signal_io::AudioSegment;
use uwintent_core::sim::TraceRow;

use crate::config::SessionConfig;
use crate::protocol::{Control, Envelope, Kind};
use crate::telemetry::TelemetryHub;

/// Depth of the queues between pipeline stages.
const STAGE_QUEUE: usize = 32;

/// Settings a running session needs, resolved from a [`SessionConfig`].
#[derive(Debug, Clone)]
pub struct SessionSetup {
    pub scheme: Scheme,
    pub pipeline: PipelineConfig,
    pub models: Models,
    pub speed: f64,
    pub tick_s: f64,
    pub state_interval_s: f64,
    pub health_interval_s: f64,
    /// Directory relative scenario paths are resolved against.
    pub base_dir: PathBuf,
}

impl SessionSetup {
    pub fn from_config(cfg: &SessionConfig, models: Models, base_dir: PathBuf) -> Self {
        Self {
            scheme: cfg.scheme,
            pipeline: cfg.pipeline_for(cfg.scheme),
            models,
            speed: cfg.speed,
            tick_s: cfg.tick_s,
            state_interval_s: cfg.state_interval_s,
            health_interval_s: cfg.health_interval_s,
            base_dir,
        }
    }
}

type Reply = Result<Value, String>;

/// A session's answer to a control request.
#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    /// Stream time when the request was handled.
    pub t: f64,
    pub result: Reply,
}

struct Request {
    control: Control,
    reply: oneshot::Sender<Answer>,
}

/// Cloneable handle to a running session.
#[derive(Debug, Clone)]
pub struct SessionHandle {
    tx: mpsc::Sender<Request>,
    hub: TelemetryHub,
}

impl SessionHandle {
    /// Sends a control request and waits for the session's answer.
    pub async fn control(&self, control: Control) -> Answer {
        let (reply, rx) = oneshot::channel();
        let ended = Answer {
            t: 0.0,
            result: Err("session has ended".into()),
        };
        if self.tx.send(Request { control, reply }).await.is_err() {
            return ended;
        }
        rx.await.unwrap_or(ended)
    }

    pub fn hub(&self) -> &TelemetryHub {
        &self.hub
    }
}

/// Starts a session task on the current tokio runtime.
pub fn spawn(setup: SessionSetup, hub: TelemetryHub) -> SessionHandle {
    let (tx, rx) = mpsc::channel(STAGE_QUEUE);
    let session = Session {
        setup,
        hub: hub.clone(),
        loaded: None,
        live: None,
        running: false,
        clock: 0.0,
    };
    tokio::spawn(session.run(rx));
    SessionHandle { tx, hub }
}

enum WorkerMsg {
    Segment(Box<SegmentEvent>),
    RejectConfidence(f64),
}

/// The classify stage on its own thread.
struct Worker {
    tx: mpsc::Sender<WorkerMsg>,
    rx: mpsc::Receiver<Result<TokenRecord, String>>,
}

impl Worker {
    fn spawn(mut stage: ClassifyStage) -> Self {
        let (tx, mut in_rx) = mpsc::channel::<WorkerMsg>(STAGE_QUEUE);
        let (out_tx, rx) = mpsc::channel(STAGE_QUEUE);
        thread::spawn(move || {
            while let Some(msg) = in_rx.blocking_recv() {
                match msg {
                    WorkerMsg::RejectConfidence(c) => stage.set_reject_confidence(c),
                    WorkerMsg::Segment(ev) => {
                        let out = stage.classify(&ev).map_err(|e| e.to_string());
                        if out_tx.blocking_send(out).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        Self { tx, rx }
    }
}

/// A scenario ready to play.
#[derive(Debug, Clone)]
struct Loaded {
    name: String,
    scheme: Scheme,
    input: ReplayInput,
    inject: Vec<InjectRule>,
    expected: usize,
}

/// One playthrough of a loaded scenario.
struct Live {
    cfg: PipelineConfig,
    input: ReplayInput,
    chunks: Vec<AudioSegment>,
    imu_next: usize,
    chunk_next: usize,
    seg: SegmentStage,
    ctl: ControlStage,
    worker: Worker,
    now: f64,
    end: f64,
    flushed: bool,
    finished: bool,
    latencies: Vec<f64>,
    segments: usize,
    tokens: usize,
    state_interval: f64,
    next_state_t: f64,
    next_health_t: f64,
}

impl Live {
    fn new(loaded: &Loaded, cfg: PipelineConfig, models: Models, state_interval: f64) -> Result<Self, String> {
        let err = |e: uwintent_core::Error| e.to_string();
        let (rate, t0) = loaded.input.audio.as_ref().map_or((16_000, 0.0), |a| (a.sample_rate, a.t0));
        let seg = SegmentStage::new(&cfg, rate, t0).map_err(err)?;
        let cls = ClassifyStage::new(models, &cfg, loaded.inject.clone()).map_err(err)?;
        let ctl = ControlStage::new(&cfg).map_err(err)?;
        let uses_imu = matches!(cfg.scheme, Scheme::Head | Scheme::Multimodal);
        let uses_audio = matches!(cfg.scheme, Scheme::Throat | Scheme::Multimodal);
        let input = ReplayInput {
            imu: if uses_imu { loaded.input.imu.clone() } else { Vec::new() },
            audio: if uses_audio { loaded.input.audio.clone() } else { None },
        };
        let chunks = input.audio.as_ref().map_or_else(Vec::new, |a| {
            a.chunks(((cfg.audio_chunk_s * f64::from(a.sample_rate)).round() as usize).max(1))
        });
        let end = input.end_time() + cfg.tail_s;
        Ok(Self {
            cfg,
            input,
            chunks,
            imu_next: 0,
            chunk_next: 0,
            seg,
            ctl,
            worker: Worker::spawn(cls),
            now: 0.0,
            end,
            flushed: false,
            finished: false,
            latencies: Vec::new(),
            segments: 0,
            tokens: 0,
            state_interval,
            next_state_t: 0.0,
            next_health_t: 0.0,
        })
    }

    /// Feeds input up to stream time `t`, classifies what was segmented,
    /// advances the plant and publishes everything that happened.
    async fn advance(&mut self, t: f64, hub: &TelemetryHub) -> Result<(), String> {
        let mut events = Vec::new();
        loop {
            let imu_t = self.input.imu.get(self.imu_next).map_or(f64::INFINITY, |s| s.t);
            let audio_t = self.chunks.get(self.chunk_next).map_or(f64::INFINITY, AudioSegment::end_time);
            if imu_t.min(audio_t) > t {
                break;
            }
            if imu_t <= audio_t {
                let s = self.input.imu[self.imu_next];
                self.imu_next += 1;
                events.extend(self.seg.push_imu(&s).map_err(|e| e.to_string())?);
            } else {
                let c = &self.chunks[self.chunk_next];
                self.chunk_next += 1;
                events.extend(self.seg.push_audio(&c.samples, c.sample_rate));
            }
        }
        let exhausted = self.imu_next >= self.input.imu.len() && self.chunk_next >= self.chunks.len();
        if exhausted && !self.flushed {
            self.flushed = true;
            events.extend(self.seg.flush());
        }
        for ev in &events {
            self.segments += 1;
            hub.publish(&Envelope::new(Kind::Segment, ev.decided_t, serde_json::to_value(ev.record()).unwrap_or_default()));
        }
        let outstanding = events.len();
        for ev in events {
            self.worker
                .tx
                .send(WorkerMsg::Segment(Box::new(ev)))
                .await
                .map_err(|_| "classifier stopped".to_string())?;
        }
        for _ in 0..outstanding {
            let rec = self.worker.rx.recv().await.ok_or("classifier stopped")??;
            self.ctl.submit(rec);
        }
        let (rows, done) = self.ctl.advance_to(t);
        self.now = t;
        for rec in done {
            self.tokens += 1;
            if let Some(l) = rec.latency() {
                self.latencies.push(l);
            }
            hub.publish(&token_envelope(&rec));
        }
        for row in rows {
            if row.t + 1e-9 >= self.next_state_t {
                hub.publish(&self.state_envelope(&row));
                self.next_state_t = row.t + self.state_interval;
            }
        }
        if self.flushed && self.ctl.pending() == 0 && t >= self.end {
            self.finished = true;
        }
        Ok(())
    }

    fn state_envelope(&self, row: &TraceRow) -> Envelope {
        Envelope::new(
            Kind::State,
            row.t,
            json!({
                "state": row.state,
                "command": row.command,
                "mode": self.ctl.mapper().mode(),
                "gains": self.ctl.mapper().gains,
            }),
        )
    }

    fn health(&self, running: bool) -> Value {
        json!({
            "running": running,
            "finished": self.finished,
            "segments": self.segments,
            "tokens": self.tokens,
            "pending": self.ctl.pending(),
            "mode": self.ctl.mapper().mode(),
            "latency": LatencyStats::from_values(self.latencies.iter().copied()),
        })
    }
}

fn token_envelope(rec: &TokenRecord) -> Envelope {
    let mut payload = serde_json::to_value(rec).unwrap_or_default();
    payload["latency"] = json!(rec.latency());
    Envelope::new(Kind::Token, rec.applied_t.unwrap_or(rec.emitted_t), payload)
}

struct Session {
    setup: SessionSetup,
    hub: TelemetryHub,
    loaded: Option<Loaded>,
    live: Option<Live>,
    running: bool,
    /// Stream time of the last control reply outside a playthrough.
    clock: f64,
}

impl Session {
    async fn run(mut self, mut rx: mpsc::Receiver<Request>) {
        let mut ticker = tokio::time::interval(std::time::Duration::from_secs_f64(self.setup.tick_s));
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                req = rx.recv() => match req {
                    Some(req) => {
                        let result = self.handle(req.control).await;
                        let _ = req.reply.send(Answer { t: self.now(), result });
                    }
                    None => break,
                },
                _ = ticker.tick(), if self.running => self.tick().await,
            }
        }
        debug!("session ended");
    }

    fn now(&self) -> f64 {
        self.live.as_ref().map_or(self.clock, |l| l.now)
    }

    async fn tick(&mut self) {
        let Some(live) = self.live.as_mut() else {
            self.running = false;
            return;
        };
        let t = live.now + self.setup.speed * self.setup.tick_s;
        if let Err(e) = live.advance(t, &self.hub).await {
            warn!("session stopped: {e}");
            self.hub.publish(&Envelope::error(live.now, None, e));
            self.running = false;
        }
        let live = self.live.as_mut().expect("live session");
        if live.finished {
            self.running = false;
        }
        if live.finished || live.now + 1e-9 >= live.next_health_t {
            live.next_health_t = live.now + self.setup.health_interval_s;
            self.hub.publish(&Envelope::new(Kind::Health, live.now, live.health(self.running)));
        }
    }

    async fn handle(&mut self, control: Control) -> Reply {
        match control {
            Control::Start => {
                let loaded = self.loaded.as_ref().ok_or("no scenario loaded")?;
                if self.live.as_ref().is_none_or(|l| l.finished) {
                    let cfg = PipelineConfig {
                        scheme: loaded.scheme,
                        ..self.setup.pipeline.clone()
                    };
                    self.live = Some(Live::new(loaded, cfg, self.setup.models.clone(), self.setup.state_interval_s)?);
                }
                self.running = true;
                Ok(json!({ "scenario": loaded.name, "running": true }))
            }
            Control::Stop => {
                self.running = false;
                Ok(json!({ "running": false }))
            }
            Control::SetGain(gains) => {
                let mut next = self.setup.pipeline.gains.clone();
                for (name, value) in &gains {
                    next.set(name, *value).map_err(|e| e.to_string())?;
                }
                self.setup.pipeline.gains = next.clone();
                if let Some(live) = self.live.as_mut() {
                    live.ctl.mapper_mut().gains = next.clone();
                    live.cfg.gains = next.clone();
                    let _ = live.worker.tx.send(WorkerMsg::RejectConfidence(next.reject_confidence)).await;
                }
                Ok(json!({ "gains": next }))
            }
            Control::SetMode(mode) => {
                let live = self.live.as_mut().ok_or("no session in progress")?;
                if live.cfg.scheme != Scheme::Multimodal {
                    return Err("control modes exist only in the multimodal scheme".into());
                }
                live.ctl.mapper_mut().set_mode(mode);
                Ok(json!({ "mode": mode }))
            }
            Control::LoadScenario(path) => {
                let loaded = load_scenario(&self.setup.base_dir.join(path), self.setup.scheme, self.setup.pipeline.imu_decimation)?;
                self.clock = self.now();
                let reply = json!({
                    "scenario": loaded.name,
                    "scheme": loaded.scheme,
                    "duration": loaded.input.end_time(),
                    "expected_tokens": loaded.expected,
                });
                self.loaded = Some(loaded);
                self.live = None;
                self.running = false;
                Ok(reply)
            }
        }
    }
}

fn load_scenario(path: &Path, default_scheme: Scheme, decimation: usize) -> Result<Loaded, String> {
    let (scenario, dir) = Scenario::load(path).map_err(|e| e.to_string())?;
    let input = scenario.load_input(&dir, decimation).map_err(|e| e.to_string())?;
    Ok(Loaded {
        name: if scenario.name.is_empty() {
            path.display().to_string()
        } else {
            scenario.name.clone()
        },
        scheme: scenario.scheme.unwrap_or(default_scheme),
        input,
        inject: scenario.inject,
        expected: scenario.expected.len(),
    })
}
