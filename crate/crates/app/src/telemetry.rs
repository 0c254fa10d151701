//! Fan-out of telemetry lines to any number of clients.
//!
//! Publishing never waits: each subscriber has a bounded backlog and a
//! subscriber that falls behind loses its oldest messages.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use tokio::sync::broadcast;

use crate::protocol::Envelope;

#[derive(Debug, Clone)]
pub struct TelemetryHub {
    tx: broadcast::Sender<Arc<str>>,
    published: Arc<AtomicU64>,
    dropped: Arc<AtomicU64>,
}

/// What a subscriber got from [`Subscriber::recv`].
#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Line(Arc<str>),
    /// This many of the oldest messages were discarded for this subscriber.
    Dropped(u64),
    Closed,
}

#[derive(Debug)]
pub struct Subscriber {
    rx: broadcast::Receiver<Arc<str>>,
    dropped: Arc<AtomicU64>,
}

impl TelemetryHub {
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        Self {
            tx,
            published: Arc::new(AtomicU64::new(0)),
            dropped: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Sends one envelope to every current subscriber without blocking.
    pub fn publish(&self, msg: &Envelope) {
        self.publish_line(msg.to_line());
    }

    pub fn publish_line(&self, line: String) {
        self.published.fetch_add(1, Ordering::Relaxed);
        // No subscribers is not an error: telemetry is simply discarded.
        let _ = self.tx.send(Arc::from(line));
    }

    pub fn subscribe(&self) -> Subscriber {
        Subscriber {
            rx: self.tx.subscribe(),
            dropped: self.dropped.clone(),
        }
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    /// Messages lost by slow subscribers so far, summed over subscribers.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn subscribers(&self) -> usize {
        self.tx.receiver_count()
    }
}

impl Subscriber {
    pub async fn recv(&mut self) -> Received {
        match self.rx.recv().await {
            Ok(line) => Received::Line(line),
            Err(broadcast::error::RecvError::Lagged(n)) => {
                self.dropped.fetch_add(n, Ordering::Relaxed);
                Received::Dropped(n)
            }
            Err(broadcast::error::RecvError::Closed) => Received::Closed,
        }
    }
}
