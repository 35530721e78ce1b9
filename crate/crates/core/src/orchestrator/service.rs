//! Localhost JSON service through which a human annotates the current batch.
//!
//! ```text
//! GET  /api/status    -> {epoch, phase, n_fb, N_fb, success_history}
//! GET  /api/batch     -> {epoch, samples: [{id, kind, data}]}   (409 unless awaiting feedback)
//! POST /api/feedback  <- {epoch, labels: [{id, good}], best_id}
//!                     -> 200 accepted, 409 wrong epoch or nothing pending,
//!                        422 labels violate the batch invariants
//! ```
//!
//! The training thread publishes a batch and blocks; the first valid POST for
//! that epoch is handed back and the batch is withdrawn, so each epoch
//! accepts exactly one annotation.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use log::debug;
use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use super::state::{Phase, RunState};
use super::RunConfig;
use crate::error::{HeroError, Result};
use crate::feedback::{BatchAnnotation, FeedbackProvider, PendingBatch, RenderedSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub epoch: usize,
    pub phase: Phase,
    pub n_fb: usize,
    #[serde(rename = "N_fb")]
    pub budget: usize,
    pub success_history: Vec<f64>,
}

impl RunStatus {
    pub fn new(state: &RunState, config: &RunConfig) -> Self {
        Self {
            epoch: state.epoch,
            phase: state.phase,
            n_fb: state.n_fb,
            budget: config.budget,
            success_history: state.success_history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub epoch: usize,
    pub samples: Vec<RenderedSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub id: usize,
    pub good: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackSubmission {
    pub epoch: usize,
    pub labels: Vec<LabelSubmission>,
    #[serde(default)]
    pub best_id: Option<usize>,
}

#[derive(Debug)]
struct Shared {
    status: RunStatus,
    batch: Option<PendingBatch>,
    submission: Option<BatchAnnotation>,
    closed: bool,
}

type Channel = Arc<(Mutex<Shared>, Condvar)>;

fn lock(ch: &Channel) -> MutexGuard<'_, Shared> {
    ch.0.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct FeedbackService {
    channel: Channel,
    server: Arc<Server>,
    port: u16,
    worker: Option<JoinHandle<()>>,
}

impl FeedbackService {
    /// Binds `addr` (e.g. `127.0.0.1:0`) and starts answering requests.
    pub fn start(addr: &str) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| HeroError::Service(format!("cannot bind {addr}: {e}")))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| HeroError::Service("service is not bound to an IP socket".into()))?;
        let server = Arc::new(server);
        let channel: Channel = Arc::new((
            Mutex::new(Shared {
                status: RunStatus {
                    epoch: 0,
                    phase: Phase::Sampling,
                    n_fb: 0,
                    budget: 0,
                    success_history: Vec::new(),
                },
                batch: None,
                submission: None,
                closed: false,
            }),
            Condvar::new(),
        ));
        let worker = {
            let server = Arc::clone(&server);
            let channel = Arc::clone(&channel);
            std::thread::spawn(move || {
                for req in server.incoming_requests() {
                    handle(&channel, req);
                }
            })
        };
        Ok(Self {
            channel,
            server,
            port,
            worker: Some(worker),
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn provider(&self) -> ServiceProvider {
        ServiceProvider {
            channel: Arc::clone(&self.channel),
        }
    }

    /// Stops the listener; a training loop waiting for feedback gets an
    /// error and the last completed epoch stays checkpointed.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        lock(&self.channel).closed = true;
        self.channel.1.notify_all();
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for FeedbackService {
    fn drop(&mut self) {
        self.close();
    }
}

/// Training-side end of the service.
#[derive(Clone)]
pub struct ServiceProvider {
    channel: Channel,
}

impl FeedbackProvider for ServiceProvider {
    fn annotate(&mut self, batch: &PendingBatch) -> Result<BatchAnnotation> {
        let mut shared = lock(&self.channel);
        shared.batch = Some(batch.clone());
        shared.submission = None;
        shared.status.phase = Phase::AwaitingFeedback;
        loop {
            if let Some(a) = shared.submission.take() {
                return Ok(a);
            }
            if shared.closed {
                shared.batch = None;
                return Err(HeroError::Service("service shut down while awaiting feedback".into()));
            }
            shared = self
                .channel
                .1
                .wait(shared)
                .unwrap_or_else(|p| p.into_inner());
        }
    }

    fn report(&mut self, status: &RunStatus) {
        lock(&self.channel).status = status.clone();
    }
}

fn json_response<T: Serialize>(code: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).unwrap_or_else(|_| b"{}".to_vec());
    Response::from_data(bytes)
        .with_status_code(code)
        .with_header(Header::from_bytes("Content-Type", "application/json; charset=utf-8").expect("static header"))
        .with_header(Header::from_bytes("Access-Control-Allow-Origin", "*").expect("static header"))
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(code: u16, msg: impl Into<String>) -> Response<std::io::Cursor<Vec<u8>>> {
    json_response(code, &ErrorBody { error: msg.into() })
}

/// Outcome of a submission: status code and JSON body.
fn submit(channel: &Channel, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let sub: FeedbackSubmission = match serde_json::from_str(body) {
        Ok(s) => s,
        Err(e) => return error(400, format!("malformed submission: {e}")),
    };
    let mut shared = lock(channel);
    let batch = match &shared.batch {
        Some(b) if b.epoch == sub.epoch => b,
        Some(b) => {
            return error(
                409,
                format!("submission for epoch {}, current epoch is {}", sub.epoch, b.epoch),
            )
        }
        None => return error(409, "no batch is awaiting feedback"),
    };
    let labels: Vec<(usize, bool)> = sub.labels.iter().map(|l| (l.id, l.good)).collect();
    match BatchAnnotation::from_labels(sub.epoch, &batch.ids(), &labels, sub.best_id, "human") {
        Ok(ann) => {
            shared.batch = None;
            shared.submission = Some(ann);
            shared.status.phase = Phase::TrainingEmbedding;
            channel.1.notify_all();
            #[derive(Serialize)]
            struct Accepted {
                accepted: bool,
                epoch: usize,
            }
            json_response(
                200,
                &Accepted {
                    accepted: true,
                    epoch: sub.epoch,
                },
            )
        }
        Err(e) => error(422, e.to_string()),
    }
}

fn handle(channel: &Channel, mut req: Request) {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    debug!("{} {}", req.method(), path);
    let resp = match (req.method(), path.as_str()) {
        (Method::Get, "/api/status") => json_response(200, &lock(channel).status),
        (Method::Get, "/api/batch") => {
            let shared = lock(channel);
            match &shared.batch {
                Some(b) => json_response(
                    200,
                    &BatchView {
                        epoch: b.epoch,
                        samples: b.samples.clone(),
                    },
                ),
                None => error(409, format!("no batch is awaiting feedback (phase {})", shared.status.phase.as_str())),
            }
        }
        (Method::Post, "/api/feedback") => {
            let mut body = String::new();
            match req.as_reader().read_to_string(&mut body) {
                Ok(_) => submit(channel, &body),
                Err(e) => error(400, format!("unreadable body: {e}")),
            }
        }
        (Method::Options, _) => json_response(204, &())
            .with_header(Header::from_bytes("Access-Control-Allow-Methods", "GET, POST, OPTIONS").expect("static header"))
            .with_header(Header::from_bytes("Access-Control-Allow-Headers", "Content-Type").expect("static header")),
        _ => error(404, format!("no route for {path}")),
    };
    let _ = req.respond(resp);
}
