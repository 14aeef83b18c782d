//! Low-latency allocation daemon over newline-delimited JSON on TCP.
//!
//! One JSON object per line in, one per line out. Three request types:
//!
//! ```text
//! {"type":"alloc","request_id":"r1","customer_id":7,"cvr":[0.1,0.2,0.3,0.4,0.5]}
//! {"type":"outcome","customer_id":7,"price":12.0,"purchased":true,"event_time":61.0}
//! {"type":"snapshot"}
//! ```
//!
//! Allocation handlers read the ladder/floor config and an atomic snapshot
//! of the multiplier; they never block on the control loop. Outcomes flow
//! through a bounded queue to a single control writer that owns the PID
//! state and republishes the multiplier at step boundaries (driven by the
//! event clock, which keeps replays deterministic). A full queue surfaces
//! as a retriable error, never as a stalled allocation. Decision logging
//! goes through its own writer thread so a slow disk cannot block
//! responses. If the control thread dies, allocation continues open-loop on
//! the last multiplier and the snapshot reports an unhealthy loop.
//!
//! Outcome delivery is at-least-once: duplicate events are counted twice by
//! design; idempotence is the sender's responsibility.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::cvr::CvrModel;
use crate::error::{Error, Result};
use crate::isotonic;
use crate::ladder::{argmax_level, BudgetTarget, CvrVector, PriceLadder, ValueVector};
use crate::pid::{PidConfig, PidState};
use crate::synthpop::{Customer, Segment};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// Maximize expected revenue: `v[j] = p[j] * q[j]`.
    #[default]
    Revenue,
    /// Maximize conversion: `v[j] = q[j]`.
    Conversion,
}

#[derive(Clone, Copy, Debug, Deserialize)]
pub struct Features {
    pub f1: f64,
    pub f2: f64,
}

#[derive(Debug, Deserialize)]
pub struct AllocRequest {
    pub request_id: String,
    pub customer_id: u64,
    #[serde(default)]
    pub cvr: Option<Vec<f64>>,
    #[serde(default)]
    pub features: Option<Features>,
    #[serde(default)]
    pub value_mode: ValueMode,
}

#[derive(Debug, Deserialize)]
pub struct OutcomeEvent {
    pub customer_id: u64,
    pub price: f64,
    pub purchased: bool,
    /// Seconds on the control clock; drives PID step boundaries.
    pub event_time: f64,
}

/// One parsed request line.
#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Alloc(AllocRequest),
    Outcome(OutcomeEvent),
    Snapshot {},
}

/// Parses one newline-delimited JSON request. The single entry point for
/// untrusted wire input.
pub fn parse_request(line: &str) -> Result<Request> {
    serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed request: {e}")))
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WireResponse {
    Alloc {
        request_id: String,
        level: usize,
        coupon: f64,
        price: f64,
        lambda: f64,
        processing_us: u64,
    },
    Ack,
    Snapshot {
        lambda: f64,
        p_t: Option<f64>,
        e_t: f64,
        decisions: u64,
        pid_healthy: bool,
    },
    Error {
        code: &'static str,
        message: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
    },
}

#[derive(Serialize)]
struct LogLine<'a> {
    request_id: &'a str,
    customer_id: u64,
    level: usize,
    price: f64,
    lambda: f64,
    processing_us: u64,
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub ladder: PriceLadder,
    pub budget: BudgetTarget,
    pub lambda_init: f64,
    pub pid: PidConfig,
    pub model: Option<CvrModel>,
    pub log_path: Option<PathBuf>,
    /// Report processing time as 0 so recorded sessions replay
    /// byte-identically; timing is still measured internally.
    pub zero_timing: bool,
    /// fsync the decision log after every line.
    pub log_fsync: bool,
    pub outcome_queue_capacity: usize,
}

impl ServerConfig {
    /// Reads the `key=value` server config: ladder and floor, `lambda_init`,
    /// `pid.*`, optional `model` and `log` paths, `zero_timing`, `log_fsync`.
    pub fn from_config(cfg: &Config) -> Result<ServerConfig> {
        let ladder = cfg.ladder()?;
        let budget = cfg.budget(&ladder)?;
        let lambda_init = cfg.get_f64_or("lambda_init", 0.0)?;
        if lambda_init < 0.0 {
            return Err(Error::Config("lambda_init must be >= 0".into()));
        }
        let pid = cfg.pid(lambda_init, budget.get())?;
        let model = match cfg.get("model") {
            Some(path) => {
                let file = std::fs::File::open(path)?;
                let model = CvrModel::from_json_reader(std::io::BufReader::new(file))?;
                if model.ladder() != &ladder {
                    return Err(Error::Config("model ladder differs from config ladder".into()));
                }
                Some(model)
            }
            None => None,
        };
        Ok(ServerConfig {
            ladder,
            budget,
            lambda_init,
            pid,
            model,
            log_path: cfg.get("log").map(PathBuf::from),
            zero_timing: cfg.get("zero_timing").map(|v| v == "true").unwrap_or(false),
            log_fsync: cfg.get("log_fsync").map(|v| v == "true").unwrap_or(false),
            outcome_queue_capacity: cfg.get_f64_or("outcome_queue_capacity", 1024.0)? as usize,
        })
    }
}

struct OutcomeMsg {
    price: f64,
    purchased: bool,
    event_time: f64,
    seq: u64,
}

struct Snap {
    p_t: Option<f64>,
    e_t: f64,
}

struct Shared {
    cfg: ServerConfig,
    lambda_bits: AtomicU64,
    decisions: AtomicU64,
    pid_alive: AtomicBool,
    shutdown: AtomicBool,
    outcome_seq: AtomicU64,
    processed: Mutex<u64>,
    processed_cv: Condvar,
    snap: Mutex<Snap>,
    outcome_tx: SyncSender<OutcomeMsg>,
    log_tx: Option<mpsc::Sender<String>>,
}

impl Shared {
    fn lambda(&self) -> f64 {
        f64::from_bits(self.lambda_bits.load(Ordering::Acquire))
    }

    fn set_lambda(&self, lambda: f64) {
        self.lambda_bits.store(lambda.to_bits(), Ordering::Release);
    }

    /// Per-connection ordering barrier: after an outcome is acknowledged,
    /// the handler does not read the next request until the control writer
    /// has consumed it, so a following allocation on the same connection
    /// observes the post-outcome multiplier. Degrades to a timeout when the
    /// control loop is gone.
    fn wait_processed(&self, seq: u64) {
        let mut guard = self.processed.lock().unwrap();
        while *guard < seq {
            if !self.pid_alive.load(Ordering::Acquire) {
                return;
            }
            let (g, timeout) = self
                .processed_cv
                .wait_timeout(guard, Duration::from_millis(50))
                .unwrap();
            guard = g;
            if timeout.timed_out() && !self.pid_alive.load(Ordering::Acquire) {
                return;
            }
        }
    }
}

fn control_loop(shared: Arc<Shared>, rx: Receiver<OutcomeMsg>) {
    let pid_cfg = shared.cfg.pid;
    let mut state = match PidState::init(shared.cfg.lambda_init, &pid_cfg) {
        Ok(s) => s,
        Err(_) => {
            shared.pid_alive.store(false, Ordering::Release);
            return;
        }
    };
    loop {
        match rx.recv_timeout(Duration::from_millis(100)) {
            Ok(msg) => {
                // Fire any step boundaries that elapsed before this event,
                // then ingest it.
                while state.clock() + pid_cfg.dt_seconds <= msg.event_time {
                    state.step(&pid_cfg);
                }
                state.record_outcome(msg.price, msg.purchased);
                shared.set_lambda(state.lambda());
                {
                    let mut snap = shared.snap.lock().unwrap();
                    snap.p_t = state.realized_avg_price();
                    snap.e_t = state.error_now(&pid_cfg);
                }
                {
                    let mut processed = shared.processed.lock().unwrap();
                    *processed = msg.seq;
                }
                shared.processed_cv.notify_all();
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                if shared.shutdown.load(Ordering::Acquire) {
                    break;
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    shared.pid_alive.store(false, Ordering::Release);
    shared.processed_cv.notify_all();
}

fn log_loop(rx: Receiver<String>, path: PathBuf, fsync: bool) {
    let file = match std::fs::OpenOptions::new().create(true).append(true).open(&path) {
        Ok(f) => f,
        Err(_) => return,
    };
    let mut w = BufWriter::new(file);
    while let Ok(line) = rx.recv() {
        if w.write_all(line.as_bytes()).is_err() || w.write_all(b"\n").is_err() {
            return;
        }
        if w.flush().is_err() {
            return;
        }
        if fsync && w.get_ref().sync_data().is_err() {
            return;
        }
    }
}

fn handle_alloc(shared: &Shared, req: AllocRequest, started: Instant) -> WireResponse {
    let cfg = &shared.cfg;
    let schema_err = |message: String, rid: &str| WireResponse::Error {
        code: "schema",
        message,
        request_id: Some(rid.to_string()),
    };

    let raw = match (&req.cvr, &req.features) {
        (Some(_), Some(_)) => {
            return schema_err("supply exactly one of cvr or features, not both".into(), &req.request_id)
        }
        (None, None) => {
            return schema_err("supply one of cvr or features".into(), &req.request_id)
        }
        (Some(q), None) => {
            if q.len() != cfg.ladder.len() {
                return schema_err(
                    format!("cvr has {} levels, ladder has {}", q.len(), cfg.ladder.len()),
                    &req.request_id,
                );
            }
            match CvrVector::new(q.clone()) {
                Ok(v) => v,
                Err(e) => return schema_err(e.to_string(), &req.request_id),
            }
        }
        (None, Some(f)) => {
            let model = match &cfg.model {
                Some(m) => m,
                None => {
                    return schema_err(
                        "request carries features but no CVR model is loaded".into(),
                        &req.request_id,
                    )
                }
            };
            if !f.f1.is_finite() || !f.f2.is_finite() || f.f2 <= 0.0 {
                return schema_err("features must be finite with f2 > 0".into(), &req.request_id);
            }
            let customer = Customer {
                id: req.customer_id,
                f1: f.f1,
                f2: f.f2,
                show_up_prob: 1.0,
                segment: Segment::New,
            };
            match model.predict(&customer) {
                Ok(q) => q,
                Err(e) => return schema_err(e.to_string(), &req.request_id),
            }
        }
    };

    let calibrated = match isotonic::calibrate(&raw) {
        Ok(q) => q,
        Err(e) => {
            return WireResponse::Error {
                code: "internal",
                message: e.to_string(),
                request_id: Some(req.request_id),
            }
        }
    };
    let value = match req.value_mode {
        ValueMode::Revenue => ValueVector::revenue(&cfg.ladder, &calibrated),
        ValueMode::Conversion => ValueVector::new(calibrated.as_slice().to_vec()),
    };
    let value = match value {
        Ok(v) => v,
        Err(e) => {
            return WireResponse::Error {
                code: "internal",
                message: e.to_string(),
                request_id: Some(req.request_id),
            }
        }
    };

    let lambda = shared.lambda();
    let level = match argmax_level(&value, &calibrated, &cfg.ladder, cfg.budget, lambda) {
        Ok(l) => l,
        Err(e) => {
            return WireResponse::Error {
                code: "internal",
                message: e.to_string(),
                request_id: Some(req.request_id),
            }
        }
    };

    shared.decisions.fetch_add(1, Ordering::Relaxed);
    let processing_us =
        if cfg.zero_timing { 0 } else { started.elapsed().as_micros() as u64 };

    if let Some(tx) = &shared.log_tx {
        let line = LogLine {
            request_id: &req.request_id,
            customer_id: req.customer_id,
            level: level.get(),
            price: cfg.ladder.price(level),
            lambda,
            processing_us,
        };
        // Fire-and-forget: the log writer owns durability.
        let _ = tx.send(serde_json::to_string(&line).expect("log line serializes"));
    }

    WireResponse::Alloc {
        request_id: req.request_id,
        level: level.get(),
        coupon: cfg.ladder.coupon(level),
        price: cfg.ladder.price(level),
        lambda,
        processing_us,
    }
}

fn handle_outcome(shared: &Shared, evt: OutcomeEvent) -> (WireResponse, Option<u64>) {
    if shared.cfg.ladder.level_of_price(evt.price, 1e-9).is_none() {
        return (
            WireResponse::Error {
                code: "schema",
                message: format!("price {} is not on the ladder", evt.price),
                request_id: None,
            },
            None,
        );
    }
    if !evt.event_time.is_finite() || evt.event_time < 0.0 {
        return (
            WireResponse::Error {
                code: "schema",
                message: "event_time must be finite and >= 0".into(),
                request_id: None,
            },
            None,
        );
    }
    let seq = shared.outcome_seq.fetch_add(1, Ordering::AcqRel) + 1;
    let msg = OutcomeMsg { price: evt.price, purchased: evt.purchased, event_time: evt.event_time, seq };
    match shared.outcome_tx.try_send(msg) {
        Ok(()) => (WireResponse::Ack, Some(seq)),
        Err(TrySendError::Full(_)) => (
            WireResponse::Error {
                code: "retry",
                message: "outcome queue full; retry".into(),
                request_id: None,
            },
            None,
        ),
        Err(TrySendError::Disconnected(_)) => (
            WireResponse::Error {
                code: "degraded",
                message: "control loop is down; running open-loop".into(),
                request_id: None,
            },
            None,
        ),
    }
}

fn handle_snapshot(shared: &Shared) -> WireResponse {
    let snap = shared.snap.lock().unwrap();
    WireResponse::Snapshot {
        lambda: shared.lambda(),
        p_t: snap.p_t,
        e_t: snap.e_t,
        decisions: shared.decisions.load(Ordering::Relaxed),
        pid_healthy: shared.pid_alive.load(Ordering::Acquire),
    }
}

fn connection_loop(shared: Arc<Shared>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let reader = match stream.try_clone() {
        Ok(s) => BufReader::new(s),
        Err(_) => return,
    };
    let mut writer = BufWriter::new(stream);
    for line in reader.lines() {
        if shared.shutdown.load(Ordering::Acquire) {
            break;
        }
        let line = match line {
            Ok(l) => l,
            Err(_) => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let started = Instant::now();
        let (response, barrier) = match parse_request(&line) {
            Ok(Request::Alloc(req)) => (handle_alloc(&shared, req, started), None),
            Ok(Request::Outcome(evt)) => handle_outcome(&shared, evt),
            Ok(Request::Snapshot {}) => (handle_snapshot(&shared), None),
            Err(e) => (
                WireResponse::Error {
                    code: "protocol",
                    message: e.to_string(),
                    request_id: None,
                },
                None,
            ),
        };
        let payload = serde_json::to_string(&response).expect("response serializes");
        if writer.write_all(payload.as_bytes()).is_err()
            || writer.write_all(b"\n").is_err()
            || writer.flush().is_err()
        {
            break;
        }
        if let Some(seq) = barrier {
            shared.wait_processed(seq);
        }
    }
}

pub struct Server {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept_handle: Option<JoinHandle<()>>,
    control_handle: Option<JoinHandle<()>>,
}

impl Server {
    /// Starts the daemon on an already-bound listener (use port 0 to let the
    /// OS pick).
    pub fn start(config: ServerConfig, listener: TcpListener) -> Result<Server> {
        let addr = listener.local_addr()?;
        let (outcome_tx, outcome_rx) = mpsc::sync_channel(config.outcome_queue_capacity.max(1));
        let log_tx = match &config.log_path {
            Some(path) => {
                let (tx, rx) = mpsc::channel::<String>();
                let path = path.clone();
                let fsync = config.log_fsync;
                std::thread::spawn(move || log_loop(rx, path, fsync));
                Some(tx)
            }
            None => None,
        };
        let lambda_init = config.lambda_init;
        let shared = Arc::new(Shared {
            cfg: config,
            lambda_bits: AtomicU64::new(lambda_init.to_bits()),
            decisions: AtomicU64::new(0),
            pid_alive: AtomicBool::new(true),
            shutdown: AtomicBool::new(false),
            outcome_seq: AtomicU64::new(0),
            processed: Mutex::new(0),
            processed_cv: Condvar::new(),
            snap: Mutex::new(Snap { p_t: None, e_t: 0.0 }),
            outcome_tx,
            log_tx,
        });

        let control_shared = Arc::clone(&shared);
        let control_handle = std::thread::spawn(move || control_loop(control_shared, outcome_rx));

        let accept_shared = Arc::clone(&shared);
        let accept_handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.shutdown.load(Ordering::Acquire) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let conn_shared = Arc::clone(&accept_shared);
                        std::thread::spawn(move || connection_loop(conn_shared, s));
                    }
                    Err(_) => break,
                }
            }
        });

        Ok(Server {
            addr,
            shared,
            accept_handle: Some(accept_handle),
            control_handle: Some(control_handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits (i.e. forever, for a daemon).
    pub fn wait(mut self) {
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
        if let Some(h) = self.control_handle.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
        if let Some(h) = self.control_handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufRead;

    fn test_config(lambda_init: f64) -> ServerConfig {
        let text = format!(
            "base_price=16\ncoupons=0,4,8\np_b=12\nlambda_init={lambda_init}\nzero_timing=true\n"
        );
        let cfg = Config::parse(&text).unwrap();
        ServerConfig::from_config(&cfg).unwrap()
    }

    fn start_server(cfg: ServerConfig) -> Server {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        Server::start(cfg, listener).unwrap()
    }

    struct Client {
        reader: BufReader<TcpStream>,
        writer: BufWriter<TcpStream>,
    }

    impl Client {
        fn connect(addr: SocketAddr) -> Client {
            let stream = TcpStream::connect(addr).unwrap();
            stream.set_nodelay(true).unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            Client { reader, writer: BufWriter::new(stream) }
        }

        fn roundtrip(&mut self, line: &str) -> String {
            self.writer.write_all(line.as_bytes()).unwrap();
            self.writer.write_all(b"\n").unwrap();
            self.writer.flush().unwrap();
            let mut out = String::new();
            self.reader.read_line(&mut out).unwrap();
            out.trim_end().to_string()
        }
    }

    #[test]
    fn alloc_at_lambda_zero_is_value_argmax() {
        let server = start_server(test_config(0.0));
        let mut client = Client::connect(server.addr());
        // Monotone CVR, revenue mode: v = [16*0.1, 12*0.3, 8*0.5] = [1.6, 3.6, 4.0].
        let resp = client.roundtrip(
            r#"{"type":"alloc","request_id":"a1","customer_id":1,"cvr":[0.1,0.3,0.5]}"#,
        );
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["type"], "alloc");
        assert_eq!(v["request_id"], "a1");
        assert_eq!(v["level"], 3);
        assert_eq!(v["price"], 8.0);
        assert_eq!(v["lambda"], 0.0);
        server.shutdown();
    }

    #[test]
    fn non_monotone_cvr_is_calibrated_before_argmax() {
        let server = start_server(test_config(0.0));
        let mut client = Client::connect(server.addr());
        // Raw [0.5, 0.2, 0.9] would put the revenue argmax at level 1
        // (v = [8.0, 2.4, 7.2]); calibration pools the first two levels to
        // 0.35 so the calibrated argmax moves to level 3 (v = [5.6, 4.2, 7.2]).
        let resp = client.roundtrip(
            r#"{"type":"alloc","request_id":"a2","customer_id":2,"cvr":[0.5,0.2,0.9]}"#,
        );
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["level"], 3);
        server.shutdown();
    }

    #[test]
    fn malformed_line_keeps_connection_open() {
        let server = start_server(test_config(0.0));
        let mut client = Client::connect(server.addr());
        let resp = client.roundtrip("this is not json");
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "protocol");
        // Connection still serves valid requests.
        let resp2 = client.roundtrip(r#"{"type":"snapshot"}"#);
        let v2: serde_json::Value = serde_json::from_str(&resp2).unwrap();
        assert_eq!(v2["type"], "snapshot");
        server.shutdown();
    }

    #[test]
    fn schema_errors_for_bad_alloc_inputs() {
        let server = start_server(test_config(0.0));
        let mut client = Client::connect(server.addr());
        // Wrong vector length.
        let resp = client.roundtrip(
            r#"{"type":"alloc","request_id":"a3","customer_id":3,"cvr":[0.1,0.2]}"#,
        );
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["code"], "schema");
        // Neither cvr nor features.
        let resp = client.roundtrip(r#"{"type":"alloc","request_id":"a4","customer_id":4}"#);
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["code"], "schema");
        // Features without a model.
        let resp = client.roundtrip(
            r#"{"type":"alloc","request_id":"a5","customer_id":5,"features":{"f1":0.0,"f2":1.0}}"#,
        );
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["code"], "schema");
        // Off-ladder outcome price.
        let resp = client.roundtrip(
            r#"{"type":"outcome","customer_id":5,"price":9.5,"purchased":true,"event_time":1.0}"#,
        );
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["code"], "schema");
        server.shutdown();
    }

    #[test]
    fn snapshot_reflects_outcomes_and_lambda_moves_at_step_boundary() {
        let server = start_server(test_config(0.5));
        let mut client = Client::connect(server.addr());
        // Fresh server: lambda = init, no realized price.
        let v: serde_json::Value =
            serde_json::from_str(&client.roundtrip(r#"{"type":"snapshot"}"#)).unwrap();
        assert_eq!(v["lambda"], 0.5);
        assert!(v["p_t"].is_null());
        assert_eq!(v["pid_healthy"], true);

        // Two purchases at 8 before the first step boundary (dt = 60s).
        for t in [1.0, 2.0] {
            let resp = client.roundtrip(&format!(
                r#"{{"type":"outcome","customer_id":9,"price":8.0,"purchased":true,"event_time":{t}}}"#
            ));
            let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
            assert_eq!(v["type"], "ack");
        }
        let v: serde_json::Value =
            serde_json::from_str(&client.roundtrip(r#"{"type":"snapshot"}"#)).unwrap();
        assert_eq!(v["p_t"], 8.0);
        assert_eq!(v["lambda"], 0.5); // no boundary crossed yet

        // An event past the boundary fires the step: p_t below the floor
        // means positive error, so lambda rises.
        let resp = client.roundtrip(
            r#"{"type":"outcome","customer_id":9,"price":8.0,"purchased":true,"event_time":61.0}"#,
        );
        let v: serde_json::Value = serde_json::from_str(&resp).unwrap();
        assert_eq!(v["type"], "ack");
        let v: serde_json::Value =
            serde_json::from_str(&client.roundtrip(r#"{"type":"snapshot"}"#)).unwrap();
        let lambda = v["lambda"].as_f64().unwrap();
        assert!(lambda > 0.5, "lambda should rise after a below-floor step, got {lambda}");
        server.shutdown();
    }

    #[test]
    fn purchase_at_floor_leaves_lambda_unchanged() {
        let server = start_server(test_config(0.5));
        let mut client = Client::connect(server.addr());
        client.roundtrip(
            r#"{"type":"outcome","customer_id":1,"price":12.0,"purchased":true,"event_time":1.0}"#,
        );
        client.roundtrip(
            r#"{"type":"outcome","customer_id":1,"price":12.0,"purchased":true,"event_time":61.0}"#,
        );
        let v: serde_json::Value =
            serde_json::from_str(&client.roundtrip(r#"{"type":"snapshot"}"#)).unwrap();
        assert_eq!(v["lambda"], 0.5);
        assert_eq!(v["p_t"], 12.0);
        server.shutdown();
    }

    #[test]
    fn duplicate_outcomes_are_both_counted() {
        let server = start_server(test_config(0.0));
        let mut client = Client::connect(server.addr());
        let line =
            r#"{"type":"outcome","customer_id":1,"price":16.0,"purchased":true,"event_time":1.0}"#;
        client.roundtrip(line);
        client.roundtrip(line);
        client.roundtrip(
            r#"{"type":"outcome","customer_id":1,"price":8.0,"purchased":true,"event_time":2.0}"#,
        );
        let v: serde_json::Value =
            serde_json::from_str(&client.roundtrip(r#"{"type":"snapshot"}"#)).unwrap();
        // (16 + 16 + 8) / 3
        let p_t = v["p_t"].as_f64().unwrap();
        assert!((p_t - 40.0 / 3.0).abs() < 1e-9);
        server.shutdown();
    }

    #[test]
    fn replay_reproduces_identical_responses() {
        let script: Vec<String> = vec![
            r#"{"type":"alloc","request_id":"r1","customer_id":1,"cvr":[0.1,0.3,0.5]}"#.into(),
            r#"{"type":"outcome","customer_id":1,"price":8.0,"purchased":true,"event_time":30.0}"#.into(),
            r#"{"type":"alloc","request_id":"r2","customer_id":2,"cvr":[0.5,0.2,0.9]}"#.into(),
            r#"{"type":"outcome","customer_id":2,"price":8.0,"purchased":true,"event_time":75.0}"#.into(),
            r#"{"type":"alloc","request_id":"r3","customer_id":3,"cvr":[0.2,0.2,0.2]}"#.into(),
            r#"{"type":"snapshot"}"#.into(),
        ];
        let run = || {
            let server = start_server(test_config(0.4));
            let mut client = Client::connect(server.addr());
            let out: Vec<String> = script.iter().map(|l| client.roundtrip(l)).collect();
            server.shutdown();
            out
        };
        assert_eq!(run(), run());
    }
}
