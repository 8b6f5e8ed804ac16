//! HTTP query API and live WebSocket stream over a running [`Tracker`].

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use pipetrack_core::ingest::{RssSample, TcpFeed};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, oneshot, watch};

use crate::config::ServiceConfig;
use crate::error::{Error, Result};
use crate::model::{PipeRecord, Rule};
use crate::store::{FilePipeInfo, Store};
use crate::tracker::{Snapshot, StreamMessage, Tracker};

const STREAM_BUFFER: usize = 4096;
const IDLE_PUBLISH: Duration = Duration::from_millis(100);

enum Command {
    UpsertPipe(PipeRecord),
    UpsertRule(Rule),
}

enum Input {
    Sample(RssSample),
    EndOfStream,
    Command(Command, oneshot::Sender<Result<()>>),
}

#[derive(Clone)]
struct AppState {
    snapshot: watch::Receiver<Arc<Snapshot>>,
    stream: broadcast::Sender<Arc<str>>,
    input: mpsc::Sender<Input>,
}

/// Handle to a service started with [`start`].
pub struct RunningService {
    addr: SocketAddr,
    ingest_addr: Option<SocketAddr>,
    shutdown: Option<oneshot::Sender<()>>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    input: mpsc::Sender<Input>,
}

impl RunningService {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Address of the TCP sample feed, when one is configured.
    pub fn ingest_addr(&self) -> Option<SocketAddr> {
        self.ingest_addr
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    /// Feeds a sample as if it came from a reader.
    pub fn push_sample(&self, sample: RssSample) -> Result<()> {
        self.input.send(Input::Sample(sample)).map_err(|_| Error::Stopped)
    }

    /// Releases every open window.
    pub fn end_of_stream(&self) -> Result<()> {
        self.input.send(Input::EndOfStream).map_err(|_| Error::Stopped)
    }

    /// Resolves when the server exits, e.g. after [`stop`](Self::stop).
    pub async fn wait(self) -> Result<()> {
        let RunningService { server, shutdown, .. } = self;
        let _keep_open = shutdown;
        server.await.map_err(|e| Error::Io(std::io::Error::other(e)))??;
        Ok(())
    }

    pub async fn stop(mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.server.await.map_err(|e| Error::Io(std::io::Error::other(e)))??;
        Ok(())
    }
}

/// Builds a tracker from the configuration: floor map, store and pipe
/// information file.
pub fn build_tracker(cfg: &ServiceConfig) -> Result<Tracker> {
    let map = cfg.load_floor_map()?;
    let mut tracker = Tracker::new(cfg.clone(), map)?;
    if let Some(db) = &cfg.database {
        tracker = tracker.with_store(Store::open(db)?)?;
    }
    if let Some(pipes) = &cfg.pipes_file {
        let n = tracker.import_pipes(&FilePipeInfo::new(pipes))?;
        tracing::info!(pipes = n, file = %pipes.display(), "pipe information loaded");
    }
    Ok(tracker)
}

/// Binds the HTTP listener (and the TCP sample feed when `ports.ingest` is
/// set) and starts the tracker thread. `source`, when given, is drained on
/// its own thread; its end flushes all windows.
pub async fn start<S>(cfg: &ServiceConfig, tracker: Tracker, source: Option<S>) -> Result<RunningService>
where
    S: Iterator<Item = RssSample> + Send + 'static,
{
    let addr = cfg.http_addr();
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| Error::Bind { addr, source })?;
    let addr = listener.local_addr()?;
    let feed = match cfg.ports.ingest {
        Some(port) => {
            let feed_addr = SocketAddr::new(cfg.bind, port);
            let feed = TcpFeed::bind(feed_addr).map_err(|e| Error::Bind {
                addr: feed_addr,
                source: match e {
                    pipetrack_core::Error::Io(io) => io,
                    other => std::io::Error::other(other.to_string()),
                },
            })?;
            Some(feed)
        }
        None => None,
    };
    let ingest_addr = feed.as_ref().map(TcpFeed::local_addr);

    let (snap_tx, snap_rx) = watch::channel(Arc::new(tracker.snapshot()));
    let (stream_tx, _) = broadcast::channel::<Arc<str>>(STREAM_BUFFER);
    let (input_tx, input_rx) = mpsc::channel::<Input>();

    let stream = stream_tx.clone();
    thread::Builder::new()
        .name("tracker".into())
        .spawn(move || run_tracker(tracker, input_rx, snap_tx, stream))?;

    if let Some(source) = source {
        let tx = input_tx.clone();
        thread::Builder::new().name("ingest".into()).spawn(move || {
            for s in source {
                if tx.send(Input::Sample(s)).is_err() {
                    return;
                }
            }
            let _ = tx.send(Input::EndOfStream);
        })?;
    }
    if let Some(feed) = feed {
        let tx = input_tx.clone();
        thread::Builder::new().name("feed".into()).spawn(move || {
            for s in feed {
                if tx.send(Input::Sample(s)).is_err() {
                    return;
                }
            }
        })?;
        tracing::info!(addr = ?ingest_addr, "sample feed listening");
    }

    let state = AppState {
        snapshot: snap_rx.clone(),
        stream: stream_tx,
        input: input_tx.clone(),
    };
    let app = router(state);
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = shutdown_rx.await;
            })
            .await
    });
    tracing::info!(%addr, "tracking service listening");
    Ok(RunningService {
        addr,
        ingest_addr,
        shutdown: Some(shutdown_tx),
        server,
        snapshot: snap_rx,
        input: input_tx,
    })
}

/// Runs the service until `shutdown` resolves.
pub async fn serve<S, F>(cfg: &ServiceConfig, source: Option<S>, shutdown: F) -> Result<()>
where
    S: Iterator<Item = RssSample> + Send + 'static,
    F: Future<Output = ()>,
{
    let tracker = build_tracker(cfg)?;
    let running = start(cfg, tracker, source).await?;
    shutdown.await;
    tracing::info!("shutting down");
    running.stop().await
}

fn run_tracker(
    mut tracker: Tracker,
    input: mpsc::Receiver<Input>,
    snapshot: watch::Sender<Arc<Snapshot>>,
    stream: broadcast::Sender<Arc<str>>,
) {
    let publish = |tracker: &Tracker, msgs: Vec<StreamMessage>| {
        // Snapshot first: a query issued after a pushed message sees it.
        snapshot.send_replace(Arc::new(tracker.snapshot()));
        for m in msgs {
            match serde_json::to_string(&m) {
                Ok(text) => {
                    let _ = stream.send(Arc::from(text));
                }
                Err(e) => tracing::error!("cannot encode stream message: {e}"),
            }
        }
    };
    // Samples that release no window still change the counters; they are
    // published once the input goes idle.
    let mut dirty = false;
    loop {
        let item = match input.recv_timeout(IDLE_PUBLISH) {
            Ok(item) => item,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                if dirty {
                    snapshot.send_replace(Arc::new(tracker.snapshot()));
                    dirty = false;
                }
                continue;
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        };
        match item {
            Input::Sample(s) => {
                let msgs = tracker.ingest(&s);
                if msgs.is_empty() {
                    dirty = true;
                } else {
                    publish(&tracker, msgs);
                    dirty = false;
                }
            }
            Input::EndOfStream => {
                let msgs = tracker.flush();
                publish(&tracker, msgs);
                dirty = false;
                if let Err(e) = tracker.checkpoint() {
                    tracing::warn!("checkpoint failed: {e}");
                }
                tracing::info!(samples = tracker.stats().samples, "sample stream ended");
            }
            Input::Command(cmd, reply) => {
                let result = match cmd {
                    Command::UpsertPipe(r) => tracker.upsert_pipe(r),
                    Command::UpsertRule(r) => tracker.upsert_rule(r),
                };
                if result.is_ok() {
                    snapshot.send_replace(Arc::new(tracker.snapshot()));
                }
                let _ = reply.send(result);
            }
        }
    }
    if let Err(e) = tracker.checkpoint() {
        tracing::warn!("checkpoint failed: {e}");
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/map", get(floor_map))
        .route("/api/pipes", get(list_pipes).post(upsert_pipe))
        .route("/api/pipes/{id}", get(get_pipe))
        .route("/api/zones", get(list_zones))
        .route("/api/zones/{id}/occupancy", get(zone_occupancy))
        .route("/api/clusters", get(clusters))
        .route("/api/events", get(list_events))
        .route("/api/dwell", get(dwell))
        .route("/api/rules", get(list_rules).post(upsert_rule))
        .route("/api/stream", get(stream))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "no such endpoint") })
        .layer(middleware::from_fn(cors))
        .with_state(state)
}

async fn cors(req: Request, next: Next) -> Response {
    let mut res = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = res.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    res
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn error_response(e: Error) -> Response {
    match e {
        Error::Invalid(fields) => (
            StatusCode::BAD_REQUEST,
            Json(json!({ "error": "invalid record", "fields": fields })),
        )
            .into_response(),
        Error::NotFound(what) => error(StatusCode::NOT_FOUND, format!("{what} not found")),
        Error::Stopped => error(StatusCode::SERVICE_UNAVAILABLE, "tracker stopped"),
        other => error(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

fn current(state: &AppState) -> Arc<Snapshot> {
    state.snapshot.borrow().clone()
}

async fn health(State(state): State<AppState>) -> Response {
    let snap = current(&state);
    Json(json!({
        "status": "ok",
        "samples": snap.stats.samples,
        "samples_per_s": snap.stats.samples_per_s,
        "tracked_pipes": snap.tracked_pipes(),
        "registered_pipes": snap.pipes.len(),
        "fixes": snap.stats.fixes,
        "events": snap.stats.events,
        "late_samples": snap.stats.late_samples,
        "invalid_samples": snap.stats.invalid_samples,
        "stream_clients": state.stream.receiver_count(),
        "t": snap.now,
    }))
    .into_response()
}

async fn floor_map(State(state): State<AppState>) -> Response {
    Json(current(&state).map.as_ref().clone()).into_response()
}

#[derive(Debug, Deserialize)]
struct PipeFilter {
    id: Option<String>,
    zone: Option<String>,
    material: Option<String>,
}

impl PipeFilter {
    /// `id` is a substring match, `material` ignores case and `zone`
    /// accepts `outside`.
    fn matches(&self, p: &PipeRecord) -> bool {
        let id = self.id.as_deref().is_none_or(|id| p.pipe_id.contains(id));
        let zone = self
            .zone
            .as_deref()
            .is_none_or(|z| p.current_zone.as_deref().unwrap_or(crate::history::OUTSIDE) == z);
        let material = self
            .material
            .as_deref()
            .is_none_or(|m| p.material.eq_ignore_ascii_case(m));
        id && zone && material
    }
}

async fn list_pipes(State(state): State<AppState>, Query(filter): Query<PipeFilter>) -> Response {
    let snap = current(&state);
    let pipes: Vec<&PipeRecord> = snap.pipes.iter().filter(|p| filter.matches(p)).collect();
    Json(pipes).into_response()
}

async fn get_pipe(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match current(&state).pipe(&id) {
        Some(p) => Json(p).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("pipe `{id}` not found")),
    }
}

async fn send_command(state: &AppState, cmd: Command) -> Result<()> {
    let (tx, rx) = oneshot::channel();
    state.input.send(Input::Command(cmd, tx)).map_err(|_| Error::Stopped)?;
    rx.await.map_err(|_| Error::Stopped)?
}

async fn upsert_pipe(State(state): State<AppState>, body: axum::body::Bytes) -> Response {
    let record: PipeRecord = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(Error::Invalid(vec![e.to_string()])),
    };
    match send_command(&state, Command::UpsertPipe(record)).await {
        Ok(()) => Json(json!({ "ok": true })).into_response(),
        Err(e) => error_response(e),
    }
}

async fn upsert_rule(State(state): State<AppState>, body: axum::body::Bytes) -> Response {
    let rule: Rule = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(Error::Invalid(vec![e.to_string()])),
    };
    match send_command(&state, Command::UpsertRule(rule)).await {
        Ok(()) => Json(json!({ "ok": true })).into_response(),
        Err(e) => error_response(e),
    }
}

async fn list_rules(State(state): State<AppState>) -> Response {
    Json(current(&state).rules.clone()).into_response()
}

async fn list_zones(State(state): State<AppState>) -> Response {
    Json(current(&state).zones.clone()).into_response()
}

async fn zone_occupancy(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let snap = current(&state);
    if !snap.zones.iter().any(|z| z.id == id) {
        return error(StatusCode::NOT_FOUND, format!("zone `{id}` not found"));
    }
    let (fresh, stale): (Vec<&PipeRecord>, Vec<&PipeRecord>) = snap
        .pipes
        .iter()
        .filter(|p| p.current_zone.as_deref() == Some(id.as_str()))
        .partition(|p| {
            p.last_seen()
                .is_some_and(|seen| snap.now.saturating_sub(seen) <= snap.staleness_ms)
        });
    Json(json!({
        "zone": id,
        "count": fresh.len(),
        "pipes": fresh.iter().map(|p| &p.pipe_id).collect::<Vec<_>>(),
        "stale": stale.iter().map(|p| &p.pipe_id).collect::<Vec<_>>(),
    }))
    .into_response()
}

async fn clusters(State(state): State<AppState>) -> Response {
    let snap = current(&state);
    Json(json!({ "t": snap.now, "clusters": snap.clusters })).into_response()
}

#[derive(Debug, Deserialize)]
struct EventQuery {
    after: Option<u64>,
    pipe_id: Option<String>,
    limit: Option<usize>,
}

async fn list_events(State(state): State<AppState>, Query(q): Query<EventQuery>) -> Response {
    let snap = current(&state);
    let after = q.after.unwrap_or(0);
    let limit = q.limit.unwrap_or(500);
    let events: Vec<_> = snap
        .events
        .iter()
        .filter(|e| e.event_id > after && q.pipe_id.as_deref().is_none_or(|p| e.pipe_id == p))
        .take(limit)
        .collect();
    Json(events).into_response()
}

#[derive(Debug, Deserialize)]
struct DwellQuery {
    pipe_id: Option<String>,
    zone_id: Option<String>,
    from: Option<i64>,
    to: Option<i64>,
}

async fn dwell(State(state): State<AppState>, Query(q): Query<DwellQuery>) -> Response {
    let snap = current(&state);
    let from = q.from.unwrap_or(0);
    let to = q.to.unwrap_or(snap.now.max(from));
    match (&q.pipe_id, &q.zone_id) {
        (Some(pipe), None) => {
            if snap.pipe(pipe).is_none() {
                return error(StatusCode::NOT_FOUND, format!("pipe `{pipe}` not found"));
            }
            Json(snap.history.dwell_for_pipe(pipe, from, to)).into_response()
        }
        (None, Some(zone)) => {
            if !snap.zones.iter().any(|z| &z.id == zone) {
                return error(StatusCode::NOT_FOUND, format!("zone `{zone}` not found"));
            }
            Json(vec![snap.history.dwell_for_zone(zone, from, to)]).into_response()
        }
        _ => error(StatusCode::BAD_REQUEST, "give exactly one of pipe_id or zone_id"),
    }
}

async fn stream(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

fn clusters_message(snap: &Snapshot) -> String {
    let msg = StreamMessage::Clusters {
        t: snap.now,
        clusters: snap.clusters.clone(),
    };
    serde_json::to_string(&msg).expect("stream messages always serialize")
}

async fn client(mut socket: WebSocket, state: AppState) {
    use futures::{SinkExt, StreamExt};

    let mut rx = state.stream.subscribe();
    let initial = clusters_message(&current(&state));
    if socket.send(Message::Text(initial.into())).await.is_err() {
        return;
    }
    let (mut sink, mut incoming) = socket.split();
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "stream client lagging, resending clusters");
                    let text = clusters_message(&current(&state));
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = incoming.next() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// Zone occupancy counts keyed by zone id, plus outside and untracked.
pub fn occupancy_counts(snap: &Snapshot) -> BTreeMap<String, usize> {
    let mut out = snap.summary.zones.clone();
    out.insert(crate::history::OUTSIDE.into(), snap.summary.outside);
    out.insert(crate::history::UNTRACKED.into(), snap.summary.untracked);
    out
}
