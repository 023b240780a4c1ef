//! Local HITL service behind `gatectl serve`.
//!
//! | Method | Path | Body / query | Result |
//! |---|---|---|---|
//! | GET | `/api/pending` | | escalations awaiting a decision |
//! | POST | `/api/decision` | `{v, id, decision: "approve" \| "deny"}` | 200, 404 unknown id, 409 conflicting repeat |
//! | GET | `/api/policy` | | policy plus the zone of every integer R at the current S |
//! | PATCH | `/api/policy` | `{v, strictness?, auto_threshold?, block_threshold?, hard_rule_threshold?}` | updated policy |
//! | GET | `/api/audit` | `?offset&limit` (limit 1-500, default 50) | one page of the chain |
//! | GET | `/api/events` | | server-sent `pending`, `resolved`, `finished`, `policy` events |
//! | POST | `/api/handshakes` | `{v, counterpart_id, declared_purpose, requested_fields, proof_of_value?}` | 202 with the handshake id |
//! | GET | `/api/handshakes/{id}` | | phase, zone and disclosed field paths |
//!
//! Every payload carries `"v": 1`. No response ever contains a profile
//! value: disclosures are reported by path and granularity only.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use soda_core::a2a::{run_handshake, Phase, ScriptedCounterpart, DEFAULT_TIMEOUT_SECS};
use soda_core::gatekeeper::{
    route, AuditLog, AuditRecord, FieldSource, Gatekeeper, HitlRequest, HitlVerdict, IntentDeclaration, Policy,
    ProofOfValue, RequestedField, TokenCosts, Zone,
};
use soda_core::pod::{PodError, PodSession};
use soda_core::sim::{AgentSpec, DisclosedField};
use soda_core::updl::ProfileNode;
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use crate::{Exit, Failure};

pub const API_VERSION: u32 = 1;
pub const DEFAULT_HITL_TIMEOUT: Duration = Duration::from_secs(DEFAULT_TIMEOUT_SECS);
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

/// Escalation metadata shown to the human. Never holds values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingCard {
    pub id: String,
    pub counterpart_id: String,
    pub declared_purpose: String,
    pub fields: Vec<RequestedField>,
    /// Request sensitivity coefficient.
    pub r: f64,
}

impl From<&HitlRequest> for PendingCard {
    fn from(r: &HitlRequest) -> Self {
        Self {
            id: r.handshake_id.clone(),
            counterpart_id: r.counterpart_id.clone(),
            declared_purpose: r.declared_purpose.clone(),
            fields: r.fields.clone(),
            r: r.sensitivity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceEvent {
    Pending { card: PendingCard },
    Resolved { id: String, verdict: HitlVerdict },
    Finished { id: String, phase: Phase },
    Policy { policy: Policy },
}

impl ServiceEvent {
    fn kind(&self) -> &'static str {
        match self {
            Self::Pending { .. } => "pending",
            Self::Resolved { .. } => "resolved",
            Self::Finished { .. } => "finished",
            Self::Policy { .. } => "policy",
        }
    }
}

#[derive(Serialize)]
struct Versioned<T: Serialize> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

fn versioned<T: Serialize>(body: T) -> Json<Versioned<T>> {
    Json(Versioned { v: API_VERSION, body })
}

/// Status of one submitted handshake, without any field values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandshakeView {
    pub id: String,
    pub counterpart_id: String,
    pub declared_purpose: String,
    pub requested_fields: Vec<String>,
    pub done: bool,
    pub phase: Phase,
    pub zone: Option<Zone>,
    pub escalated: bool,
    pub disclosed: Vec<DisclosedField>,
    pub avatar_tokens: u64,
    pub audit_seq: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionAck {
    Recorded,
    /// Same decision already recorded; nothing changed.
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecisionError {
    Unknown,
    Conflict(HitlVerdict),
}

#[derive(Clone, Debug)]
pub struct ServiceOptions {
    pub hitl_timeout: Duration,
    pub costs: TokenCosts,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            hitl_timeout: DEFAULT_HITL_TIMEOUT,
            costs: TokenCosts::default(),
        }
    }
}

#[derive(Default)]
struct Queue {
    pending: BTreeMap<String, (PendingCard, mpsc::Sender<HitlVerdict>)>,
    resolved: BTreeMap<String, HitlVerdict>,
}

struct Inner {
    options: ServiceOptions,
    policy: Mutex<Policy>,
    audit: Mutex<AuditLog>,
    pod: Mutex<PodSession>,
    queue: Mutex<Queue>,
    handshakes: Mutex<BTreeMap<String, HandshakeView>>,
    events: broadcast::Sender<ServiceEvent>,
    next_id: AtomicU64,
}

/// Cheap handle to the shared service state.
#[derive(Clone)]
pub struct Service(Arc<Inner>);

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct LockedPod<'a>(&'a Mutex<PodSession>);

impl FieldSource for LockedPod<'_> {
    fn field(&self, field_path: &str) -> Result<Option<ProfileNode>, PodError> {
        lock(self.0).field(field_path)
    }

    fn ensure_open(&self) -> Result<(), PodError> {
        lock(self.0).ensure_open()
    }
}

impl Service {
    pub fn new(session: PodSession, policy: Policy, options: ServiceOptions) -> Result<Self, Failure> {
        policy
            .validate()
            .map_err(|e| Failure::new(Exit::Config, e.to_string()))?;
        let (events, _) = broadcast::channel(256);
        Ok(Self(Arc::new(Inner {
            options,
            policy: Mutex::new(policy),
            audit: Mutex::new(AuditLog::default()),
            pod: Mutex::new(session),
            queue: Mutex::new(Queue::default()),
            handshakes: Mutex::new(BTreeMap::new()),
            events,
            next_id: AtomicU64::new(1),
        })))
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServiceEvent> {
        self.0.events.subscribe()
    }

    fn emit(&self, e: ServiceEvent) {
        // No subscribers is fine.
        let _ = self.0.events.send(e);
    }

    pub fn policy(&self) -> Policy {
        lock(&self.0.policy).clone()
    }

    /// Replaces the policy atomically; applies from the next handshake.
    pub fn set_policy(&self, policy: Policy) -> Result<(), String> {
        policy.validate().map_err(|e| e.to_string())?;
        *lock(&self.0.policy) = policy.clone();
        self.emit(ServiceEvent::Policy { policy });
        Ok(())
    }

    pub fn pending(&self) -> Vec<PendingCard> {
        lock(&self.0.queue).pending.values().map(|(c, _)| c.clone()).collect()
    }

    pub fn audit(&self) -> AuditLog {
        lock(&self.0.audit).clone()
    }

    pub fn handshake(&self, id: &str) -> Option<HandshakeView> {
        lock(&self.0.handshakes).get(id).cloned()
    }

    /// Delivers a human decision. Idempotent per handshake id.
    pub fn decide(&self, id: &str, approve: bool) -> Result<DecisionAck, DecisionError> {
        let verdict = if approve {
            HitlVerdict::Approve
        } else {
            HitlVerdict::Deny
        };
        let mut q = lock(&self.0.queue);
        if let Some((_, tx)) = q.pending.remove(id) {
            q.resolved.insert(id.to_string(), verdict);
            // Announce before waking the handshake so `resolved` precedes `finished`.
            self.emit(ServiceEvent::Resolved { id: id.into(), verdict });
            let _ = tx.send(verdict);
            return Ok(DecisionAck::Recorded);
        }
        match q.resolved.get(id) {
            Some(v) if *v == verdict => Ok(DecisionAck::Duplicate),
            Some(v) => Err(DecisionError::Conflict(*v)),
            None => Err(DecisionError::Unknown),
        }
    }

    fn await_decision(&self, req: &HitlRequest) -> HitlVerdict {
        let card = PendingCard::from(req);
        let id = card.id.clone();
        let (tx, rx) = mpsc::channel();
        lock(&self.0.queue).pending.insert(id.clone(), (card.clone(), tx));
        if let Some(h) = lock(&self.0.handshakes).get_mut(&id) {
            h.phase = Phase::AwaitingHitl;
        }
        self.emit(ServiceEvent::Pending { card });
        if let Ok(v) = rx.recv_timeout(self.0.options.hitl_timeout) {
            return v;
        }
        let mut q = lock(&self.0.queue);
        if q.pending.remove(&id).is_none() {
            // A decision landed between the timeout and the lock.
            return rx.try_recv().unwrap_or(HitlVerdict::Timeout);
        }
        q.resolved.insert(id.clone(), HitlVerdict::Timeout);
        drop(q);
        self.emit(ServiceEvent::Resolved {
            id,
            verdict: HitlVerdict::Timeout,
        });
        HitlVerdict::Timeout
    }

    fn register(&self, decl: &IntentDeclaration) -> String {
        let id = format!("hs-{:06}", self.0.next_id.fetch_add(1, Ordering::Relaxed));
        let view = HandshakeView {
            id: id.clone(),
            counterpart_id: decl.counterpart_id.clone(),
            declared_purpose: decl.declared_purpose.clone(),
            requested_fields: decl.requested_fields.clone(),
            done: false,
            phase: Phase::Idle,
            zone: None,
            escalated: false,
            disclosed: Vec::new(),
            avatar_tokens: 0,
            audit_seq: None,
        };
        lock(&self.0.handshakes).insert(id.clone(), view);
        id
    }

    /// Runs one handshake on the calling thread, blocking on HITL if it
    /// escalates.
    pub fn run(&self, decl: IntentDeclaration, proof: Option<ProofOfValue>) -> HandshakeView {
        let id = self.register(&decl);
        self.drive(&id, decl, proof)
    }

    /// Starts a handshake on its own thread and returns its id.
    pub fn submit(&self, decl: IntentDeclaration, proof: Option<ProofOfValue>) -> String {
        let id = self.register(&decl);
        let this = self.clone();
        let hid = id.clone();
        std::thread::spawn(move || this.drive(&hid, decl, proof));
        id
    }

    fn drive(&self, id: &str, decl: IntentDeclaration, proof: Option<ProofOfValue>) -> HandshakeView {
        let mut gk = Gatekeeper::with_defaults(self.policy()).expect("policy is validated on every write");
        gk.costs = self.0.options.costs.clone();
        let mut agent = ScriptedCounterpart::new(id, decl, proof);
        let source = LockedPod(&self.0.pod);
        let mut hitl = |req: &HitlRequest| self.await_decision(req);
        let report = run_handshake(&mut agent, &mut gk, &source, &mut hitl, now_secs());
        // Re-chain the handshake's single record onto the shared log.
        let seq = gk.audit.records().first().map(|r: &AuditRecord| {
            lock(&self.0.audit)
                .append(r.timestamp, &r.counterpart_id, &r.decision, &r.fields)
                .seq
        });
        let mut views = lock(&self.0.handshakes);
        let view = views.get_mut(id).expect("registered before driving");
        view.done = true;
        view.phase = report.state.phase;
        view.zone = report.state.decision.as_ref().map(|d| d.zone);
        view.escalated = report.state.escalated;
        view.disclosed = report
            .disclosures()
            .into_iter()
            .map(|d| DisclosedField {
                field_path: d.field_path,
                granularity: d.granularity,
            })
            .collect();
        view.avatar_tokens = report.avatar_tokens;
        view.audit_seq = seq;
        let out = view.clone();
        drop(views);
        self.emit(ServiceEvent::Finished {
            id: id.into(),
            phase: out.phase,
        });
        out
    }

    /// Replays the simulated counterparts in rotation, one every `interval`.
    pub fn spawn_sim(&self, agents: Vec<AgentSpec>, interval: Duration) -> JoinHandle<()> {
        let this = self.clone();
        std::thread::spawn(move || {
            for agent in agents.iter().cycle() {
                this.submit(agent.declaration(), agent.proof_of_value.clone());
                std::thread::sleep(interval);
            }
        })
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/api/pending", get(get_pending))
            .route("/api/decision", post(post_decision))
            .route("/api/policy", get(get_policy).patch(patch_policy))
            .route("/api/audit", get(get_audit))
            .route("/api/events", get(get_events))
            .route("/api/handshakes", post(post_handshake))
            .route("/api/handshakes/{id}", get(get_handshake))
            .with_state(self.clone())
    }
}

pub async fn serve(service: Service, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, service.router()).await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body {
            error: String,
        }
        (self.0, versioned(Body { error: self.1 })).into_response()
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.to_string())
}

fn check_version(v: u32) -> Result<(), ApiError> {
    if v == API_VERSION {
        Ok(())
    } else {
        Err(bad_request(format!("unsupported payload version {v}")))
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(t)| t).map_err(|e| bad_request(e.body_text()))
}

#[derive(Serialize)]
struct PendingList {
    pending: Vec<PendingCard>,
}

async fn get_pending(State(s): State<Service>) -> impl IntoResponse {
    versioned(PendingList { pending: s.pending() })
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum DecisionKind {
    Approve,
    Deny,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    v: u32,
    id: String,
    decision: DecisionKind,
}

#[derive(Serialize)]
struct DecisionReply {
    id: String,
    status: DecisionAck,
}

async fn post_decision(
    State(s): State<Service>,
    payload: Result<Json<DecisionBody>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let b = body(payload)?;
    check_version(b.v)?;
    let approve = matches!(b.decision, DecisionKind::Approve);
    let worker = s.clone();
    let id = b.id.clone();
    let result = tokio::task::spawn_blocking(move || worker.decide(&id, approve))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(status) => Ok(versioned(DecisionReply { id: b.id, status })),
        Err(DecisionError::Unknown) => Err(ApiError(
            StatusCode::NOT_FOUND,
            format!("no pending handshake {}", b.id),
        )),
        Err(DecisionError::Conflict(v)) => Err(ApiError(
            StatusCode::CONFLICT,
            format!("{} was already resolved as {v:?}", b.id),
        )),
    }
}

#[derive(Serialize)]
struct PreviewCell {
    r: u8,
    zone: Zone,
}

#[derive(Serialize)]
struct PolicyReply {
    policy: Policy,
    preview: Vec<PreviewCell>,
}

fn policy_reply(policy: Policy) -> Json<Versioned<PolicyReply>> {
    let preview = (0..=10u8)
        .filter_map(|r| {
            route(f64::from(policy.strictness), f64::from(r), &policy)
                .ok()
                .map(|d| PreviewCell { r, zone: d.zone })
        })
        .collect();
    versioned(PolicyReply { policy, preview })
}

async fn get_policy(State(s): State<Service>) -> impl IntoResponse {
    policy_reply(s.policy())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyPatch {
    v: u32,
    #[serde(default, alias = "S")]
    strictness: Option<u8>,
    #[serde(default)]
    auto_threshold: Option<f64>,
    #[serde(default)]
    block_threshold: Option<f64>,
    #[serde(default)]
    hard_rule_threshold: Option<f64>,
}

async fn patch_policy(
    State(s): State<Service>,
    payload: Result<Json<PolicyPatch>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let p = body(payload)?;
    check_version(p.v)?;
    let mut policy = s.policy();
    if let Some(x) = p.strictness {
        policy.strictness = x;
    }
    if let Some(x) = p.auto_threshold {
        policy.auto_threshold = x;
    }
    if let Some(x) = p.block_threshold {
        policy.block_threshold = x;
    }
    if let Some(x) = p.hard_rule_threshold {
        policy.hard_rule_threshold = x;
    }
    s.set_policy(policy.clone()).map_err(bad_request)?;
    Ok(policy_reply(policy))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default)]
    limit: Option<usize>,
}

#[derive(Serialize)]
struct AuditPage {
    total: usize,
    offset: usize,
    limit: usize,
    head_hash: String,
    records: Vec<AuditRecord>,
}

async fn get_audit(
    State(s): State<Service>,
    page: Result<Query<Page>, QueryRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Query(page) = page.map_err(|e| bad_request(e.body_text()))?;
    let limit = page.limit.unwrap_or(DEFAULT_PAGE);
    if !(1..=MAX_PAGE).contains(&limit) {
        return Err(bad_request(format!("limit must be within 1-{MAX_PAGE}")));
    }
    let log = lock(&s.0.audit);
    let records = log.records().iter().skip(page.offset).take(limit).cloned().collect();
    Ok(versioned(AuditPage {
        total: log.len(),
        offset: page.offset,
        limit,
        head_hash: log.head_hash().to_string(),
        records,
    }))
}

async fn get_events(State(s): State<Service>) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let stream = BroadcastStream::new(s.subscribe()).filter_map(|e| {
        let e = e.ok()?;
        let data = serde_json::to_string(&Versioned {
            v: API_VERSION,
            body: &e,
        })
        .ok()?;
        Some(Ok(SseEvent::default().event(e.kind()).data(data)))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HandshakeBody {
    v: u32,
    counterpart_id: String,
    declared_purpose: String,
    requested_fields: Vec<String>,
    #[serde(default)]
    proof_of_value: Option<ProofOfValue>,
}

#[derive(Serialize)]
struct Accepted {
    id: String,
}

async fn post_handshake(
    State(s): State<Service>,
    payload: Result<Json<HandshakeBody>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let b = body(payload)?;
    check_version(b.v)?;
    let decl = IntentDeclaration {
        counterpart_id: b.counterpart_id,
        declared_purpose: b.declared_purpose,
        requested_fields: b.requested_fields,
        proof_of_value: None,
    };
    let id = s.submit(decl, b.proof_of_value);
    Ok((StatusCode::ACCEPTED, versioned(Accepted { id })))
}

async fn get_handshake(State(s): State<Service>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    s.handshake(&id)
        .map(versioned)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no handshake {id}")))
}
