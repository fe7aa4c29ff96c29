//! HTTP API. Handlers authorize, parse, then hand the work to the platform
//! on the blocking pool.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::distill::ReportStyle;
use crate::graph::{ContributionKind, NewContribution, Phase, Provenance, Stance};
use crate::ids::{ContributionId, DiscussionId, EventId, ParticipantId, PromptId, SessionId, TranscriptId};
use crate::import::PatchOp;
use crate::reflection::{ReflectionConfig, ReflectionDeck, ReflectionEvent};
use crate::transcript::TranscriptInput;

use super::auth::{Action, Auth, Role};
use super::notify::{Message, NotifyError, Subscription};
use super::{Command, ErrorClass, Platform, ServiceError};

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    pub auth: Arc<Auth>,
}

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

pub fn status_of(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Invariant => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Unauthorized => StatusCode::UNAUTHORIZED,
        ErrorClass::Forbidden => StatusCode::FORBIDDEN,
        ErrorClass::BadRequest => StatusCode::BAD_REQUEST,
        ErrorClass::Upstream => StatusCode::BAD_GATEWAY,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = self.0.body();
        let mut resp = (status_of(body.error), Json(body)).into_response();
        if matches!(self.0, ServiceError::Unauthorized) {
            resp.headers_mut().insert(header::WWW_AUTHENTICATE, "Bearer".parse().expect("static header"));
        }
        resp
    }
}

type ApiResult = Result<Response, ApiError>;

fn authorize(st: &AppState, headers: &HeaderMap, action: Action, resource: Option<&str>) -> Result<Role, ApiError> {
    let h = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
    Ok(st.auth.authorize(h, action, resource)?)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::BadRequest(format!("request body: {e}"))))
}

async fn blocking<T, F>(f: F) -> ApiResult
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    let r = tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Storage(format!("worker failed: {e}")))?;
    Ok(Json(r?).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/discussions", post(create_discussion))
        .route("/discussions/{id}", get(get_discussion))
        .route("/discussions/{id}/contributions", post(add_contribution))
        .route("/discussions/{id}/contributions/{cid}/endorse", post(endorse))
        .route("/discussions/{id}/phase", post(advance_phase))
        .route("/discussions/{id}/analytics/clusters", get(clusters))
        .route("/discussions/{id}/analytics/thememap", get(thememap))
        .route("/discussions/{id}/analytics/contested", get(contested))
        .route("/discussions/{id}/recommendations", get(get_recommendations).post(distill))
        .route("/discussions/{id}/report", get(report))
        .route("/discussions/{id}/stream", get(discussion_stream))
        .route("/transcripts", post(upload_transcript))
        .route("/imports", post(create_import))
        .route("/imports/{id}", get(get_import))
        .route("/imports/{id}/{op}", post(import_op))
        .route("/events", post(create_event))
        .route("/events/{id}/transcript", post(attach_transcript))
        .route("/events/{id}/reflections", post(reflect))
        .route("/events/{id}/snapshot/{view}", get(snapshot))
        .route("/events/{id}/stream/{view}", get(event_stream))
        .route("/events/{id}/prompts/{pid}/deliver", post(deliver))
        .route("/events/{id}/close", post(close_event))
        .with_state(state)
}

pub async fn serve(state: AppState, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn health(State(st): State<AppState>) -> Response {
    Json(serde_json::json!({ "status": "ok", "seq": st.platform.seq() })).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateDiscussionReq {
    title: String,
    focal_question: String,
    author: Option<ParticipantId>,
}

async fn create_discussion(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let role = authorize(&st, &headers, Action::ManageDiscussion, None)?;
    let req: CreateDiscussionReq = parse(&body)?;
    let p = st.platform.clone();
    let author = req.author.unwrap_or_else(|| role.name().into());
    blocking(move || {
        p.execute(&Command::CreateDiscussion { title: req.title, focal_question: req.focal_question, author })
    })
    .await
}

async fn get_discussion(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    authorize(&st, &headers, Action::ReadDiscussion, Some(&id))?;
    let d: DiscussionId = id.into();
    let body = st.platform.read(|s| -> Result<_, ServiceError> {
        let disc = s.graph.discussion(&d)?.clone();
        let mut contributions: Vec<_> = s.graph.contributions_of(&d).cloned().collect();
        contributions.sort_by(|a, b| a.id.cmp(&b.id));
        let contested = s.graph.contested_positions(&d, usize::MAX)?;
        Ok(serde_json::json!({ "discussion": disc, "contributions": contributions, "contested": contested }))
    })?;
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContributionReq {
    kind: ContributionKind,
    stance: Option<Stance>,
    text: String,
    author: ParticipantId,
    parent: Option<ContributionId>,
}

async fn add_contribution(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult {
    authorize(&st, &headers, Action::Contribute, Some(&id))?;
    let req: ContributionReq = parse(&body)?;
    let new = NewContribution {
        discussion_id: id.into(),
        kind: req.kind,
        stance: req.stance.unwrap_or(Stance::None),
        text: req.text,
        author: req.author,
        parent: req.parent,
        provenance: Provenance::online(),
    };
    let p = st.platform.clone();
    blocking(move || p.execute(&Command::AddContribution(new))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndorseReq {
    participant: ParticipantId,
}

async fn endorse(State(st): State<AppState>, headers: HeaderMap, Path((id, cid)): Path<(String, String)>, body: Bytes) -> ApiResult {
    authorize(&st, &headers, Action::Contribute, Some(&id))?;
    let req: EndorseReq = parse(&body)?;
    let p = st.platform.clone();
    blocking(move || p.execute(&Command::Endorse { contribution_id: cid.into(), participant: req.participant })).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseReq {
    phase: Phase,
}

async fn advance_phase(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult {
    authorize(&st, &headers, Action::ManageDiscussion, Some(&id))?;
    let req: PhaseReq = parse(&body)?;
    let p = st.platform.clone();
    blocking(move || p.execute(&Command::AdvancePhase { discussion_id: id.into(), phase: req.phase })).await
}

fn query_usize(q: &HashMap<String, String>, key: &str) -> Result<Option<usize>, ApiError> {
    q.get(key)
        .map(|v| v.parse::<usize>().map_err(|_| ApiError(ServiceError::BadRequest(format!("{key} must be a non-negative integer")))))
        .transpose()
}

async fn clusters(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    authorize(&st, &headers, Action::ReadAnalytics, Some(&id))?;
    let k = query_usize(&q, "k")?.ok_or_else(|| ApiError(ServiceError::BadRequest("query parameter k is required".into())))?;
    let p = st.platform.clone();
    blocking(move || p.clusters(&id.into(), k)).await
}

async fn thememap(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    authorize(&st, &headers, Action::ReadAnalytics, Some(&id))?;
    let p = st.platform.clone();
    blocking(move || p.theme_map(&id.into())).await
}

async fn contested(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    authorize(&st, &headers, Action::ReadAnalytics, Some(&id))?;
    let n = query_usize(&q, "n")?.unwrap_or(crate::distill::report::REPORT_TOP_CONTESTED);
    let p = st.platform.clone();
    blocking(move || p.contested(&id.into(), n)).await
}

async fn get_recommendations(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    authorize(&st, &headers, Action::ReadAnalytics, Some(&id))?;
    let p = st.platform.clone();
    blocking(move || p.recommendations(&id.into())).await
}

async fn distill(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    authorize(&st, &headers, Action::Distill, Some(&id))?;
    let k = query_usize(&q, "k")?.ok_or_else(|| ApiError(ServiceError::BadRequest("query parameter k is required".into())))?;
    let threshold = q
        .get("threshold")
        .map(|t| t.parse::<f64>().map_err(|_| ApiError(ServiceError::BadRequest("threshold must be a number".into()))))
        .transpose()?;
    let p = st.platform.clone();
    blocking(move || p.distill(&id.into(), k, threshold)).await
}

async fn report(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    authorize(&st, &headers, Action::ReadAnalytics, Some(&id))?;
    let style: ReportStyle = q
        .get("style")
        .map_or(Ok(ReportStyle::Executive), |s| s.parse())
        .map_err(|e: String| ApiError(ServiceError::BadRequest(e)))?;
    let markdown = q.get("format").is_some_and(|f| f == "md");
    let p = st.platform.clone();
    let r = tokio::task::spawn_blocking(move || p.report(&id.into(), style))
        .await
        .map_err(|e| ServiceError::Storage(format!("worker failed: {e}")))??;
    if markdown {
        return Ok(([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], r.to_markdown()).into_response());
    }
    Ok(Json(r).into_response())
}

async fn upload_transcript(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    authorize(&st, &headers, Action::UploadTranscript, None)?;
    let input = TranscriptInput::from_json(&body).map_err(|e| ApiError(ServiceError::BadRequest(e.to_string())))?;
    let p = st.platform.clone();
    blocking(move || p.execute(&Command::RegisterTranscript(input))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportReq {
    transcript_id: TranscriptId,
    discussion_id: DiscussionId,
}

async fn create_import(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    check_role(&st, &headers, Action::Import)?;
    let req: ImportReq = parse(&body)?;
    let role = authorize(&st, &headers, Action::Import, Some(req.discussion_id.as_str()))?;
    let p = st.platform.clone();
    blocking(move || {
        p.execute(&Command::CreateImport { transcript_id: req.transcript_id, discussion_id: req.discussion_id, actor: role.name().into() })
    })
    .await
}

fn check_role(st: &AppState, headers: &HeaderMap, action: Action) -> Result<Role, ApiError> {
    let h = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
    Ok(st.auth.check_role(h, action)?)
}

/// Sessions are authorized against their target discussion, after the role
/// check so unknown callers learn nothing about which sessions exist.
fn authorize_session(st: &AppState, headers: &HeaderMap, session: &SessionId) -> Result<Role, ApiError> {
    check_role(st, headers, Action::Import)?;
    let d = st.platform.discussion_of_session(session)?;
    authorize(st, headers, Action::Import, Some(d.as_str()))
}

async fn get_import(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let session: SessionId = id.into();
    authorize_session(&st, &headers, &session)?;
    let s = st.platform.read(|s| s.session(&session).cloned())?;
    Ok(Json(s).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ImportOpReq {
    #[serde(default)]
    patch: Vec<PatchOp>,
    #[serde(default)]
    reason: Option<String>,
}

async fn import_op(State(st): State<AppState>, headers: HeaderMap, Path((id, op)): Path<(String, String)>, body: Bytes) -> ApiResult {
    let session: SessionId = id.into();
    let role = authorize_session(&st, &headers, &session)?;
    let req: ImportOpReq = if body.is_empty() { ImportOpReq::default() } else { parse(&body)? };
    let actor = role.name().to_string();
    let p = st.platform.clone();
    let cmd = match op.as_str() {
        "analyze" => return blocking(move || p.analyze(&session, &actor)).await,
        "edit" => Command::EditDraft { session_id: session, patch: req.patch, curator: actor },
        "approve" => Command::Approve { session_id: session, curator: actor },
        "reject" => Command::Reject {
            session_id: session,
            curator: actor,
            reason: req.reason.unwrap_or_else(|| "rejected by curator".into()),
        },
        "merge" => Command::Merge { session_id: session, actor },
        other => return Err(ServiceError::NotFound(format!("import operation {other}")).into()),
    };
    blocking(move || p.execute(&cmd)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateEventReq {
    event_id: EventId,
    title: String,
    deck: ReflectionDeck,
    #[serde(default)]
    config: Option<ReflectionConfig>,
}

async fn create_event(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    check_role(&st, &headers, Action::CreateEvent)?;
    let req: CreateEventReq = parse(&body)?;
    authorize(&st, &headers, Action::CreateEvent, Some(req.event_id.as_str()))?;
    let p = st.platform.clone();
    blocking(move || {
        p.execute(&Command::CreateEvent {
            event_id: req.event_id,
            title: req.title,
            deck: req.deck,
            config: req.config.unwrap_or_default(),
        })
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttachReq {
    transcript_id: TranscriptId,
}

async fn attach_transcript(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult {
    authorize(&st, &headers, Action::CreateEvent, Some(&id))?;
    let req: AttachReq = parse(&body)?;
    let p = st.platform.clone();
    blocking(move || p.execute(&Command::AttachEventTranscript { event_id: id.into(), transcript_id: req.transcript_id })).await
}

/// Participants only learn whether their reflection counted.
#[derive(Serialize)]
struct ReflectAck {
    admission: super::AdmissionKind,
}

async fn reflect(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult {
    authorize(&st, &headers, Action::Reflect, Some(&id))?;
    let e: ReflectionEvent = parse(&body)?;
    if e.event_id.as_str() != id {
        return Err(ServiceError::Reflection(crate::reflection::ReflectionError::WrongEvent(e.event_id)).into());
    }
    let p = st.platform.clone();
    blocking(move || p.reflect(e).map(|r| ReflectAck { admission: r.admission })).await
}

enum View {
    Public,
    Facilitator,
}

fn view_of(st: &AppState, headers: &HeaderMap, id: &str, view: &str) -> Result<View, ApiError> {
    match view {
        "public" => {
            authorize(st, headers, Action::PublicView, Some(id))?;
            Ok(View::Public)
        }
        "facilitator" => {
            authorize(st, headers, Action::FacilitatorView, Some(id))?;
            Ok(View::Facilitator)
        }
        other => Err(ServiceError::NotFound(format!("view {other}")).into()),
    }
}

async fn snapshot(State(st): State<AppState>, headers: HeaderMap, Path((id, view)): Path<(String, String)>) -> ApiResult {
    let v = view_of(&st, &headers, &id, &view)?;
    let e: EventId = id.into();
    Ok(match v {
        View::Public => Json(st.platform.public_snapshot(&e)?).into_response(),
        View::Facilitator => Json(st.platform.facilitator_snapshot(&e)?).into_response(),
    })
}

fn last_seq(q: &HashMap<String, String>) -> Result<Option<u64>, ApiError> {
    q.get("last_seq")
        .map(|v| v.parse::<u64>().map_err(|_| ApiError(ServiceError::BadRequest("last_seq must be an integer".into()))))
        .transpose()
}

fn notify_err(e: NotifyError) -> ApiError {
    ApiError(ServiceError::BadRequest(e.to_string()))
}

/// One JSON message per line. A lagging reader gets a final error line
/// naming the seq to resume after, then the stream ends.
fn ndjson<T: Clone + Serialize + Send + 'static>(sub: Subscription<T>) -> Response {
    let stream = futures::stream::unfold((sub, 0u64, false), |(mut sub, last, done)| async move {
        if done {
            return None;
        }
        let (line, last, done) = match sub.next().await {
            Ok(Some(m)) => {
                let seq = m.seq;
                (to_line(&m), seq, false)
            }
            Ok(None) => return None,
            Err(e) => (
                to_line(&serde_json::json!({ "error": "slow_consumer", "message": e.to_string(), "resume_after": last })),
                last,
                true,
            ),
        };
        Some((Ok::<_, std::io::Error>(Bytes::from(line)), (sub, last, done)))
    });
    ([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response()
}

fn to_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("stream messages serialize");
    s.push('\n');
    s
}

async fn event_stream(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path((id, view)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let v = view_of(&st, &headers, &id, &view)?;
    let e: EventId = id.into();
    st.platform.read(|s| s.event(&e).map(|_| ()))?;
    let after = last_seq(&q)?;
    let hub = st.platform.hub();
    Ok(match v {
        View::Public => ndjson(hub.public.subscribe(&e, after).map_err(notify_err)?),
        View::Facilitator => ndjson(hub.facilitator.subscribe(&e, after).map_err(notify_err)?),
    })
}

async fn discussion_stream(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    authorize(&st, &headers, Action::CuratorStream, Some(&id))?;
    let d: DiscussionId = id.into();
    st.platform.read(|s| s.graph.discussion(&d).map(|_| ())).map_err(ServiceError::from)?;
    let sub = st.platform.hub().discussion.subscribe(&d, last_seq(&q)?).map_err(notify_err)?;
    Ok(ndjson(sub))
}

async fn deliver(State(st): State<AppState>, headers: HeaderMap, Path((id, pid)): Path<(String, String)>) -> ApiResult {
    let role = authorize(&st, &headers, Action::DeliverPrompt, Some(&id))?;
    let p = st.platform.clone();
    let prompt_id: PromptId = pid.into();
    blocking(move || p.execute(&Command::DeliverPrompt { event_id: id.into(), prompt_id, actor: role.name().into() })).await
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CloseReq {
    duration_ms: Option<u64>,
}

async fn close_event(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult {
    authorize(&st, &headers, Action::CloseEvent, Some(&id))?;
    let req: CloseReq = if body.is_empty() { CloseReq::default() } else { parse(&body)? };
    let p = st.platform.clone();
    blocking(move || p.close_event(&id.into(), req.duration_ms)).await
}

/// Decodes a stream line; handy for clients and tests.
pub fn decode_line<T: DeserializeOwned>(line: &str) -> Result<Message<T>, serde_json::Error> {
    serde_json::from_str(line)
}
