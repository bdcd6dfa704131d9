use std::collections::{BTreeMap, BTreeSet};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Extension, Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::Duration;
use safehaven_core::blueprint::Blueprint;
use safehaven_core::classification::QuestionnaireAnswers;
use safehaven_core::domain::{DocRef, Role, Tier};
use safehaven_core::ids::*;
use safehaven_core::service::{DocumentKind, EgressSpec, WorkPackageIntent};
use safehaven_core::{resolve_policy, validate_blueprint, HavenError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{exposure, ApiError, AppState, SessionContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Exposure {
    /// Secure network only.
    Internal,
    /// Reachable from outside while a window is open.
    External,
}

/// The published route table.
pub const ROUTES: &[(&str, &str, Exposure)] = &[
    ("GET", "/api/routes", Exposure::Internal),
    ("GET", "/api/me", Exposure::Internal),
    ("POST", "/api/users", Exposure::Internal),
    ("POST", "/api/users/me/training", Exposure::Internal),
    ("POST", "/api/providers", Exposure::Internal),
    ("POST", "/api/datasets", Exposure::Internal),
    ("POST", "/api/datasets/{id}/agreement", Exposure::Internal),
    ("GET", "/api/projects", Exposure::Internal),
    ("POST", "/api/projects", Exposure::Internal),
    ("GET", "/api/projects/{id}", Exposure::Internal),
    ("POST", "/api/projects/{id}/members", Exposure::Internal),
    ("POST", "/api/projects/{id}/members/{user}/counter-approval", Exposure::Internal),
    ("POST", "/api/projects/{id}/work-packages", Exposure::Internal),
    ("POST", "/api/projects/{id}/close", Exposure::Internal),
    ("GET", "/api/work-packages/{id}", Exposure::Internal),
    ("GET", "/api/work-packages/{id}/classification", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/documents", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/initial-classification", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/mounts", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/ingress", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/initial-ingress/complete", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/full-classification", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/classifications", Exposure::Internal),
    ("DELETE", "/api/work-packages/{id}/classifications", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/consensus", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/tier4", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/tier4/acknowledge", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/start", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/egress", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/egress/resolve", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/publication", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/releases", Exposure::Internal),
    ("POST", "/api/work-packages/{id}/close", Exposure::Internal),
    ("POST", "/api/volumes/{id}/complete", Exposure::Internal),
    ("POST", "/api/volumes/{id}/verify", Exposure::Internal),
    ("POST", "/api/volumes/{id}/outputs", Exposure::Internal),
    ("POST", "/api/volumes/{id}/seal", Exposure::Internal),
    ("GET", "/api/environments/{id}", Exposure::Internal),
    ("GET", "/api/environments/{id}/blueprint", Exposure::Internal),
    ("POST", "/api/environments/{id}/software", Exposure::Internal),
    ("POST", "/api/software/{id}/files", Exposure::Internal),
    ("POST", "/api/software/{id}/submit", Exposure::Internal),
    ("POST", "/api/software/{id}/signoff", Exposure::Internal),
    ("POST", "/api/software/{id}/reject", Exposure::Internal),
    ("GET", "/api/policy/{tier}", Exposure::Internal),
    ("POST", "/api/blueprints/validate", Exposure::Internal),
    ("GET", "/api/audit/verify", Exposure::Internal),
    ("GET", "/api/audit/export", Exposure::Internal),
    ("GET", "/api/windows", Exposure::Internal),
    ("POST", "/api/windows", Exposure::Internal),
    ("PUT", "/external/deposit/{token}", Exposure::External),
    ("GET", "/external/releases/{grant}", Exposure::External),
];

type Res<T> = Result<Json<T>, ApiError>;
type St = State<AppState>;
type Session = Extension<SessionContext>;

fn ok<T>(r: Result<T, HavenError>) -> Res<T> {
    r.map(Json).map_err(ApiError::from)
}

fn decode(b64: &str) -> Result<Vec<u8>, ApiError> {
    B64.decode(b64).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string()))
}

/// An empty body stands for the default.
fn optional<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))
}

pub(crate) fn routes() -> axum::Router<AppState> {
    Router::new()
        .route("/api/routes", get(route_table))
        .route("/api/me", get(me))
        .route("/api/users", post(invite_user))
        .route("/api/users/me/training", post(certify_training))
        .route("/api/providers", post(register_provider))
        .route("/api/datasets", post(register_dataset))
        .route("/api/datasets/{id}/agreement", post(sign_agreement))
        .route("/api/projects", get(list_projects).post(create_project))
        .route("/api/projects/{id}", get(get_project))
        .route("/api/projects/{id}/members", post(assign_user))
        .route("/api/projects/{id}/members/{user}/counter-approval", post(counter_approve))
        .route("/api/projects/{id}/work-packages", post(create_work_package))
        .route("/api/projects/{id}/close", post(close_project))
        .route("/api/work-packages/{id}", get(get_work_package))
        .route("/api/work-packages/{id}/classification", get(classification_status))
        .route("/api/work-packages/{id}/documents", post(record_document))
        .route("/api/work-packages/{id}/initial-classification", post(initial_classify))
        .route("/api/work-packages/{id}/mounts", post(authorize_mount))
        .route("/api/work-packages/{id}/ingress", post(begin_ingress))
        .route("/api/work-packages/{id}/initial-ingress/complete", post(complete_initial_ingress))
        .route("/api/work-packages/{id}/full-classification", post(begin_full_classification))
        .route("/api/work-packages/{id}/classifications", post(submit_classification).delete(withdraw_classification))
        .route("/api/work-packages/{id}/consensus", post(record_consensus))
        .route("/api/work-packages/{id}/tier4", post(raise_tier4))
        .route("/api/work-packages/{id}/tier4/acknowledge", post(acknowledge_halt))
        .route("/api/work-packages/{id}/start", post(start_analysis))
        .route("/api/work-packages/{id}/egress", post(request_egress))
        .route("/api/work-packages/{id}/egress/resolve", post(resolve_egress))
        .route("/api/work-packages/{id}/publication", post(publish_egress))
        .route("/api/work-packages/{id}/releases", post(authorize_release))
        .route("/api/work-packages/{id}/close", post(close_work_package))
        .route("/api/volumes/{id}/complete", post(complete_ingress))
        .route("/api/volumes/{id}/verify", post(verify_integrity))
        .route("/api/volumes/{id}/outputs", post(write_output))
        .route("/api/volumes/{id}/seal", post(seal_output))
        .route("/api/environments/{id}", get(get_environment))
        .route("/api/environments/{id}/blueprint", get(get_blueprint))
        .route("/api/environments/{id}/software", post(request_software))
        .route("/api/software/{id}/files", post(write_software))
        .route("/api/software/{id}/submit", post(submit_software))
        .route("/api/software/{id}/signoff", post(signoff_software))
        .route("/api/software/{id}/reject", post(reject_software))
        .route("/api/policy/{tier}", get(policy))
        .route("/api/blueprints/validate", post(validate))
        .route("/api/audit/verify", get(audit_verify))
        .route("/api/audit/export", get(audit_export))
        .route("/api/windows", get(list_windows).post(open_window))
        .route("/external/deposit/{token}", put(deposit))
        .route("/external/releases/{grant}", get(collect_release))
}

async fn route_table() -> Json<Value> {
    let rows: Vec<Value> = ROUTES.iter().map(|(m, p, e)| json!({ "method": m, "path": p, "exposure": e })).collect();
    Json(Value::Array(rows))
}

async fn me(State(st): St, Extension(s): Session) -> Res<Value> {
    let user = st.haven.get_user(&s.user_id)?;
    Ok(Json(json!({
        "user": user,
        "origin_network": s.origin_network,
        "device_class": s.device_class,
        "mfa": s.mfa,
    })))
}

// -- users, providers, datasets, projects ---------------------------------------

#[derive(Deserialize)]
struct InviteBody {
    display_name: String,
    directory_ref: String,
    #[serde(default)]
    guest: bool,
}

async fn invite_user(State(st): St, Extension(s): Session, Json(b): Json<InviteBody>) -> Res<impl Serialize> {
    ok(st.haven.invite_user(&s.actor(), &b.display_name, &b.directory_ref, b.guest))
}

async fn certify_training(State(st): St, Extension(s): Session) -> Res<impl Serialize> {
    ok(st.haven.certify_training(&s.actor()))
}

#[derive(Deserialize)]
struct ProviderBody {
    name: String,
    representative: UserId,
}

async fn register_provider(State(st): St, Extension(s): Session, Json(b): Json<ProviderBody>) -> Res<impl Serialize> {
    ok(st.haven.register_provider(&s.actor(), &b.name, &b.representative))
}

#[derive(Deserialize)]
struct DatasetBody {
    provider: ProviderId,
    name: String,
    personal_data: bool,
    #[serde(default)]
    contractual_terms: String,
    provider_hash: Option<String>,
}

async fn register_dataset(State(st): St, Extension(s): Session, Json(b): Json<DatasetBody>) -> Res<impl Serialize> {
    ok(st.haven.register_dataset(&s.actor(), &b.provider, &b.name, b.personal_data, &b.contractual_terms, b.provider_hash))
}

#[derive(Deserialize)]
struct AgreementBody {
    doc_ref: String,
    lawful_basis_certified: bool,
}

async fn sign_agreement(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<DatasetId>,
    Json(b): Json<AgreementBody>,
) -> Res<impl Serialize> {
    ok(st.haven.sign_agreement(&s.actor(), &id, DocRef::new(b.doc_ref), b.lawful_basis_certified))
}

async fn list_projects(State(st): St) -> Res<impl Serialize> {
    ok(st.haven.list_projects())
}

#[derive(Deserialize)]
struct ProjectBody {
    name: String,
    project_manager: UserId,
    investigator: UserId,
}

async fn create_project(State(st): St, Extension(s): Session, Json(b): Json<ProjectBody>) -> Res<impl Serialize> {
    ok(st.haven.create_project(&s.actor(), &b.name, &b.project_manager, &b.investigator))
}

async fn get_project(State(st): St, Path(id): Path<ProjectId>) -> Res<impl Serialize> {
    ok(st.haven.get_project(&id))
}

#[derive(Deserialize)]
struct MemberBody {
    user: UserId,
    role: Role,
}

async fn assign_user(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<ProjectId>,
    Json(b): Json<MemberBody>,
) -> Res<impl Serialize> {
    ok(st.haven.assign_user(&s.actor(), &id, &b.user, b.role))
}

async fn counter_approve(
    State(st): St,
    Extension(s): Session,
    Path((id, user)): Path<(ProjectId, UserId)>,
) -> Res<impl Serialize> {
    ok(st.haven.counter_approve(&s.actor(), &id, &user))
}

#[derive(Deserialize)]
struct WorkPackageBody {
    datasets: BTreeSet<DatasetId>,
    #[serde(default)]
    intent: WorkPackageIntent,
}

async fn create_work_package(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<ProjectId>,
    Json(b): Json<WorkPackageBody>,
) -> Res<impl Serialize> {
    ok(st.haven.create_work_package(&s.actor(), &id, b.datasets, b.intent))
}

async fn close_project(State(st): St, Extension(s): Session, Path(id): Path<ProjectId>) -> Res<impl Serialize> {
    ok(st.haven.close_project(&s.actor(), &id))
}

// -- work packages ----------------------------------------------------------------

async fn get_work_package(State(st): St, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.get_work_package(&id))
}

async fn classification_status(State(st): St, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.classification_status(&id))
}

#[derive(Deserialize)]
struct DocumentBody {
    kind: DocumentKind,
    doc_ref: String,
}

async fn record_document(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    Json(b): Json<DocumentBody>,
) -> Res<impl Serialize> {
    ok(st.haven.record_document(&s.actor(), &id, b.kind, DocRef::new(b.doc_ref)))
}

#[derive(Deserialize)]
struct InitialBody {
    tier: Tier,
    #[serde(default)]
    anonymised_personal_data: bool,
}

async fn initial_classify(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    Json(b): Json<InitialBody>,
) -> Res<impl Serialize> {
    ok(st.haven.initial_classify(&s.actor(), &id, b.tier, b.anonymised_personal_data))
}

#[derive(Deserialize)]
struct DatasetRef {
    dataset: DatasetId,
}

async fn authorize_mount(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    Json(b): Json<DatasetRef>,
) -> Res<impl Serialize> {
    ok(st.haven.authorize_mount(&s.actor(), &id, &b.dataset))
}

async fn begin_ingress(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    Json(b): Json<DatasetRef>,
) -> Res<impl Serialize> {
    ok(st.haven.begin_ingress(&s.actor(), &id, &b.dataset))
}

async fn complete_initial_ingress(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.complete_initial_ingress(&s.actor(), &id))
}

async fn begin_full_classification(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.begin_full_classification(&s.actor(), &id))
}

async fn submit_classification(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    Json(answers): Json<QuestionnaireAnswers>,
) -> Res<impl Serialize> {
    ok(st.haven.submit_classification(&s.actor(), &id, answers))
}

async fn withdraw_classification(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<Value> {
    st.haven.withdraw_classification(&s.actor(), &id)?;
    Ok(Json(json!({ "withdrawn": true })))
}

#[derive(Deserialize, Default)]
struct ConsensusBody {
    #[serde(default)]
    proceed_without_consensus: bool,
}

async fn record_consensus(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    body: Bytes,
) -> Res<impl Serialize> {
    let b: ConsensusBody = optional(&body)?;
    ok(st.haven.record_consensus(&s.actor(), &id, b.proceed_without_consensus))
}

async fn raise_tier4(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.raise_tier4(&s.actor(), &id))
}

async fn acknowledge_halt(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.acknowledge_halt(&s.actor(), &id))
}

async fn start_analysis(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.start_analysis(&s.actor(), &id))
}

async fn request_egress(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    Json(spec): Json<EgressSpec>,
) -> Res<impl Serialize> {
    ok(st.haven.request_egress(&s.actor(), &id, spec))
}

async fn resolve_egress(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.resolve_egress(&s.actor(), &id))
}

async fn publish_egress(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.publish_egress(&s.actor(), &id))
}

#[derive(Deserialize)]
struct ReleaseBody {
    ip_range: ipnet::IpNet,
    duration_hours: i64,
}

async fn authorize_release(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<WorkPackageId>,
    Json(b): Json<ReleaseBody>,
) -> Res<impl Serialize> {
    ok(st.haven.authorize_release(&s.actor(), &id, b.ip_range, b.duration_hours))
}

async fn close_work_package(State(st): St, Extension(s): Session, Path(id): Path<WorkPackageId>) -> Res<impl Serialize> {
    ok(st.haven.close_work_package(&s.actor(), &id))
}

// -- volumes, environments, software ------------------------------------------------

async fn complete_ingress(State(st): St, Extension(s): Session, Path(id): Path<VolumeId>) -> Res<impl Serialize> {
    ok(st.haven.complete_ingress(&s.actor(), &id))
}

#[derive(Deserialize, Default)]
struct VerifyBody {
    provider_hash: Option<String>,
}

async fn verify_integrity(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<VolumeId>,
    body: Bytes,
) -> Res<impl Serialize> {
    let b: VerifyBody = optional(&body)?;
    ok(st.haven.verify_integrity(&s.actor(), &id, b.provider_hash.as_deref()))
}

#[derive(Deserialize)]
struct FileBody {
    path: String,
    content_b64: String,
}

async fn write_output(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<VolumeId>,
    Json(b): Json<FileBody>,
) -> Res<Value> {
    st.haven.write_output(&s.actor(), &id, &b.path, &decode(&b.content_b64)?)?;
    Ok(Json(json!({ "written": b.path })))
}

async fn seal_output(State(st): St, Extension(s): Session, Path(id): Path<VolumeId>) -> Res<impl Serialize> {
    ok(st.haven.seal_output(&s.actor(), &id))
}

async fn get_environment(State(st): St, Path(id): Path<EnvironmentId>) -> Res<impl Serialize> {
    ok(st.haven.get_environment(&id))
}

async fn get_blueprint(State(st): St, Path(id): Path<EnvironmentId>) -> Res<impl Serialize> {
    ok(st.haven.get_blueprint(&id))
}

#[derive(Deserialize)]
struct SoftwareBody {
    artifact_ref: String,
    #[serde(default)]
    requires_admin_install: bool,
}

async fn request_software(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<EnvironmentId>,
    Json(b): Json<SoftwareBody>,
) -> Res<impl Serialize> {
    ok(st.haven.request_software_ingress(&s.actor(), &id, &b.artifact_ref, b.requires_admin_install))
}

async fn write_software(
    State(st): St,
    Extension(s): Session,
    Path(id): Path<RequestId>,
    Json(b): Json<FileBody>,
) -> Res<Value> {
    st.haven.write_software(&s.actor(), &id, &b.path, &decode(&b.content_b64)?)?;
    Ok(Json(json!({ "written": b.path })))
}

async fn submit_software(State(st): St, Extension(s): Session, Path(id): Path<RequestId>) -> Res<impl Serialize> {
    ok(st.haven.submit_software(&s.actor(), &id))
}

async fn signoff_software(State(st): St, Extension(s): Session, Path(id): Path<RequestId>) -> Res<impl Serialize> {
    ok(st.haven.signoff_software(&s.actor(), &id))
}

async fn reject_software(State(st): St, Extension(s): Session, Path(id): Path<RequestId>) -> Res<impl Serialize> {
    ok(st.haven.reject_software(&s.actor(), &id))
}

// -- policy, blueprints, audit --------------------------------------------------------

async fn policy(Path(level): Path<u8>) -> Res<impl Serialize> {
    let tier = Tier::new(level).map_err(|e| HavenError::Invalid(e.to_string()))?;
    Ok(Json(resolve_policy(tier)))
}

async fn validate(Json(bp): Json<Blueprint>) -> Res<impl Serialize> {
    Ok(Json(validate_blueprint(&bp, &resolve_policy(bp.tier))))
}

async fn audit_verify(State(st): St) -> Res<impl Serialize> {
    ok(st.haven.audit().verify_chain().map_err(HavenError::from))
}

async fn audit_export(State(st): St) -> Result<impl IntoResponse, ApiError> {
    let mut out = Vec::new();
    st.haven.audit().export_ndjson(&mut out).map_err(HavenError::from)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out))
}

async fn list_windows(State(st): St) -> Res<impl Serialize> {
    ok(exposure::windows(&st.haven))
}

#[derive(Deserialize)]
struct WindowBody {
    view: String,
    ip_range: ipnet::IpNet,
    duration_hours: i64,
}

async fn open_window(State(st): St, Extension(s): Session, Json(b): Json<WindowBody>) -> Res<impl Serialize> {
    ok(exposure::open_window(&st.haven, &s.actor(), &b.view, b.ip_range, Duration::hours(b.duration_hours)))
}

// -- external views -------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum DepositLine {
    File { path: String, content_b64: String },
    Digest { digest: String },
}

/// Body is NDJSON: one `{"path", "content_b64"}` object per file and an optional
/// trailing `{"digest"}` of the whole volume. The token secret travels in
/// `x-ingress-secret`.
async fn deposit(State(st): St, Path(token): Path<TokenId>, headers: HeaderMap, body: Bytes) -> Res<impl Serialize> {
    let secret = headers
        .get("x-ingress-secret")
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, "token_rejected", "x-ingress-secret header required"))?;
    let text = std::str::from_utf8(&body).map_err(|e| HavenError::Invalid(e.to_string()))?;
    let mut files = Vec::new();
    let mut digest = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<DepositLine>(line).map_err(|e| HavenError::Invalid(e.to_string()))? {
            DepositLine::File { path, content_b64 } => files.push((path, decode(&content_b64)?)),
            DepositLine::Digest { digest: d } => digest = Some(d),
        }
    }
    ok(st.haven.deposit(&token, secret, &files, digest.as_deref()))
}

async fn collect_release(State(st): St, Extension(s): Session, Path(grant): Path<GrantId>) -> Res<Value> {
    let addr = s.addr.ok_or_else(|| HavenError::AccessDenied("caller address unknown".into()))?;
    let volume = st.haven.access_release(&s.actor(), &grant, addr)?;
    let files: BTreeMap<String, String> =
        st.haven.volume_files(&volume)?.into_iter().map(|(p, c)| (p, B64.encode(c))).collect();
    Ok(Json(json!({ "volume_id": volume, "files": files })))
}
