//! HTTP+JSON front end for the governance service.
//!
//! Every request is authenticated through an [`IdentityProvider`] and its
//! bearer token is forwarded, as the user's own credential, to any platform
//! call it causes. Internal views answer only from the institutional or
//! restricted networks; the two external views answer only inside an open
//! [`ExposureWindow`] covering the caller. Every response is audited.

pub mod exposure;
pub mod identity;
mod routes;

use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;

use axum::extract::{ConnectInfo, MatchedPath, Request, State};
use axum::http::{header, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use safehaven_core::audit::NewEvent;
use safehaven_core::config::NetworkClassification;
use safehaven_core::ids::UserId;
use safehaven_core::platform::{CredentialScope, ForwardedCredential};
use safehaven_core::policy::InboundNetwork;
use safehaven_core::service::Actor;
use safehaven_core::store::{EntityRef, StoreError};
use safehaven_core::{canonical, Haven, HavenError};
use serde::Serialize;

pub use exposure::{ExposureWindow, ExternalView};
pub use identity::{Claims, DeviceClass, IdentityProvider, SignedTokenIdp};
pub use routes::{Exposure, ROUTES};

#[derive(Clone)]
pub struct AppState {
    pub haven: Haven,
    pub identity: Arc<dyn IdentityProvider>,
    pub networks: NetworkClassification,
}

impl AppState {
    pub fn new(haven: Haven, identity: Arc<dyn IdentityProvider>) -> Self {
        let networks = haven.config().networks.clone();
        AppState { haven, identity, networks }
    }
}

/// Who is calling and from where, established once per request.
#[derive(Debug, Clone)]
pub struct SessionContext {
    pub user_id: UserId,
    pub forwarded_credential: ForwardedCredential,
    pub origin_network: InboundNetwork,
    pub device_class: DeviceClass,
    pub mfa: bool,
    pub addr: Option<IpAddr>,
}

impl SessionContext {
    pub fn actor(&self) -> Actor {
        Actor::new(self.user_id.clone()).with_credential(self.forwarded_credential.clone())
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn unauthenticated(message: &str) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", message)
    }

    fn forbidden(message: &str) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }
}

pub fn status_for(e: &HavenError) -> StatusCode {
    match e {
        HavenError::NotFound { .. } => StatusCode::NOT_FOUND,
        HavenError::MissingCredential => StatusCode::UNAUTHORIZED,
        HavenError::Unauthorized { .. }
        | HavenError::AccessDenied(_)
        | HavenError::RefereeNotIndependent { .. }
        | HavenError::ProjectManagerCannotInvite(_)
        | HavenError::UntrainedUser(_)
        | HavenError::TokenRejected(_)
        | HavenError::TokenWriteOnly => StatusCode::FORBIDDEN,
        HavenError::Invalid(_) | HavenError::Classification(_) | HavenError::MissingScript => StatusCode::UNPROCESSABLE_ENTITY,
        HavenError::Store(StoreError::VersionConflict { .. }) => StatusCode::CONFLICT,
        HavenError::Store(_) | HavenError::Audit(_) => StatusCode::INTERNAL_SERVER_ERROR,
        HavenError::Platform(_) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::CONFLICT,
    }
}

impl From<HavenError> for ApiError {
    fn from(e: HavenError) -> Self {
        ApiError::new(status_for(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    routes::routes()
        .route_layer(middleware::from_fn_with_state(state.clone(), gate))
        .with_state(state)
}

fn bearer(req: &Request) -> Option<&str> {
    req.headers().get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

fn external_view(path: &str) -> Option<ExternalView> {
    let rest = path.strip_prefix("/external/")?;
    ExternalView::parse(rest.split('/').next()?.trim_end_matches('s'))
}

fn admit(st: &AppState, req: &Request, addr: Option<IpAddr>) -> Result<SessionContext, (ApiError, Option<UserId>)> {
    let token = bearer(req).ok_or((ApiError::unauthenticated("bearer token required"), None))?;
    let claims = st
        .identity
        .authenticate(token, st.haven.now())
        .map_err(|e| (ApiError::unauthenticated(&format!("token rejected: {e:?}")), None))?;
    let user = claims.sub.clone();
    let fail = |e: ApiError| (e, Some(user.clone()));
    st.haven.get_user(&user).map_err(|_| fail(ApiError::unauthenticated("unknown user")))?;
    let origin = addr.map(|a| st.networks.classify(a)).unwrap_or(InboundNetwork::Internet);
    match external_view(req.uri().path()) {
        Some(view) => {
            let open = match addr {
                Some(a) => exposure::is_exposed(&st.haven, view, a).map_err(|e| fail(e.into()))?,
                None => false,
            };
            if !open {
                return Err(fail(ApiError::forbidden("no exposure window covers this address")));
            }
        }
        None => {
            if origin == InboundNetwork::Internet {
                return Err(fail(ApiError::forbidden("internal views are reachable only from the secure network")));
            }
            if origin == InboundNetwork::Restricted && !claims.mfa {
                return Err(fail(ApiError::forbidden("restricted-network views require a second factor")));
            }
        }
    }
    let credential = ForwardedCredential::new(user.clone(), token, CredentialScope::Infrastructure)
        .map_err(|e| fail(ApiError::unauthenticated(&e.to_string())))?;
    Ok(SessionContext {
        user_id: user,
        forwarded_credential: credential,
        origin_network: origin,
        device_class: claims.device,
        mfa: claims.mfa,
        addr,
    })
}

async fn gate(State(st): State<AppState>, mut req: Request, next: Next) -> Response {
    let addr = req.extensions().get::<ConnectInfo<SocketAddr>>().map(|c| c.0.ip());
    let route = req.extensions().get::<MatchedPath>().map(|m| m.as_str().to_owned()).unwrap_or_default();
    let method = req.method().clone();
    let (response, user) = match admit(&st, &req, addr) {
        Ok(session) => {
            let user = session.user_id.clone();
            req.extensions_mut().insert(session);
            (next.run(req).await, Some(user))
        }
        Err((e, user)) => (e.into_response(), user),
    };
    if let Err(e) = record(&st, user, &method, &route, addr, response.status()) {
        return ApiError::from(e).into_response();
    }
    response
}

fn record(
    st: &AppState,
    user: Option<UserId>,
    method: &Method,
    route: &str,
    addr: Option<IpAddr>,
    status: StatusCode,
) -> Result<(), HavenError> {
    let payload = serde_json::json!({ "status": status.as_u16(), "addr": addr.map(|a| a.to_string()) });
    st.haven.audit().append(NewEvent {
        actor_id: user.map(|u| u.to_string()).unwrap_or_else(|| "anonymous".into()),
        action: "api.response".into(),
        entity_ref: EntityRef { kind: "route".into(), id: format!("{method} {route}"), version: 0 },
        payload_digest: canonical::digest(&payload),
        timestamp: st.haven.now(),
    })?;
    Ok(())
}

/// Serves `state` on `listener` until the process stops.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state).into_make_service_with_connect_info::<SocketAddr>()).await
}
