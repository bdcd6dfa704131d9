//! Temporary exposure of whitelisted views outside the secure network.

use std::net::IpAddr;

use chrono::Duration;
use safehaven_core::canonical;
use safehaven_core::clock::Timestamp;
use safehaven_core::domain::Role;
use safehaven_core::ids::UserId;
use safehaven_core::service::Actor;
use safehaven_core::store::Stored;
use safehaven_core::{audit::NewEvent, Haven, HavenError};
use serde::{Deserialize, Serialize};

/// Views that may ever be reached from outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalView {
    /// Provider uploads through an ingress token.
    Deposit,
    /// Collection of an authorised release.
    Release,
}

impl ExternalView {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "deposit" => Some(ExternalView::Deposit),
            "release" => Some(ExternalView::Release),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureWindow {
    pub id: String,
    pub view: ExternalView,
    pub ip_range: ipnet::IpNet,
    pub opens_at: Timestamp,
    pub closes_at: Timestamp,
    pub opened_by: UserId,
}

impl ExposureWindow {
    pub fn covers(&self, addr: IpAddr, now: Timestamp) -> bool {
        self.opens_at <= now && now < self.closes_at && self.ip_range.contains(&addr)
    }
}

impl Stored for ExposureWindow {
    const KIND: &'static str = "exposure_window";
    fn store_id(&self) -> String {
        self.id.clone()
    }
}

fn may_open(haven: &Haven, user: &UserId) -> Result<bool, HavenError> {
    if haven.get_user(user)?.has_global(Role::ProgrammeManager) {
        return Ok(true);
    }
    Ok(haven.list_projects()?.iter().any(|p| &p.project_manager_id == user))
}

/// Opens `view` to `ip_range` for `duration`. A still-open window for the same
/// view and range is extended to the later closing time instead of duplicated.
pub fn open_window(
    haven: &Haven,
    actor: &Actor,
    view: &str,
    ip_range: ipnet::IpNet,
    duration: Duration,
) -> Result<ExposureWindow, HavenError> {
    let view = ExternalView::parse(view).ok_or_else(|| HavenError::Invalid(format!("view {view} cannot be exposed")))?;
    if duration <= Duration::zero() {
        return Err(HavenError::Invalid("window duration must be positive".into()));
    }
    if !may_open(haven, &actor.user_id)? {
        return Err(HavenError::unauthorized(&actor.user_id, "open exposure windows"));
    }
    let now = haven.now();
    let closes_at = now + duration;
    let store = haven.store();
    let live = store
        .list::<ExposureWindow>()?
        .into_iter()
        .find(|(w, _)| w.view == view && w.ip_range == ip_range && w.closes_at > now);
    let (window, version, action) = match live {
        Some((mut w, v)) => {
            w.closes_at = w.closes_at.max(closes_at);
            (w, v, "exposure.extend")
        }
        None => {
            let id = format!("win-{:010}", store.next_sequence()?);
            let w = ExposureWindow { id, view, ip_range, opens_at: now, closes_at, opened_by: actor.user_id.clone() };
            (w, 0, "exposure.open")
        }
    };
    let rec = store.put(&window, version)?;
    haven.audit().append(NewEvent {
        actor_id: actor.user_id.to_string(),
        action: action.into(),
        entity_ref: rec.entity_ref,
        payload_digest: canonical::digest(&rec.body),
        timestamp: now,
    })?;
    Ok(window)
}

pub fn windows(haven: &Haven) -> Result<Vec<ExposureWindow>, HavenError> {
    Ok(haven.store().list::<ExposureWindow>()?.into_iter().map(|(w, _)| w).collect())
}

pub fn is_exposed(haven: &Haven, view: ExternalView, addr: IpAddr) -> Result<bool, HavenError> {
    let now = haven.now();
    Ok(windows(haven)?.iter().any(|w| w.view == view && w.covers(addr, now)))
}

