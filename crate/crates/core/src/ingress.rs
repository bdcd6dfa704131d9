//! Records for data and software moving in and out of environments.

use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Timestamp;
use crate::domain::{Role, Tier};
use crate::ids::{DatasetId, EnvironmentId, GrantId, ProjectId, RequestId, TokenId, UserId, VolumeId, WorkPackageId};
use crate::policy::SoftwareIngressSignoff;

pub const DELIVERY_CHANNEL: &str = "management-framework";

/// SHA-256 over files in path order; each file contributes
/// `u64be(len(path)) || path || u64be(len(content)) || content`.
pub fn volume_digest<'a>(files: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> String {
    let mut sorted: Vec<(&str, &[u8])> = files.into_iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut h = Sha256::new();
    for (path, content) in sorted {
        h.update((path.len() as u64).to_be_bytes());
        h.update(path.as_bytes());
        h.update((content.len() as u64).to_be_bytes());
        h.update(content);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenMode {
    WriteOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngressToken {
    pub token_id: TokenId,
    pub volume_id: VolumeId,
    pub dataset_id: DatasetId,
    pub work_package_id: WorkPackageId,
    pub mode: TokenMode,
    pub issued_at: Timestamp,
    pub expiry: Timestamp,
    pub one_time: bool,
    pub issued_to: UserId,
    pub delivered_via: String,
    /// Only the digest of the bearer secret is stored.
    pub secret_sha256: String,
    pub revoked: bool,
    /// Digest the depositor declared with their upload, if any.
    pub declared_digest: Option<String>,
}

impl IngressToken {
    pub fn usable_at(&self, now: Timestamp) -> Result<(), &'static str> {
        if self.revoked {
            Err("token revoked")
        } else if now >= self.expiry {
            Err("token expired")
        } else {
            Ok(())
        }
    }

    pub fn matches_secret(&self, secret: &str) -> bool {
        crate::canonical::sha256_hex(secret.as_bytes()) == self.secret_sha256
    }
}

/// Returned once, to the Project Manager, through the management interface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedToken {
    pub token: IngressToken,
    pub secret: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrityStatus {
    Match,
    Mismatch,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityRecord {
    pub volume_id: VolumeId,
    pub computed_hash: String,
    pub provider_hash: String,
    pub verified_at: Timestamp,
    pub status: IntegrityStatus,
}

impl IntegrityRecord {
    pub fn evaluate(volume_id: VolumeId, computed: String, provider: Option<String>, at: Timestamp) -> Self {
        let status = match &provider {
            None => IntegrityStatus::Pending,
            Some(p) if p.eq_ignore_ascii_case(&computed) => IntegrityStatus::Match,
            Some(_) => IntegrityStatus::Mismatch,
        };
        IntegrityRecord {
            volume_id,
            computed_hash: computed,
            provider_hash: provider.unwrap_or_default(),
            verified_at: at,
            status,
        }
    }
}

/// Latest verification plus the schedule for the next one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityState {
    pub volume_id: VolumeId,
    pub provider_hash: Option<String>,
    pub latest: Option<IntegrityRecord>,
    pub next_due: Timestamp,
    pub history_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub kind: String,
    pub project_id: ProjectId,
    pub recipients: Vec<UserId>,
    pub subject: String,
    pub audit_seq: u64,
}

/// Delivery of alerts (email, phone...). Never used for token delivery.
pub trait Notifier: Send + Sync {
    fn notify(&self, alert: &Alert);
}

#[derive(Debug, Default)]
pub struct RecordingNotifier {
    sent: Mutex<Vec<Alert>>,
}

impl RecordingNotifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sent(&self) -> Vec<Alert> {
        self.sent.lock().unwrap().clone()
    }
}

impl Notifier for RecordingNotifier {
    fn notify(&self, alert: &Alert) {
        self.sent.lock().unwrap().push(alert.clone());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EgressIntent {
    Publish,
    FurtherAnalysis,
    ReturnToProvider,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressRequest {
    pub id: RequestId,
    pub source_work_package_id: WorkPackageId,
    pub derived_work_package_id: WorkPackageId,
    pub output_volume_id: VolumeId,
    pub analysis_script_ref: String,
    pub intent: EgressIntent,
    pub pre_approved: bool,
    pub requested_by: UserId,
    pub requested_at: Timestamp,
}

/// Permission to copy a Tier 0/1 output out of its environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseAuthorization {
    pub work_package_id: WorkPackageId,
    pub tier: Tier,
    pub blueprint_digest: String,
    pub output_volume_id: VolumeId,
    pub authorized_by: UserId,
    pub authorized_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseApproval {
    pub user_id: UserId,
    pub role: Role,
    pub at: Timestamp,
}

/// Dual-authorised, time-boxed external access to a copy of outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionalRelease {
    pub id: GrantId,
    pub work_package_id: WorkPackageId,
    pub ip_range: ipnet::IpNet,
    pub duration_hours: i64,
    pub approvals: Vec<ReleaseApproval>,
    /// Set once both parties have authorised.
    pub volume_id: Option<VolumeId>,
    pub representative_id: Option<UserId>,
    pub opens_at: Option<Timestamp>,
    pub closes_at: Option<Timestamp>,
    pub revoked: bool,
}

impl ExceptionalRelease {
    pub fn has_role(&self, role: Role) -> bool {
        self.approvals.iter().any(|a| a.role == role)
    }

    pub fn is_granted(&self) -> bool {
        self.has_role(Role::DatasetProviderRepresentative) && self.has_role(Role::ProgrammeManager)
    }

    pub fn duration(&self) -> Duration {
        Duration::hours(self.duration_hours)
    }

    pub fn permits(&self, addr: std::net::IpAddr, now: Timestamp) -> Result<(), &'static str> {
        let (Some(open), Some(close)) = (self.opens_at, self.closes_at) else {
            return Err("release not yet authorised by both parties");
        };
        if self.revoked || now >= close || now < open {
            return Err("release window closed");
        }
        if !self.ip_range.contains(&addr) {
            return Err("address outside declared range");
        }
        Ok(())
    }
}

/// Which side of the airlock can touch the software ingress volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AirlockMode {
    /// Write-only from outside the environment; not visible inside.
    External,
    /// Submitted, awaiting review; no access from either side.
    Locked,
    /// Read-only inside the environment; no outside access.
    Internal,
}

impl AirlockMode {
    pub fn writable_from_outside(self) -> bool {
        self == AirlockMode::External
    }

    pub fn readable_inside(self) -> bool {
        self == AirlockMode::Internal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewState {
    AwaitingSubmission,
    AwaitingReview,
    ApprovedInternal,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signoff {
    pub role: Role,
    pub user_id: UserId,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftwareIngressRequest {
    pub id: RequestId,
    pub environment_id: EnvironmentId,
    pub volume_id: VolumeId,
    pub artifact_ref: String,
    pub submitted_by: UserId,
    pub review_state: ReviewState,
    pub airlock: AirlockMode,
    pub signoffs: Vec<Signoff>,
    pub requires_admin_install: bool,
    pub required_signoff: SoftwareIngressSignoff,
}

impl SoftwareIngressRequest {
    pub fn signoffs_satisfy_policy(&self) -> bool {
        let has = |r| self.signoffs.iter().any(|s| s.role == r);
        match self.required_signoff {
            SoftwareIngressSignoff::UserDirect => true,
            SoftwareIngressSignoff::InvestigatorSignoff => has(Role::Investigator),
            SoftwareIngressSignoff::InvestigatorPlusReferee => has(Role::Investigator) && has(Role::Referee),
        }
    }
}

/// Packages and images that may enter without the airlock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreApprovalRegistry {
    pub entries: BTreeMap<String, UserId>,
}

impl PreApprovalRegistry {
    pub const ID: &'static str = "registry";

    pub fn contains(&self, artifact_ref: &str) -> bool {
        self.entries.contains_key(artifact_ref)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftwareIngressOutcome {
    /// Pre-approved mirror package or image; no airlock needed.
    PreApproved { artifact_ref: String },
    Airlock(SoftwareIngressRequest),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_input_order() {
        let a = volume_digest([("b.csv", b"2".as_slice()), ("a.csv", b"1".as_slice())]);
        let b = volume_digest([("a.csv", b"1".as_slice()), ("b.csv", b"2".as_slice())]);
        assert_eq!(a, b);
    }

    #[test]
    fn digest_framing_separates_path_and_content() {
        // Without length prefixes these two volumes would hash identically.
        let a = volume_digest([("ab", b"c".as_slice())]);
        let b = volume_digest([("a", b"bc".as_slice())]);
        assert_ne!(a, b);
    }

    #[test]
    fn empty_volume_digest_is_hash_of_nothing() {
        assert_eq!(volume_digest(std::iter::empty()), crate::canonical::sha256_hex(b""));
    }

    #[test]
    fn airlock_is_never_open_on_both_sides() {
        for m in [AirlockMode::External, AirlockMode::Locked, AirlockMode::Internal] {
            assert!(!(m.writable_from_outside() && m.readable_inside()));
        }
    }
}
