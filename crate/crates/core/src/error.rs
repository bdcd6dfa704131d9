use crate::audit::AuditError;
use crate::blueprint::PlanError;
use crate::classification::ClassificationError;
use crate::domain::{Role, WorkPackageState};
use crate::ids::{DatasetId, UserId, VolumeId, WorkPackageId};
use crate::lifecycle::LifecycleError;
use crate::platform::PlatformError;
use crate::store::StoreError;

pub type Result<T, E = HavenError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HavenError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{actor} may not {action}")]
    Unauthorized { actor: UserId, action: String },
    #[error("request carries no forwarded user credential")]
    MissingCredential,
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Classification(#[from] ClassificationError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),

    #[error("user {0} has not certified data-handling training")]
    UntrainedUser(UserId),
    #[error("project managers may only assign users already registered; {0} is unknown")]
    ProjectManagerCannotInvite(UserId),
    #[error("{user} cannot act as {role:?}: referees must be independent of the research team")]
    RefereeNotIndependent { user: UserId, role: Role },
    #[error("project is closed")]
    ProjectClosed,
    #[error("dataset {0} has no signed sharing agreement")]
    MissingAgreement(DatasetId),
    #[error("investigator has not authorised mounting dataset {0}")]
    MissingMountAuthorization(DatasetId),
    #[error("dataset {0} is not part of work package")]
    DatasetNotInWorkPackage(DatasetId),
    #[error("dataset {0} already has an open deposit")]
    IngressAlreadyOpen(DatasetId),
    #[error("ingress token is not valid: {0}")]
    TokenRejected(String),
    #[error("ingress tokens grant write-only access")]
    TokenWriteOnly,
    #[error("volume {0} is not open")]
    VolumeNotOpen(VolumeId),
    #[error("volume {0} is not sealed")]
    VolumeNotSealed(VolumeId),
    #[error("volume {0} has been deleted")]
    VolumeDeleted(VolumeId),
    #[error("client digest {claimed} does not match deposited content {computed}")]
    DepositDigestMismatch { claimed: String, computed: String },
    #[error("{user} is not a required classifier for {wp}")]
    IneligibleClassifier { user: UserId, wp: WorkPackageId },
    #[error("{user} already submitted for {wp}; withdraw first")]
    DuplicateSubmission { user: UserId, wp: WorkPackageId },
    #[error("work package {wp} is {state:?}; {action} is not possible")]
    WrongState { wp: WorkPackageId, state: WorkPackageState, action: String },
    #[error("egress requires an analysis script reference")]
    MissingScript,
    #[error("tier {0} outputs cannot be published directly")]
    TierTooHighToPublish(u8),
    #[error("both a provider representative and a programme manager must authorise")]
    SinglePartyAuthorization,
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("tier {0} environments install software directly")]
    AirlockNotRequired(u8),
    #[error("software ingress window is closed")]
    SoftwareWindowClosed,
    #[error("work package {0} still has an open egress")]
    OpenEgress(WorkPackageId),
    #[error("work package {0} is still live")]
    LiveWorkPackage(WorkPackageId),
    #[error("invalid request: {0}")]
    Invalid(String),
}

impl HavenError {
    pub fn not_found(kind: &'static str, id: impl ToString) -> Self {
        HavenError::NotFound { kind, id: id.to_string() }
    }

    pub fn unauthorized(actor: &UserId, action: impl Into<String>) -> Self {
        HavenError::Unauthorized { actor: actor.clone(), action: action.into() }
    }

    /// Stable machine-readable code for API and CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            HavenError::NotFound { .. } => "not_found",
            HavenError::Unauthorized { .. } => "unauthorized",
            HavenError::MissingCredential => "missing_credential",
            HavenError::Lifecycle(_) => "illegal_transition",
            HavenError::Classification(_) => "invalid_classification",
            HavenError::Plan(_) => "plan_error",
            HavenError::Platform(_) => "platform_error",
            HavenError::Store(StoreError::VersionConflict { .. }) => "version_conflict",
            HavenError::Store(_) => "storage_error",
            HavenError::Audit(_) => "audit_error",
            HavenError::AccessDenied(_) => "access_denied",
            HavenError::Invalid(_) => "invalid_request",
            _ => "precondition_failed",
        }
    }
}
