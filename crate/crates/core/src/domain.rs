//! Entities and roles of the research-project model, with their invariants.
//!
//! All types here are plain values. Mutation happens through the service
//! layer, which persists them in the versioned store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{
    DatasetId, EnvironmentId, PlatformId, ProjectId, ProviderId, UserId, VolumeId, WorkPackageId,
};

/// Sensitivity tier, 0 (open) to 4 (most sensitive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Tier(u8);

impl Tier {
    pub const T0: Tier = Tier(0);
    pub const T1: Tier = Tier(1);
    pub const T2: Tier = Tier(2);
    pub const T3: Tier = Tier(3);
    pub const T4: Tier = Tier(4);
    pub const ALL: [Tier; 5] = [Tier::T0, Tier::T1, Tier::T2, Tier::T3, Tier::T4];

    pub fn new(level: u8) -> Result<Self, TierOutOfRange> {
        if level <= 4 {
            Ok(Tier(level))
        } else {
            Err(TierOutOfRange(level))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tier {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("tier level {0} violates level ∈ {{0..4}}")]
pub struct TierOutOfRange(pub u8);

impl TryFrom<u8> for Tier {
    type Error = TierOutOfRange;
    fn try_from(level: u8) -> Result<Self, Self::Error> {
        Tier::new(level)
    }
}

impl From<Tier> for u8 {
    fn from(t: Tier) -> u8 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Researcher,
    Investigator,
    Referee,
    DatasetProviderRepresentative,
    ProgrammeManager,
    ProjectManager,
    SystemManager,
}

impl Role {
    /// Roles held system-wide rather than per project.
    pub fn is_global(self) -> bool {
        matches!(self, Role::ProgrammeManager | Role::SystemManager)
    }

    /// Roles that make a user part of a project's research team.
    pub fn is_research_team(self) -> bool {
        matches!(self, Role::Researcher | Role::Investigator)
    }
}

/// Reference into the secure document store (signed agreements, DPIAs, approvals).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocRef(pub String);

impl DocRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub display_name: String,
    pub training_certified: bool,
    /// Identity in the upstream directory; credentials themselves are never stored.
    pub directory_credential_ref: String,
    /// System-wide roles (Programme Manager, System Manager).
    pub global_roles: BTreeSet<Role>,
    /// Provider representatives may sign in through a guest mechanism.
    pub guest: bool,
}

impl User {
    pub fn has_global(&self, role: Role) -> bool {
        self.global_roles.contains(&role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetProvider {
    pub id: ProviderId,
    pub name: String,
    pub representative_user_id: UserId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: DatasetId,
    pub provider_id: ProviderId,
    pub name: String,
    pub sharing_agreement_doc_ref: Option<DocRef>,
    /// Digest the provider computed over the dataset before deposit.
    pub provider_hash: Option<String>,
    /// Representative certified permission to share (and the lawful basis for personal data).
    pub lawful_basis_certified: bool,
    pub contractual_terms: String,
    pub personal_data: bool,
}

/// Label for an output agreed at classification time (e.g. "summary-statistic:mean-age").
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutputDescriptor(pub String);

/// Where a derived work package came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub source_work_package_id: WorkPackageId,
    pub source_environment_id: EnvironmentId,
    pub analysis_script_ref: DocRef,
    pub output_volume_id: VolumeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WorkPackageState {
    Draft,
    InitialClassified,
    IngressedTier3,
    FullClassification,
    ConsensusReached,
    Active,
    EgressPending,
    Superseded,
    Closed,
}

impl WorkPackageState {
    pub const ALL: [WorkPackageState; 9] = [
        WorkPackageState::Draft,
        WorkPackageState::InitialClassified,
        WorkPackageState::IngressedTier3,
        WorkPackageState::FullClassification,
        WorkPackageState::ConsensusReached,
        WorkPackageState::Active,
        WorkPackageState::EgressPending,
        WorkPackageState::Superseded,
        WorkPackageState::Closed,
    ];

    pub fn is_pre_active(self) -> bool {
        matches!(
            self,
            WorkPackageState::Draft
                | WorkPackageState::InitialClassified
                | WorkPackageState::IngressedTier3
                | WorkPackageState::FullClassification
                | WorkPackageState::ConsensusReached
        )
    }

    /// States in which a final tier has been agreed.
    pub fn has_final_tier(self) -> bool {
        matches!(
            self,
            WorkPackageState::ConsensusReached
                | WorkPackageState::Active
                | WorkPackageState::EgressPending
                | WorkPackageState::Superseded
                | WorkPackageState::Closed
        )
    }
}

/// Preliminary tier agreed in initial conversations, at or above the true tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialClassification {
    pub provisional_tier: Tier,
    pub anonymised_personal_data: bool,
}

/// How a derived work package is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassificationRoute {
    /// Investigator, every provider representative, Referee when required.
    Full,
    /// Output matches a pre-approved descriptor: Investigator and Referee only.
    PreApproved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkPackage {
    pub id: WorkPackageId,
    pub project_id: ProjectId,
    pub dataset_ids: BTreeSet<DatasetId>,
    pub intended_analysis: String,
    pub expected_outputs: String,
    pub intended_tools: String,
    /// Datasets the team declared it may combine later.
    pub planned_combinations: BTreeSet<DatasetId>,
    pub derived_from: Option<Lineage>,
    pub supersedes: Option<WorkPackageId>,
    pub superseded_by: Option<WorkPackageId>,
    pub pre_approved_outputs: Vec<OutputDescriptor>,
    pub initial: Option<InitialClassification>,
    pub final_tier: Option<Tier>,
    pub state: WorkPackageState,
    /// Set by a Tier 4 halt; cleared only by a Programme Manager.
    pub halted: bool,
    pub tier4_acknowledged: bool,
    pub route: ClassificationRoute,
    pub dpia_ref: Option<DocRef>,
    pub ethics_approval_ref: Option<DocRef>,
    /// Datasets whose initial-environment mount the Investigator authorised.
    pub mount_authorizations: BTreeSet<DatasetId>,
    pub environment_ids: Vec<EnvironmentId>,
    /// Derived work package awaiting classification while in `EgressPending`.
    pub pending_egress: Option<WorkPackageId>,
}

impl WorkPackage {
    pub fn draft(id: WorkPackageId, project_id: ProjectId, dataset_ids: BTreeSet<DatasetId>) -> Self {
        WorkPackage {
            id,
            project_id,
            dataset_ids,
            intended_analysis: String::new(),
            expected_outputs: String::new(),
            intended_tools: String::new(),
            planned_combinations: BTreeSet::new(),
            derived_from: None,
            supersedes: None,
            superseded_by: None,
            pre_approved_outputs: Vec::new(),
            initial: None,
            final_tier: None,
            state: WorkPackageState::Draft,
            halted: false,
            tier4_acknowledged: false,
            route: ClassificationRoute::Full,
            dpia_ref: None,
            ethics_approval_ref: None,
            mount_authorizations: BTreeSet::new(),
            environment_ids: Vec::new(),
            pending_egress: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MembershipStatus {
    PendingCounterApproval,
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub user_id: UserId,
    pub role: Role,
    pub status: MembershipStatus,
    pub counter_approvals_required: BTreeSet<ProviderId>,
    pub counter_approved_by: BTreeSet<ProviderId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectState {
    Active,
    Closed,
}

/// Kept on a closed project after its storage is gone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureRecord {
    pub closed_at: crate::clock::Timestamp,
    pub environment_ids: Vec<EnvironmentId>,
    pub volume_ids: Vec<VolumeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    pub name: String,
    pub programme_manager_id: UserId,
    pub project_manager_id: UserId,
    pub investigator_id: UserId,
    pub members: Vec<Membership>,
    pub state: ProjectState,
    pub work_package_ids: Vec<WorkPackageId>,
    pub closure: Option<ClosureRecord>,
}

impl Project {
    /// Active roles of a user on this project, including the named posts.
    pub fn roles_of(&self, user: &UserId) -> BTreeSet<Role> {
        let mut roles: BTreeSet<Role> = self
            .members
            .iter()
            .filter(|m| &m.user_id == user && m.status == MembershipStatus::Active)
            .map(|m| m.role)
            .collect();
        if &self.investigator_id == user {
            roles.insert(Role::Investigator);
        }
        if &self.project_manager_id == user {
            roles.insert(Role::ProjectManager);
        }
        roles
    }

    pub fn is_research_team_member(&self, user: &UserId) -> bool {
        &self.investigator_id == user
            || self
                .members
                .iter()
                .any(|m| &m.user_id == user && m.status == MembershipStatus::Active && m.role.is_research_team())
    }

    /// Active member user ids.
    pub fn member_ids(&self) -> BTreeSet<UserId> {
        self.members
            .iter()
            .filter(|m| m.status == MembershipStatus::Active)
            .map(|m| m.user_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvironmentState {
    Requested,
    Provisioned,
    Active,
    Decommissioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvironmentPurpose {
    /// Tier 3 environment used for the initial deposit, before full classification.
    InitialIngress,
    Analysis,
    /// Built over a sealed output volume of another environment.
    Derived,
    /// Tier 0/1 environment from which outputs are copied out.
    Publication,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub id: EnvironmentId,
    pub work_package_id: WorkPackageId,
    pub project_id: ProjectId,
    pub tier: Tier,
    pub platform_id: PlatformId,
    pub purpose: EnvironmentPurpose,
    pub state: EnvironmentState,
    /// Digest of the canonical blueprint document.
    pub blueprint_ref: String,
    pub volume_ids: Vec<VolumeId>,
    pub derived_from_environment_id: Option<EnvironmentId>,
    /// Software installed while the machine had no data access.
    pub deployment_software: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VolumeKind {
    SecureData,
    SecureDocument,
    SecureScratch,
    Output,
    Software,
    Home,
    SoftwareIngress,
}

impl VolumeKind {
    pub const ALL: [VolumeKind; 7] = [
        VolumeKind::SecureData,
        VolumeKind::SecureDocument,
        VolumeKind::SecureScratch,
        VolumeKind::Output,
        VolumeKind::Software,
        VolumeKind::Home,
        VolumeKind::SoftwareIngress,
    ];

    /// Modes this kind may take while mounted in an environment.
    pub fn mounted_modes(self) -> &'static [VolumeMode] {
        match self {
            VolumeKind::SecureData | VolumeKind::Software | VolumeKind::SecureDocument => {
                &[VolumeMode::ReadOnly]
            }
            VolumeKind::SecureScratch | VolumeKind::Output | VolumeKind::Home => &[VolumeMode::ReadWrite],
            VolumeKind::SoftwareIngress => &[VolumeMode::WriteOnly, VolumeMode::ReadOnly],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VolumeMode {
    ReadOnly,
    ReadWrite,
    WriteOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeState {
    Open,
    Sealed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Volume {
    pub id: VolumeId,
    pub project_id: ProjectId,
    pub kind: VolumeKind,
    pub mode: VolumeMode,
    /// Set while mounted in an environment.
    pub environment_id: Option<EnvironmentId>,
    pub dataset_id: Option<DatasetId>,
    pub state: VolumeState,
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub invariant: String,
}

/// Empty iff every checked invariant holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, entity: impl fmt::Display, invariant: impl Into<String>) {
        self.violations.push(Violation { entity: entity.to_string(), invariant: invariant.into() });
    }

    fn check(&mut self, ok: bool, entity: impl fmt::Display, invariant: &str) {
        if !ok {
            self.push(entity, invariant);
        }
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.invariant.contains(needle))
    }
}

/// Any domain entity, for uniform validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body")]
pub enum Entity {
    Tier(Tier),
    User(User),
    DatasetProvider(DatasetProvider),
    Dataset(Dataset),
    WorkPackage(WorkPackage),
    Project(Project),
    Environment(Environment),
    Volume(Volume),
}

fn is_hex_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Checks the per-entity invariants. Total and side-effect free.
pub fn validate_entity(entity: &Entity) -> ValidationReport {
    let mut r = ValidationReport::default();
    match entity {
        Entity::Tier(t) => r.check(t.level() <= 4, t, "level ∈ {0..4}"),
        Entity::User(u) => {
            r.check(!u.id.as_str().is_empty(), "user", "id must be non-empty");
            r.check(
                u.global_roles.iter().all(|g| g.is_global()),
                &u.id,
                "global roles limited to ProgrammeManager and SystemManager",
            );
        }
        Entity::DatasetProvider(p) => {
            r.check(
                !p.representative_user_id.as_str().is_empty(),
                &p.id,
                "exactly one representative per provider",
            );
        }
        Entity::Dataset(d) => {
            if let Some(h) = &d.provider_hash {
                r.check(is_hex_digest(h), &d.id, "provider_hash must be a lowercase hex SHA-256 digest");
            }
        }
        Entity::WorkPackage(wp) => {
            r.check(!wp.dataset_ids.is_empty(), &wp.id, "dataset_ids must be a non-empty set");
            r.check(
                wp.final_tier.is_some() == wp.state.has_final_tier(),
                &wp.id,
                "final_tier is set only after consensus is recorded",
            );
            r.check(!wp.halted || wp.state == WorkPackageState::Draft, &wp.id, "halted packages are in Draft");
            r.check(
                wp.pending_egress.is_some() == (wp.state == WorkPackageState::EgressPending),
                &wp.id,
                "pending_egress is set iff state is EgressPending",
            );
            r.check(
                wp.derived_from.is_none() || wp.supersedes.is_none(),
                &wp.id,
                "a package is either derived by egress or supersedes another, not both",
            );
            r.check(
                wp.route == ClassificationRoute::Full || wp.derived_from.is_some(),
                &wp.id,
                "pre-approved classification applies only to derived packages",
            );
            r.check(
                wp.superseded_by.is_some() == (wp.state == WorkPackageState::Superseded)
                    || wp.state == WorkPackageState::Closed,
                &wp.id,
                "superseded_by is set iff state is Superseded",
            );
        }
        Entity::Project(p) => {
            r.check(!p.investigator_id.as_str().is_empty(), &p.id, "exactly one Investigator per project");
            r.check(
                (p.state == ProjectState::Closed) == p.closure.is_some(),
                &p.id,
                "closed projects carry a closure record",
            );
            for m in p.members.iter().filter(|m| m.role == Role::Referee) {
                r.check(
                    !p.is_research_team_member(&m.user_id),
                    &p.id,
                    "Referee must not be a member of the project's research team",
                );
            }
            r.check(
                p.members.iter().all(|m| !m.role.is_global()),
                &p.id,
                "project memberships cannot grant global roles",
            );
        }
        Entity::Environment(e) => {
            r.check(
                e.purpose != EnvironmentPurpose::InitialIngress || e.tier == Tier::T3,
                &e.id,
                "initial ingress environments are Tier 3",
            );
            r.check(
                e.purpose != EnvironmentPurpose::Publication || e.tier <= Tier::T1,
                &e.id,
                "publication environments are Tier 0 or 1",
            );
            r.check(
                e.purpose != EnvironmentPurpose::Derived || e.derived_from_environment_id.is_some(),
                &e.id,
                "derived environments record their source environment",
            );
        }
        Entity::Volume(v) => {
            if v.environment_id.is_some() && v.state != VolumeState::Deleted {
                let allowed = v.kind.mounted_modes();
                if !allowed.contains(&v.mode) {
                    let rule = match v.kind {
                        VolumeKind::SecureData | VolumeKind::Software | VolumeKind::SecureDocument => {
                            format!("{:?} volumes are mounted read-only", v.kind)
                        }
                        VolumeKind::SoftwareIngress => {
                            "SoftwareIngress alternates WriteOnly (external) and ReadOnly (internal)".into()
                        }
                        _ => format!("{:?} volumes are mounted read-write", v.kind),
                    };
                    r.push(&v.id, rule);
                }
            }
            r.check(
                v.dataset_id.is_none() || v.kind == VolumeKind::SecureData,
                &v.id,
                "only SecureData volumes reference a dataset",
            );
        }
    }
    r
}

/// Validates an entity arriving as a JSON document, reporting decode failures
/// (such as an out-of-range tier) as violations.
pub fn validate_document(doc: &serde_json::Value) -> ValidationReport {
    match serde_json::from_value::<Entity>(doc.clone()) {
        Ok(entity) => validate_entity(&entity),
        Err(err) => {
            let kind = doc.get("kind").and_then(|k| k.as_str()).unwrap_or("unknown");
            let mut r = ValidationReport::default();
            r.push(kind, err.to_string());
            r
        }
    }
}

/// Every stored entity at one point in time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub users: BTreeMap<UserId, User>,
    pub providers: BTreeMap<ProviderId, DatasetProvider>,
    pub datasets: BTreeMap<DatasetId, Dataset>,
    pub projects: BTreeMap<ProjectId, Project>,
    pub work_packages: BTreeMap<WorkPackageId, WorkPackage>,
    pub environments: BTreeMap<EnvironmentId, Environment>,
    pub volumes: BTreeMap<VolumeId, Volume>,
}

/// Per-entity invariants for everything in the snapshot, plus referential
/// integrity and the invariants that span entities.
pub fn validate_snapshot(s: &Snapshot) -> ValidationReport {
    let mut r = ValidationReport::default();
    let entities = s
        .users
        .values()
        .map(|e| Entity::User(e.clone()))
        .chain(s.providers.values().map(|e| Entity::DatasetProvider(e.clone())))
        .chain(s.datasets.values().map(|e| Entity::Dataset(e.clone())))
        .chain(s.projects.values().map(|e| Entity::Project(e.clone())))
        .chain(s.work_packages.values().map(|e| Entity::WorkPackage(e.clone())))
        .chain(s.environments.values().map(|e| Entity::Environment(e.clone())))
        .chain(s.volumes.values().map(|e| Entity::Volume(e.clone())));
    for e in entities {
        r.violations.extend(validate_entity(&e).violations);
    }

    let user = |id: &UserId| s.users.contains_key(id);
    for p in s.providers.values() {
        r.check(user(&p.representative_user_id), &p.id, "representative references a known user");
    }
    for d in s.datasets.values() {
        r.check(s.providers.contains_key(&d.provider_id), &d.id, "provider references a known provider");
    }
    for p in s.projects.values() {
        for u in [&p.programme_manager_id, &p.project_manager_id, &p.investigator_id] {
            r.check(user(u), &p.id, "named post references a known user");
        }
        for m in &p.members {
            r.check(user(&m.user_id), &p.id, "member references a known user");
            if m.status == MembershipStatus::Active && m.role != Role::DatasetProviderRepresentative {
                if let Some(u) = s.users.get(&m.user_id) {
                    r.check(u.training_certified, &p.id, "active members are training certified");
                }
            }
        }
        for w in &p.work_package_ids {
            r.check(s.work_packages.contains_key(w), &p.id, "work package references resolve");
        }
        if p.state == ProjectState::Closed {
            let live = s
                .volumes
                .values()
                .any(|v| v.project_id == p.id && v.state != VolumeState::Deleted);
            r.check(!live, &p.id, "closed projects own no live storage volumes");
        }
    }
    for wp in s.work_packages.values() {
        r.check(s.projects.contains_key(&wp.project_id), &wp.id, "project reference resolves");
        for d in wp.dataset_ids.iter().chain(&wp.planned_combinations) {
            r.check(s.datasets.contains_key(d), &wp.id, "dataset references resolve");
        }
        for e in &wp.environment_ids {
            r.check(s.environments.contains_key(e), &wp.id, "environment references resolve");
        }
        for w in wp.supersedes.iter().chain(&wp.superseded_by).chain(&wp.pending_egress) {
            r.check(s.work_packages.contains_key(w), &wp.id, "work package references resolve");
        }
        if let Some(l) = &wp.derived_from {
            r.check(s.work_packages.contains_key(&l.source_work_package_id), &wp.id, "lineage resolves");
            r.check(s.environments.contains_key(&l.source_environment_id), &wp.id, "lineage resolves");
        }
        if wp.state == WorkPackageState::Active {
            let personal = wp
                .dataset_ids
                .iter()
                .filter_map(|d| s.datasets.get(d))
                .any(|d| d.personal_data);
            r.check(
                !personal || wp.dpia_ref.is_some(),
                &wp.id,
                "dpia_ref must be set before a personal-data package is Active",
            );
        }
    }
    for e in s.environments.values() {
        r.check(s.work_packages.contains_key(&e.work_package_id), &e.id, "work package reference resolves");
        for v in &e.volume_ids {
            r.check(s.volumes.contains_key(v), &e.id, "volume references resolve");
        }
        if let Some(src) = &e.derived_from_environment_id {
            r.check(s.environments.contains_key(src), &e.id, "source environment resolves");
        }
        if e.purpose == EnvironmentPurpose::Analysis {
            if let Some(wp) = s.work_packages.get(&e.work_package_id) {
                r.check(
                    wp.final_tier.is_none_or(|t| t == e.tier),
                    &e.id,
                    "environment tier equals the work package's agreed tier",
                );
            }
        }
    }
    for v in s.volumes.values() {
        if let Some(env) = &v.environment_id {
            r.check(s.environments.contains_key(env), &v.id, "environment reference resolves");
        }
        if let Some(d) = &v.dataset_id {
            match s.datasets.get(d) {
                Some(ds) => r.check(
                    ds.sharing_agreement_doc_ref.is_some(),
                    &v.id,
                    "sharing agreement stored before ingress",
                ),
                None => r.push(&v.id, "dataset reference resolves"),
            }
        }
    }
    r
}
