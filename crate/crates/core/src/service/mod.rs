//! The governance service.
//!
//! [`Haven`] owns the entity store, the audit log, the clock, the platform
//! driver and the alert notifier. Every mutating operation is authorised,
//! writes through compare-and-swap, and appends one audit event per
//! entity version it creates. Platform calls always use the acting user's
//! forwarded credential.

mod egress;
mod ingress;
mod software;
mod workflow;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, AuditLog, NewEvent};
use crate::canonical;
use crate::classification::{ClassifierSlot, ConsensusOutcome, TierDecision};
use crate::clock::{Clock, Timestamp};
use crate::config::HavenConfig;
use crate::domain::*;
use crate::error::{HavenError, Result};
use crate::ids::*;
use crate::ingress::*;
use crate::platform::{ForwardedCredential, PlatformDriver};
use crate::store::{EntityRef, KvBackend, MemoryKv, Store, Stored, VersionedRecord, ENTITY_PREFIX};

pub use egress::EgressSpec;
pub use workflow::{ClassificationStatus, DocumentKind, WorkPackageIntent};

/// Actor id used by background jobs (re-verification, expiry).
pub const SCHEDULER_ACTOR: &str = "svc-scheduler";

macro_rules! stored {
    ($t:ty, $kind:literal, |$s:ident| $id:expr) => {
        impl Stored for $t {
            const KIND: &'static str = $kind;
            fn store_id(&self) -> String {
                let $s = self;
                $id.to_string()
            }
        }
    };
}

stored!(User, "user", |s| s.id);
stored!(DatasetProvider, "provider", |s| s.id);
stored!(Dataset, "dataset", |s| s.id);
stored!(Project, "project", |s| s.id);
stored!(WorkPackage, "work_package", |s| s.id);
stored!(Environment, "environment", |s| s.id);
stored!(Volume, "volume", |s| s.id);
stored!(DecisionRecord, "tier_decision", |s| decision_key(&s.decision.work_package_id, &s.decision.classifier_user_id));
stored!(ConsensusRecord, "consensus", |s| s.work_package_id);
stored!(IngressToken, "ingress_token", |s| s.token_id);
stored!(IntegrityState, "integrity_state", |s| s.volume_id);
stored!(StoredIntegrityRecord, "integrity_record", |s| s.id);
stored!(EgressRequest, "egress_request", |s| s.derived_work_package_id);
stored!(ReleaseAuthorization, "release_authorization", |s| s.work_package_id);
stored!(ExceptionalRelease, "exceptional_release", |s| s.id);
stored!(SoftwareIngressRequest, "software_request", |s| s.id);
stored!(PreApprovalRegistry, "pre_approval", |_s| PreApprovalRegistry::ID);

pub(crate) fn decision_key(wp: &WorkPackageId, user: &UserId) -> String {
    format!("{wp}:{user}")
}

/// A submitted decision; withdrawn ones are kept for the record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision: TierDecision,
    pub withdrawn: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub work_package_id: WorkPackageId,
    pub outcome: ConsensusOutcome,
    pub required: BTreeSet<ClassifierSlot>,
    pub proceed_without_consensus: bool,
    pub recorded_by: UserId,
    pub recorded_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredIntegrityRecord {
    pub id: String,
    pub record: IntegrityRecord,
}

/// Whoever is calling, with their forwarded credential when they have one.
#[derive(Debug, Clone)]
pub struct Actor {
    pub user_id: UserId,
    pub credential: Option<ForwardedCredential>,
}

impl Actor {
    pub fn new(user_id: impl Into<UserId>) -> Self {
        Actor { user_id: user_id.into(), credential: None }
    }

    pub fn with_credential(mut self, credential: ForwardedCredential) -> Self {
        self.credential = Some(credential);
        self
    }

    /// The credential to forward to the platform; it must belong to this actor.
    pub fn credential(&self) -> Result<&ForwardedCredential> {
        match &self.credential {
            Some(c) if c.subject() == &self.user_id => Ok(c),
            _ => Err(HavenError::MissingCredential),
        }
    }
}

impl From<&str> for Actor {
    fn from(s: &str) -> Self {
        Actor::new(UserId::new(s))
    }
}

#[derive(Clone)]
pub struct Haven {
    store: Store,
    audit: AuditLog,
    clock: Arc<dyn Clock>,
    platform: Arc<dyn PlatformDriver>,
    notifier: Arc<dyn Notifier>,
    config: HavenConfig,
    op_lock: Arc<Mutex<()>>,
}

impl Haven {
    pub fn new(
        kv: Arc<dyn KvBackend>,
        clock: Arc<dyn Clock>,
        platform: Arc<dyn PlatformDriver>,
        notifier: Arc<dyn Notifier>,
        config: HavenConfig,
    ) -> Result<Self> {
        config.validate().map_err(HavenError::Invalid)?;
        Ok(Haven {
            store: Store::new(kv.clone()),
            audit: AuditLog::new(kv),
            clock,
            platform,
            notifier,
            config,
            op_lock: Arc::new(Mutex::new(())),
        })
    }

    pub fn in_memory(clock: Arc<dyn Clock>, platform: Arc<dyn PlatformDriver>, notifier: Arc<dyn Notifier>) -> Self {
        Self::new(Arc::new(MemoryKv::new()), clock, platform, notifier, HavenConfig::default())
            .expect("default config is valid")
    }

    /// Deep copy of all state over a different platform, when the backend can fork.
    pub fn fork(&self, platform: Arc<dyn PlatformDriver>) -> Option<Haven> {
        let kv = self.store.backend().fork()?;
        Some(Haven {
            store: Store::new(kv.clone()),
            audit: AuditLog::new(kv),
            clock: self.clock.clone(),
            platform,
            notifier: self.notifier.clone(),
            config: self.config.clone(),
            op_lock: Arc::new(Mutex::new(())),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn config(&self) -> &HavenConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Digest of every entity and volume file; equal digests mean equal state.
    pub fn state_fingerprint(&self) -> Result<String> {
        let mut h = Vec::new();
        for prefix in [ENTITY_PREFIX, CONTENT_PREFIX] {
            for (k, v) in self.store.backend().scan_prefix(prefix)? {
                h.extend_from_slice(k.as_bytes());
                h.push(0);
                h.extend_from_slice(&v);
                h.push(0);
            }
        }
        Ok(canonical::sha256_hex(&h))
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        fn map<T: Stored, K: Ord>(s: &Store, key: impl Fn(&T) -> K) -> Result<std::collections::BTreeMap<K, T>> {
            Ok(s.list::<T>()?.into_iter().map(|(v, _)| (key(&v), v)).collect())
        }
        Ok(Snapshot {
            users: map(&self.store, |u: &User| u.id.clone())?,
            providers: map(&self.store, |p: &DatasetProvider| p.id.clone())?,
            datasets: map(&self.store, |d: &Dataset| d.id.clone())?,
            projects: map(&self.store, |p: &Project| p.id.clone())?,
            work_packages: map(&self.store, |w: &WorkPackage| w.id.clone())?,
            environments: map(&self.store, |e: &Environment| e.id.clone())?,
            volumes: map(&self.store, |v: &Volume| v.id.clone())?,
        })
    }

    // -- plumbing ------------------------------------------------------------

    fn exclusive(&self) -> MutexGuard<'_, ()> {
        self.op_lock.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn next_id<I>(&self, make: fn(u64) -> I) -> Result<I> {
        Ok(make(self.store.next_sequence()?))
    }

    fn load<T: Stored>(&self, id: &str) -> Result<(T, u64)> {
        self.store.get::<T>(id)?.ok_or_else(|| HavenError::not_found(T::KIND, id))
    }

    fn find<T: Stored>(&self, id: &str) -> Result<Option<(T, u64)>> {
        Ok(self.store.get::<T>(id)?)
    }

    fn list<T: Stored>(&self) -> Result<Vec<T>> {
        Ok(self.store.list::<T>()?.into_iter().map(|(v, _)| v).collect())
    }

    fn append(&self, actor: &str, action: &str, entity_ref: EntityRef, payload: &impl Serialize) -> Result<AuditEvent> {
        Ok(self.audit.append(NewEvent {
            actor_id: actor.to_owned(),
            action: action.to_owned(),
            entity_ref,
            payload_digest: canonical::digest(payload),
            timestamp: self.clock.now(),
        })?)
    }

    /// Writes an entity and appends the audit event for the new version.
    fn save<T: Stored>(&self, actor: &str, action: &str, entity: &T, expected_version: u64) -> Result<VersionedRecord> {
        let rec = self.store.put(entity, expected_version)?;
        self.append(actor, action, rec.entity_ref.clone(), &rec.body)?;
        Ok(rec)
    }

    fn user(&self, id: &UserId) -> Result<User> {
        Ok(self.load::<User>(id.as_str())?.0)
    }

    fn is_programme_manager(&self, id: &UserId) -> Result<bool> {
        Ok(self.find::<User>(id.as_str())?.is_some_and(|(u, _)| u.has_global(Role::ProgrammeManager)))
    }

    fn require_programme_manager(&self, actor: &Actor, action: &str) -> Result<()> {
        if self.is_programme_manager(&actor.user_id)? {
            Ok(())
        } else {
            Err(HavenError::unauthorized(&actor.user_id, action))
        }
    }

    fn live_project(&self, id: &ProjectId) -> Result<(Project, u64)> {
        let (p, v) = self.load::<Project>(id.as_str())?;
        if p.state == ProjectState::Closed {
            return Err(HavenError::ProjectClosed);
        }
        Ok((p, v))
    }

    fn providers_of(&self, datasets: &BTreeSet<DatasetId>) -> Result<BTreeSet<ProviderId>> {
        datasets
            .iter()
            .map(|d| Ok(self.load::<Dataset>(d.as_str())?.0.provider_id))
            .collect()
    }

    /// Project roles, global roles, and representative status for the package's providers.
    fn roles_on(&self, user: &UserId, project: &Project, wp: Option<&WorkPackage>) -> Result<BTreeSet<Role>> {
        let mut roles = project.roles_of(user);
        if let Some((u, _)) = self.find::<User>(user.as_str())? {
            roles.extend(u.global_roles.iter().copied());
        }
        if let Some(wp) = wp {
            for p in self.providers_of(&wp.dataset_ids)? {
                if &self.load::<DatasetProvider>(p.as_str())?.0.representative_user_id == user {
                    roles.insert(Role::DatasetProviderRepresentative);
                }
            }
        }
        Ok(roles)
    }

    fn require_role(&self, actor: &Actor, roles: &BTreeSet<Role>, allowed: &[Role], action: &str) -> Result<()> {
        if allowed.iter().any(|r| roles.contains(r)) {
            Ok(())
        } else {
            Err(HavenError::unauthorized(&actor.user_id, action))
        }
    }

    // -- users, providers, datasets, projects ---------------------------------

    /// Registers the first Programme Manager of an empty deployment.
    pub fn bootstrap(&self, display_name: &str, directory_credential_ref: &str) -> Result<User> {
        let _g = self.exclusive();
        if !self.list::<User>()?.is_empty() {
            return Err(HavenError::Invalid("deployment already has users".into()));
        }
        let user = User {
            id: self.next_id(UserId::from_sequence)?,
            display_name: display_name.into(),
            training_certified: true,
            directory_credential_ref: directory_credential_ref.into(),
            global_roles: [Role::ProgrammeManager].into(),
            guest: false,
        };
        self.save(user.id.as_str(), "user.bootstrap", &user, 0)?;
        Ok(user)
    }

    /// Programme Managers invite users who are new to the system.
    pub fn invite_user(&self, actor: &Actor, display_name: &str, directory_credential_ref: &str, guest: bool) -> Result<User> {
        let _g = self.exclusive();
        self.require_programme_manager(actor, "invite users")?;
        let user = User {
            id: self.next_id(UserId::from_sequence)?,
            display_name: display_name.into(),
            training_certified: false,
            directory_credential_ref: directory_credential_ref.into(),
            global_roles: BTreeSet::new(),
            guest,
        };
        self.save(actor.user_id.as_str(), "user.invite", &user, 0)?;
        Ok(user)
    }

    /// A user certifies that they completed data-handling training.
    pub fn certify_training(&self, actor: &Actor) -> Result<User> {
        let _g = self.exclusive();
        let (mut u, v) = self.load::<User>(actor.user_id.as_str())?;
        u.training_certified = true;
        self.save(actor.user_id.as_str(), "user.certify_training", &u, v)?;
        Ok(u)
    }

    pub fn grant_global_role(&self, actor: &Actor, user: &UserId, role: Role) -> Result<User> {
        let _g = self.exclusive();
        self.require_programme_manager(actor, "grant global roles")?;
        if !role.is_global() {
            return Err(HavenError::Invalid(format!("{role:?} is a per-project role")));
        }
        let (mut u, v) = self.load::<User>(user.as_str())?;
        u.global_roles.insert(role);
        self.save(actor.user_id.as_str(), "user.grant_role", &u, v)?;
        Ok(u)
    }

    pub fn register_provider(&self, actor: &Actor, name: &str, representative: &UserId) -> Result<DatasetProvider> {
        let _g = self.exclusive();
        self.require_programme_manager(actor, "register providers")?;
        self.user(representative)?;
        let p = DatasetProvider {
            id: self.next_id(ProviderId::from_sequence)?,
            name: name.into(),
            representative_user_id: representative.clone(),
        };
        self.save(actor.user_id.as_str(), "provider.register", &p, 0)?;
        Ok(p)
    }

    /// Replaces the provider's single representative.
    pub fn change_representative(&self, actor: &Actor, provider: &ProviderId, representative: &UserId) -> Result<DatasetProvider> {
        let _g = self.exclusive();
        self.require_programme_manager(actor, "change provider representatives")?;
        self.user(representative)?;
        let (mut p, v) = self.load::<DatasetProvider>(provider.as_str())?;
        p.representative_user_id = representative.clone();
        self.save(actor.user_id.as_str(), "provider.change_representative", &p, v)?;
        Ok(p)
    }

    pub fn register_dataset(
        &self,
        actor: &Actor,
        provider: &ProviderId,
        name: &str,
        personal_data: bool,
        contractual_terms: &str,
        provider_hash: Option<String>,
    ) -> Result<Dataset> {
        let _g = self.exclusive();
        let (p, _) = self.load::<DatasetProvider>(provider.as_str())?;
        if p.representative_user_id != actor.user_id && !self.is_programme_manager(&actor.user_id)? {
            return Err(HavenError::unauthorized(&actor.user_id, "register datasets for this provider"));
        }
        let d = Dataset {
            id: self.next_id(DatasetId::from_sequence)?,
            provider_id: provider.clone(),
            name: name.into(),
            sharing_agreement_doc_ref: None,
            provider_hash: provider_hash.map(|h| h.to_ascii_lowercase()),
            lawful_basis_certified: false,
            contractual_terms: contractual_terms.into(),
            personal_data,
        };
        let report = validate_entity(&Entity::Dataset(d.clone()));
        if !report.is_empty() {
            return Err(HavenError::Invalid(format!("{:?}", report.violations)));
        }
        self.save(actor.user_id.as_str(), "dataset.register", &d, 0)?;
        Ok(d)
    }

    /// The provider's representative records the signed sharing agreement.
    pub fn sign_agreement(&self, actor: &Actor, dataset: &DatasetId, doc: DocRef, lawful_basis_certified: bool) -> Result<Dataset> {
        let _g = self.exclusive();
        let (mut d, v) = self.load::<Dataset>(dataset.as_str())?;
        let (p, _) = self.load::<DatasetProvider>(d.provider_id.as_str())?;
        if p.representative_user_id != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "sign this provider's agreement"));
        }
        d.sharing_agreement_doc_ref = Some(doc);
        d.lawful_basis_certified = lawful_basis_certified;
        self.save(actor.user_id.as_str(), "dataset.sign_agreement", &d, v)?;
        Ok(d)
    }

    pub fn create_project(&self, actor: &Actor, name: &str, project_manager: &UserId, investigator: &UserId) -> Result<Project> {
        let _g = self.exclusive();
        self.require_programme_manager(actor, "create projects")?;
        for u in [project_manager, investigator] {
            if !self.user(u)?.training_certified {
                return Err(HavenError::UntrainedUser(u.clone()));
            }
        }
        let p = Project {
            id: self.next_id(ProjectId::from_sequence)?,
            name: name.into(),
            programme_manager_id: actor.user_id.clone(),
            project_manager_id: project_manager.clone(),
            investigator_id: investigator.clone(),
            members: Vec::new(),
            state: ProjectState::Active,
            work_package_ids: Vec::new(),
            closure: None,
        };
        self.save(actor.user_id.as_str(), "project.create", &p, 0)?;
        Ok(p)
    }

    /// Adds a member. Pending provider counter-approval when the project has Tier 3+ work.
    pub fn assign_user(&self, actor: &Actor, project: &ProjectId, user: &UserId, role: Role) -> Result<Membership> {
        let _g = self.exclusive();
        let (mut p, v) = self.live_project(project)?;
        let pgm = self.is_programme_manager(&actor.user_id)?;
        if !pgm && p.project_manager_id != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "assign users"));
        }
        let Some((u, _)) = self.find::<User>(user.as_str())? else {
            return Err(if pgm { HavenError::not_found("user", user) } else { HavenError::ProjectManagerCannotInvite(user.clone()) });
        };
        if role.is_global() {
            return Err(HavenError::Invalid(format!("{role:?} is not a project role")));
        }
        if !u.training_certified {
            return Err(HavenError::UntrainedUser(user.clone()));
        }
        let referee_conflict = (role == Role::Referee && p.is_research_team_member(user))
            || (role.is_research_team() && p.members.iter().any(|m| &m.user_id == user && m.role == Role::Referee));
        if referee_conflict {
            return Err(HavenError::RefereeNotIndependent { user: user.clone(), role });
        }
        if p.members.iter().any(|m| &m.user_id == user && m.role == role) {
            return Err(HavenError::Invalid(format!("{user} already holds {role:?} on {project}")));
        }

        let mut counter = BTreeSet::new();
        for wp_id in &p.work_package_ids {
            let (wp, _) = self.load::<WorkPackage>(wp_id.as_str())?;
            let tier = wp.final_tier.or(wp.initial.map(|i| i.provisional_tier));
            let live = !matches!(wp.state, WorkPackageState::Closed | WorkPackageState::Superseded);
            if live && tier.is_some_and(|t| t >= Tier::T3) {
                counter.extend(self.providers_of(&wp.dataset_ids)?);
            }
        }
        let m = Membership {
            user_id: user.clone(),
            role,
            status: if counter.is_empty() { MembershipStatus::Active } else { MembershipStatus::PendingCounterApproval },
            counter_approvals_required: counter,
            counter_approved_by: BTreeSet::new(),
        };
        p.members.push(m.clone());
        self.save(actor.user_id.as_str(), "project.assign_user", &p, v)?;
        Ok(m)
    }

    /// A provider representative counter-approves a pending member.
    pub fn counter_approve(&self, actor: &Actor, project: &ProjectId, user: &UserId) -> Result<Membership> {
        let _g = self.exclusive();
        let (mut p, v) = self.live_project(project)?;
        let mut represented = BTreeSet::new();
        for prov in self.list::<DatasetProvider>()? {
            if prov.representative_user_id == actor.user_id {
                represented.insert(prov.id);
            }
        }
        let m = p
            .members
            .iter_mut()
            .find(|m| &m.user_id == user && m.status == MembershipStatus::PendingCounterApproval)
            .ok_or_else(|| HavenError::not_found("pending membership", user))?;
        let mine: BTreeSet<_> = m.counter_approvals_required.intersection(&represented).cloned().collect();
        if mine.is_empty() {
            return Err(HavenError::unauthorized(&actor.user_id, "counter-approve this membership"));
        }
        m.counter_approved_by.extend(mine);
        if m.counter_approvals_required.is_subset(&m.counter_approved_by) {
            m.status = MembershipStatus::Active;
        }
        let out = m.clone();
        self.save(actor.user_id.as_str(), "project.counter_approve", &p, v)?;
        Ok(out)
    }

    // -- queries ---------------------------------------------------------------

    pub fn get_user(&self, id: &UserId) -> Result<User> {
        self.user(id)
    }

    pub fn get_project(&self, id: &ProjectId) -> Result<Project> {
        Ok(self.load::<Project>(id.as_str())?.0)
    }

    pub fn get_dataset(&self, id: &DatasetId) -> Result<Dataset> {
        Ok(self.load::<Dataset>(id.as_str())?.0)
    }

    pub fn get_provider(&self, id: &ProviderId) -> Result<DatasetProvider> {
        Ok(self.load::<DatasetProvider>(id.as_str())?.0)
    }

    pub fn get_work_package(&self, id: &WorkPackageId) -> Result<WorkPackage> {
        Ok(self.load::<WorkPackage>(id.as_str())?.0)
    }

    pub fn get_environment(&self, id: &EnvironmentId) -> Result<Environment> {
        Ok(self.load::<Environment>(id.as_str())?.0)
    }

    pub fn get_volume(&self, id: &VolumeId) -> Result<Volume> {
        Ok(self.load::<Volume>(id.as_str())?.0)
    }

    pub fn list_projects(&self) -> Result<Vec<Project>> {
        self.list()
    }

    pub fn list_users(&self) -> Result<Vec<User>> {
        self.list()
    }

    pub fn list_work_packages(&self, project: &ProjectId) -> Result<Vec<WorkPackage>> {
        Ok(self.list::<WorkPackage>()?.into_iter().filter(|w| &w.project_id == project).collect())
    }

    pub fn consensus_record(&self, wp: &WorkPackageId) -> Result<Option<ConsensusRecord>> {
        Ok(self.find::<ConsensusRecord>(wp.as_str())?.map(|(c, _)| c))
    }
}

pub(crate) const CONTENT_PREFIX: &str = "content/";

/// Storage key of one file inside a volume.
pub fn content_key(volume: &VolumeId, path: &str) -> String {
    format!("{CONTENT_PREFIX}{volume}/{path}")
}
