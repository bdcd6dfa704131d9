//! Work package lifecycle: creation, classification, activation, closure.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Actor, ConsensusRecord, DecisionRecord, Haven, CONTENT_PREFIX};
use crate::blueprint::{plan_environment, Blueprint, PlanMode, PlanRequest};
use crate::classification::{
    required_classifiers, resolve_consensus, ClassifierContext, ClassifierSlot, ConsensusKind, ConsensusOptions,
    ConsensusOutcome, PersonalDataStatus, QuestionnaireAnswers, TierDecision,
};
use crate::domain::*;
use crate::error::{HavenError, Result};
use crate::ids::*;
use crate::ingress::{EgressIntent, EgressRequest};
use crate::lifecycle::{self, Event, Guards, MachineState};
use crate::platform::ForwardedCredential;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkPackageIntent {
    pub intended_analysis: String,
    pub expected_outputs: String,
    pub intended_tools: String,
    pub planned_combinations: BTreeSet<DatasetId>,
    pub pre_approved_outputs: Vec<OutputDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DocumentKind {
    Dpia,
    EthicsApproval,
}

/// Everything a classifier or manager needs to see about a package's classification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationStatus {
    pub work_package: WorkPackage,
    pub required: BTreeSet<ClassifierSlot>,
    pub decisions: Vec<TierDecision>,
    /// What recording consensus now would yield, without the proceed flag.
    pub preview: ConsensusOutcome,
    pub recorded: Option<ConsensusRecord>,
}

impl Haven {
    fn live_wp(&self, id: &WorkPackageId) -> Result<(WorkPackage, u64, Project)> {
        let (wp, v) = self.load::<WorkPackage>(id.as_str())?;
        let (project, _) = self.live_project(&wp.project_id)?;
        Ok((wp, v, project))
    }

    /// Authorises and applies one lifecycle event to a local copy of the package.
    pub(super) fn step(&self, actor: &Actor, wp: &mut WorkPackage, project: &Project, event: Event, guards: &Guards) -> Result<()> {
        let roles = self.roles_on(&actor.user_id, project, Some(wp))?;
        if !lifecycle::is_authorized(&event, &roles) {
            return Err(HavenError::unauthorized(&actor.user_id, event.label()));
        }
        let next = lifecycle::transition(MachineState::new(wp.state, wp.halted), event, guards)?;
        wp.state = next.state;
        wp.halted = next.halted;
        if !next.state.has_final_tier() {
            wp.final_tier = None;
        }
        Ok(())
    }

    pub(crate) fn sealed_data_volume(&self, project: &ProjectId, dataset: &DatasetId) -> Result<Option<Volume>> {
        Ok(self
            .list::<Volume>()?
            .into_iter()
            .filter(|v| {
                &v.project_id == project
                    && v.kind == VolumeKind::SecureData
                    && v.dataset_id.as_ref() == Some(dataset)
                    && v.state == VolumeState::Sealed
            })
            .last())
    }

    fn personal_data(&self, wp: &WorkPackage) -> Result<bool> {
        for d in &wp.dataset_ids {
            if self.load::<Dataset>(d.as_str())?.0.personal_data {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub(crate) fn guards(&self, wp: &WorkPackage) -> Result<Guards> {
        let mut g = Guards { tier4_acknowledged: wp.tier4_acknowledged, ..Guards::default() };
        g.initial_ingress_sealed = true;
        g.agreements_signed = true;
        for d in &wp.dataset_ids {
            if self.sealed_data_volume(&wp.project_id, d)?.is_none() {
                g.initial_ingress_sealed = false;
            }
            if self.load::<Dataset>(d.as_str())?.0.sharing_agreement_doc_ref.is_none() {
                g.agreements_signed = false;
            }
        }
        g.dpia_missing = wp.dpia_ref.is_none() && self.personal_data(wp)?;
        g.consensus_recorded = self.consensus_record(&wp.id)?.is_some_and(|c| {
            c.outcome.permits_activation() && c.outcome.tier.is_some() && c.outcome.tier == wp.final_tier
        });
        g.derived_classified = match &wp.pending_egress {
            Some(d) => {
                let derived = self.load::<WorkPackage>(d.as_str())?.0;
                derived.state.has_final_tier() || derived.state == WorkPackageState::Closed
            }
            None => false,
        };
        Ok(g)
    }

    fn save_wp(&self, actor: &Actor, action: &str, wp: &WorkPackage, version: u64) -> Result<()> {
        self.save(actor.user_id.as_str(), action, wp, version)?;
        Ok(())
    }

    pub fn create_work_package(
        &self,
        actor: &Actor,
        project: &ProjectId,
        datasets: BTreeSet<DatasetId>,
        intent: WorkPackageIntent,
    ) -> Result<WorkPackage> {
        let _g = self.exclusive();
        self.create_work_package_locked(actor, project, datasets, intent, None)
    }

    fn create_work_package_locked(
        &self,
        actor: &Actor,
        project: &ProjectId,
        datasets: BTreeSet<DatasetId>,
        intent: WorkPackageIntent,
        supersedes: Option<WorkPackageId>,
    ) -> Result<WorkPackage> {
        let (mut p, pv) = self.live_project(project)?;
        let roles = self.roles_on(&actor.user_id, &p, None)?;
        self.require_role(actor, &roles, &[Role::ProjectManager, Role::ProgrammeManager], "create work packages")?;
        if datasets.is_empty() {
            return Err(crate::classification::ClassificationError::NoDatasets.into());
        }
        for d in datasets.iter().chain(&intent.planned_combinations) {
            self.load::<Dataset>(d.as_str())?;
        }
        let mut wp = WorkPackage::draft(self.next_id(WorkPackageId::from_sequence)?, project.clone(), datasets);
        wp.intended_analysis = intent.intended_analysis;
        wp.expected_outputs = intent.expected_outputs;
        wp.intended_tools = intent.intended_tools;
        wp.planned_combinations = intent.planned_combinations;
        wp.pre_approved_outputs = intent.pre_approved_outputs;
        wp.supersedes = supersedes;
        self.save_wp(actor, "work_package.create", &wp, 0)?;
        p.work_package_ids.push(wp.id.clone());
        self.save(actor.user_id.as_str(), "project.add_work_package", &p, pv)?;
        Ok(wp)
    }

    /// Records a DPIA or ethics approval reference held in the secure document store.
    pub fn record_document(&self, actor: &Actor, wp_id: &WorkPackageId, kind: DocumentKind, doc: DocRef) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let roles = self.roles_on(&actor.user_id, &project, Some(&wp))?;
        self.require_role(actor, &roles, &[Role::Investigator, Role::ProjectManager], "record documents")?;
        if matches!(wp.state, WorkPackageState::Closed | WorkPackageState::Superseded) {
            return Err(HavenError::WrongState { wp: wp.id, state: wp.state, action: "record documents".into() });
        }
        match kind {
            DocumentKind::Dpia => wp.dpia_ref = Some(doc),
            DocumentKind::EthicsApproval => wp.ethics_approval_ref = Some(doc),
        }
        self.save_wp(actor, "work_package.record_document", &wp, v)?;
        Ok(wp)
    }

    /// Initial conversations settle a provisional tier; Tier 4 halts for review.
    pub fn initial_classify(
        &self,
        actor: &Actor,
        wp_id: &WorkPackageId,
        provisional: Tier,
        anonymised_personal_data: bool,
    ) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::InitialClassify { provisional }, &guards)?;
        wp.initial = Some(InitialClassification { provisional_tier: provisional, anonymised_personal_data });
        let action = if wp.halted { "work_package.tier4_halt" } else { "work_package.initial_classify" };
        self.save_wp(actor, action, &wp, v)?;
        Ok(wp)
    }

    /// The Investigator authorises mounting a dataset's initial deposit.
    pub fn authorize_mount(&self, actor: &Actor, wp_id: &WorkPackageId, dataset: &DatasetId) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        if project.investigator_id != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "authorise mounting"));
        }
        if !wp.dataset_ids.contains(dataset) {
            return Err(HavenError::DatasetNotInWorkPackage(dataset.clone()));
        }
        if !wp.state.is_pre_active() || wp.halted {
            return Err(HavenError::WrongState { wp: wp.id, state: wp.state, action: "authorise mounting".into() });
        }
        if !wp.mount_authorizations.insert(dataset.clone()) {
            return Ok(wp);
        }
        self.save_wp(actor, "work_package.authorize_mount", &wp, v)?;
        Ok(wp)
    }

    /// All deposits are sealed; the initial Tier 3 environment is provisioned over them.
    pub fn complete_initial_ingress(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<Environment> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::CompleteInitialIngress, &guards)?;
        let cred = actor.credential()?;
        let env_id = self.next_id(EnvironmentId::from_sequence)?;
        let bp = plan_environment(
            &self.config.planner(),
            &PlanRequest {
                environment_id: env_id,
                work_package: &wp,
                tier: Tier::T3,
                platform_id: self.config.default_platform.clone(),
                mode: PlanMode::InitialIngress,
            },
        )?;
        let env = self.provision(actor, cred, &bp, &wp, None)?;
        wp.environment_ids.push(env.id.clone());
        self.save_wp(actor, "work_package.complete_initial_ingress", &wp, v)?;
        Ok(env)
    }

    pub fn begin_full_classification(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::BeginFullClassification, &guards)?;
        self.save_wp(actor, "work_package.begin_full_classification", &wp, v)?;
        Ok(wp)
    }

    pub fn decisions(&self, wp: &WorkPackageId) -> Result<Vec<TierDecision>> {
        Ok(self
            .list::<DecisionRecord>()?
            .into_iter()
            .filter(|r| !r.withdrawn && r.decision.work_package_id == *wp)
            .map(|r| r.decision)
            .collect())
    }

    fn egress_request_for(&self, derived: &WorkPackageId) -> Result<Option<EgressRequest>> {
        Ok(self.find::<EgressRequest>(derived.as_str())?.map(|(r, _)| r))
    }

    fn classifier_context(&self, wp: &WorkPackage, decisions: &[TierDecision]) -> Result<ClassifierContext> {
        let submitted = decisions.iter().map(|d| d.tier).max();
        let initial = wp.initial.map(|i| i.provisional_tier);
        let provisional = initial.into_iter().chain(submitted).max().unwrap_or(Tier::T0);
        let anonymised = wp.initial.is_some_and(|i| i.anonymised_personal_data)
            || decisions.iter().any(|d| d.answers.personal_data_status == PersonalDataStatus::Anonymised);
        let referee_mandatory =
            self.egress_request_for(&wp.id)?.is_some_and(|r| r.intent == EgressIntent::FurtherAnalysis);
        Ok(ClassifierContext {
            providers: self.providers_of(&wp.dataset_ids)?,
            provisional_tier: provisional,
            anonymised_personal_data: anonymised,
            route: wp.route,
            referee_mandatory,
        })
    }

    pub fn required_classifiers(&self, wp_id: &WorkPackageId) -> Result<BTreeSet<ClassifierSlot>> {
        let wp = self.get_work_package(wp_id)?;
        let decisions = self.decisions(wp_id)?;
        Ok(required_classifiers(&self.classifier_context(&wp, &decisions)?)?)
    }

    /// Seats this user could fill on the package, in preference order.
    fn eligible_slots(&self, user: &UserId, wp: &WorkPackage, project: &Project) -> Result<Vec<ClassifierSlot>> {
        let mut slots = Vec::new();
        if &project.investigator_id == user {
            slots.push(ClassifierSlot::Investigator);
        }
        for p in self.providers_of(&wp.dataset_ids)? {
            if &self.load::<DatasetProvider>(p.as_str())?.0.representative_user_id == user {
                slots.push(ClassifierSlot::ProviderRepresentative(p));
            }
        }
        let referee = project
            .members
            .iter()
            .any(|m| &m.user_id == user && m.role == Role::Referee && m.status == MembershipStatus::Active);
        if referee && !project.is_research_team_member(user) {
            slots.push(ClassifierSlot::Referee);
        }
        Ok(slots)
    }

    pub fn submit_classification(&self, actor: &Actor, wp_id: &WorkPackageId, answers: QuestionnaireAnswers) -> Result<TierDecision> {
        let _g = self.exclusive();
        let (wp, _, project) = self.live_wp(wp_id)?;
        if wp.halted || wp.state != WorkPackageState::FullClassification {
            return Err(HavenError::WrongState { wp: wp.id, state: wp.state, action: "submit a classification".into() });
        }
        let key = super::decision_key(wp_id, &actor.user_id);
        let existing = self.find::<DecisionRecord>(&key)?;
        if existing.as_ref().is_some_and(|(r, _)| !r.withdrawn) {
            return Err(HavenError::DuplicateSubmission { user: actor.user_id.clone(), wp: wp.id });
        }
        let decisions = self.decisions(wp_id)?;
        let filled: BTreeSet<&ClassifierSlot> = decisions.iter().map(|d| &d.slot).collect();
        // A tier-raising answer can add the Referee seat, so eligibility uses the new decision too.
        let eligible = self.eligible_slots(&actor.user_id, &wp, &project)?;
        let mut chosen = None;
        for slot in eligible {
            if filled.contains(&slot) {
                continue;
            }
            let decision = TierDecision::new(wp.id.clone(), actor.user_id.clone(), slot.clone(), answers, self.now())?;
            let mut with_new = decisions.clone();
            with_new.push(decision.clone());
            let required = required_classifiers(&self.classifier_context(&wp, &with_new)?)?;
            if required.contains(&slot) {
                chosen = Some(decision);
                break;
            }
        }
        let decision = chosen.ok_or_else(|| HavenError::IneligibleClassifier { user: actor.user_id.clone(), wp: wp.id.clone() })?;
        let record = DecisionRecord { decision: decision.clone(), withdrawn: false };
        self.save(actor.user_id.as_str(), "classification.submit", &record, existing.map(|(_, v)| v).unwrap_or(0))?;
        Ok(decision)
    }

    /// Withdraws the caller's own decision so it can be resubmitted.
    pub fn withdraw_classification(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<()> {
        let _g = self.exclusive();
        let (wp, _, _) = self.live_wp(wp_id)?;
        if wp.state != WorkPackageState::FullClassification {
            return Err(HavenError::WrongState { wp: wp.id, state: wp.state, action: "withdraw a classification".into() });
        }
        let key = super::decision_key(wp_id, &actor.user_id);
        let (mut r, v) = self.find::<DecisionRecord>(&key)?.ok_or_else(|| HavenError::not_found("tier_decision", &key))?;
        if r.withdrawn {
            return Err(HavenError::not_found("tier_decision", &key));
        }
        r.withdrawn = true;
        self.save(actor.user_id.as_str(), "classification.withdraw", &r, v)?;
        Ok(())
    }

    fn withdraw_all(&self, actor: &Actor, wp: &WorkPackageId) -> Result<()> {
        for (mut r, v) in self.store.list::<DecisionRecord>()? {
            if &r.decision.work_package_id == wp && !r.withdrawn {
                r.withdrawn = true;
                self.save(actor.user_id.as_str(), "classification.withdraw_on_halt", &r, v)?;
            }
        }
        Ok(())
    }

    fn halt_locked(&self, actor: &Actor, mut wp: WorkPackage, version: u64, action: &str) -> Result<WorkPackage> {
        self.withdraw_all(actor, &wp.id)?;
        wp.initial = None;
        self.save_wp(actor, action, &wp, version)?;
        Ok(wp)
    }

    /// Resolves the stored decisions and records the outcome.
    pub fn record_consensus(&self, actor: &Actor, wp_id: &WorkPackageId, proceed_without_consensus: bool) -> Result<ConsensusOutcome> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let decisions = self.decisions(wp_id)?;
        let required = required_classifiers(&self.classifier_context(&wp, &decisions)?)?;
        let options = ConsensusOptions { proceed_without_consensus, tier4_acknowledged: wp.tier4_acknowledged };
        let outcome = resolve_consensus(&decisions, &required, options)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::RecordConsensus { kind: outcome.kind }, &guards)?;

        let record = ConsensusRecord {
            work_package_id: wp.id.clone(),
            outcome: outcome.clone(),
            required,
            proceed_without_consensus,
            recorded_by: actor.user_id.clone(),
            recorded_at: self.now(),
        };
        let cv = self.find::<ConsensusRecord>(wp.id.as_str())?.map(|(_, v)| v).unwrap_or(0);
        self.save(actor.user_id.as_str(), "classification.consensus", &record, cv)?;
        match outcome.kind {
            ConsensusKind::Agreed | ConsensusKind::ProceedAtMax => {
                wp.final_tier = outcome.tier;
                self.save_wp(actor, "work_package.consensus_reached", &wp, v)?;
            }
            ConsensusKind::Tier4Halt => {
                self.halt_locked(actor, wp, v, "work_package.tier4_halt")?;
            }
            ConsensusKind::Disagreement => {}
        }
        Ok(outcome)
    }

    /// A classifier suspects Tier 4 before analysis; everyone reconsiders.
    pub fn raise_tier4(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::RaiseTier4, &guards)?;
        self.halt_locked(actor, wp, v, "work_package.tier4_halt")
    }

    /// Programme Manager review after a halt; Tier 4 may then be agreed.
    pub fn acknowledge_halt(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::AcknowledgeHalt, &guards)?;
        wp.tier4_acknowledged = true;
        self.save_wp(actor, "work_package.acknowledge_halt", &wp, v)?;
        Ok(wp)
    }

    pub fn classification_status(&self, wp_id: &WorkPackageId) -> Result<ClassificationStatus> {
        let wp = self.get_work_package(wp_id)?;
        let decisions = self.decisions(wp_id)?;
        let required = required_classifiers(&self.classifier_context(&wp, &decisions)?)?;
        let options = ConsensusOptions { proceed_without_consensus: false, tier4_acknowledged: wp.tier4_acknowledged };
        let preview = resolve_consensus(&decisions, &required, options)?;
        Ok(ClassificationStatus { recorded: self.consensus_record(wp_id)?, work_package: wp, required, decisions, preview })
    }

    // -- environments ------------------------------------------------------------

    /// Provisions a planned environment and records it with its volumes.
    pub(crate) fn provision(
        &self,
        actor: &Actor,
        cred: &ForwardedCredential,
        bp: &Blueprint,
        wp: &WorkPackage,
        derived_from: Option<EnvironmentId>,
    ) -> Result<Environment> {
        let who = actor.user_id.as_str();
        let mut existing = Vec::new();
        for spec in &bp.volumes {
            if let Some(d) = &spec.dataset_id {
                let vol = self
                    .sealed_data_volume(&wp.project_id, d)?
                    .ok_or_else(|| HavenError::Invalid(format!("dataset {d} has no sealed deposit")))?;
                existing.push(vol.id);
            }
        }
        for spec in &bp.volumes {
            if let Some(src) = &spec.source_volume_id {
                let v = self.get_volume(src)?;
                if v.state != VolumeState::Sealed {
                    return Err(HavenError::VolumeNotSealed(src.clone()));
                }
            }
        }

        self.platform.provision(cred, bp)?;
        self.store.backend().put(&blueprint_key(&bp.environment_id), bp.to_canonical_json().as_bytes())?;

        let mut volume_ids = Vec::new();
        let mut existing = existing.into_iter();
        for spec in &bp.volumes {
            if spec.dataset_id.is_some() {
                let id = existing.next().expect("one existing volume per dataset spec");
                let (mut vol, vv) = self.load::<Volume>(id.as_str())?;
                vol.environment_id = Some(bp.environment_id.clone());
                vol.mode = VolumeMode::ReadOnly;
                self.save(who, "volume.mount", &vol, vv)?;
                volume_ids.push(id);
                continue;
            }
            let id = self.next_id(VolumeId::from_sequence)?;
            self.platform.create_volume(cred, &id)?;
            let mut state = VolumeState::Open;
            if let Some(src) = &spec.source_volume_id {
                self.copy_contents(src, &id)?;
                state = VolumeState::Sealed;
            }
            let vol = Volume {
                id: id.clone(),
                project_id: wp.project_id.clone(),
                kind: spec.kind,
                mode: spec.mode,
                environment_id: Some(bp.environment_id.clone()),
                dataset_id: None,
                state,
            };
            self.save(who, "volume.create", &vol, 0)?;
            volume_ids.push(id);
        }
        let env = Environment {
            id: bp.environment_id.clone(),
            work_package_id: wp.id.clone(),
            project_id: wp.project_id.clone(),
            tier: bp.tier,
            platform_id: bp.platform_id.clone(),
            purpose: bp.purpose,
            state: EnvironmentState::Active,
            blueprint_ref: bp.digest(),
            volume_ids,
            derived_from_environment_id: derived_from,
            deployment_software: Vec::new(),
        };
        self.save(who, "environment.provision", &env, 0)?;
        Ok(env)
    }

    fn copy_contents(&self, from: &VolumeId, to: &VolumeId) -> Result<()> {
        let prefix = format!("{CONTENT_PREFIX}{from}/");
        for (k, bytes) in self.store.backend().scan_prefix(&prefix)? {
            let path = &k[prefix.len()..];
            self.store.backend().put(&super::content_key(to, path), &bytes)?;
        }
        Ok(())
    }

    pub(crate) fn decommission(&self, actor: &Actor, cred: &ForwardedCredential, env_id: &EnvironmentId) -> Result<()> {
        let (mut env, v) = self.load::<Environment>(env_id.as_str())?;
        if env.state == EnvironmentState::Decommissioned {
            return Ok(());
        }
        self.platform.decommission(cred, env_id)?;
        env.state = EnvironmentState::Decommissioned;
        self.save(actor.user_id.as_str(), "environment.decommission", &env, v)?;
        Ok(())
    }

    pub fn get_blueprint(&self, env: &EnvironmentId) -> Result<Blueprint> {
        let bytes = self.store.backend().get(&blueprint_key(env))?.ok_or_else(|| HavenError::not_found("blueprint", env))?;
        serde_json::from_slice(&bytes).map_err(|e| HavenError::Invalid(e.to_string()))
    }

    /// An environment of the superseded package at the same tier, still running.
    fn reusable_environment(&self, wp: &WorkPackage, tier: Tier) -> Result<Option<Environment>> {
        let Some(prev) = &wp.supersedes else { return Ok(None) };
        let prev = self.get_work_package(prev)?;
        for id in prev.environment_ids.iter().rev() {
            let env = self.get_environment(id)?;
            if env.purpose == EnvironmentPurpose::Analysis
                && env.state == EnvironmentState::Active
                && env.tier == tier
                && env.work_package_id == prev.id
            {
                return Ok(Some(env));
            }
        }
        Ok(None)
    }

    /// Guards checked, the package's environment is provisioned at its agreed tier.
    pub fn start_analysis(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<Environment> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::StartAnalysis, &guards)?;
        let cred = actor.credential()?;
        let tier = wp.final_tier.ok_or_else(|| crate::blueprint::PlanError::TierUnset(wp.id.clone()))?;
        let planner = self.config.planner();

        let env = if let Some(lineage) = wp.derived_from.clone() {
            let src = self.get_environment(&lineage.source_environment_id)?;
            let out = self.get_volume(&lineage.output_volume_id)?;
            let consensus = self.consensus_record(&wp.id)?;
            let bp = crate::blueprint::plan_derived_environment(
                &planner,
                &crate::blueprint::DerivedPlanRequest {
                    environment_id: self.next_id(EnvironmentId::from_sequence)?,
                    source_environment: &src,
                    output_volume: &out,
                    work_package: &wp,
                    new_tier: tier,
                    consensus: consensus.as_ref().map(|c| &c.outcome),
                    platform_id: self.config.default_platform.clone(),
                    purpose: EnvironmentPurpose::Derived,
                },
            )?;
            self.provision(actor, cred, &bp, &wp, Some(src.id))?
        } else if let Some(mut env) = self.reusable_environment(&wp, tier)? {
            let bp = plan_environment(
                &planner,
                &PlanRequest {
                    environment_id: env.id.clone(),
                    work_package: &wp,
                    tier,
                    platform_id: env.platform_id.clone(),
                    mode: PlanMode::Final,
                },
            )?;
            self.platform.provision(cred, &bp)?;
            self.store.backend().put(&blueprint_key(&env.id), bp.to_canonical_json().as_bytes())?;
            for d in &wp.dataset_ids {
                let vol = self.sealed_data_volume(&wp.project_id, d)?.expect("guarded by initial ingress");
                if vol.environment_id.as_ref() != Some(&env.id) {
                    let (mut vol, vv) = self.load::<Volume>(vol.id.as_str())?;
                    vol.environment_id = Some(env.id.clone());
                    vol.mode = VolumeMode::ReadOnly;
                    self.save(actor.user_id.as_str(), "volume.mount", &vol, vv)?;
                    env.volume_ids.push(vol.id);
                }
            }
            let (_, ev) = self.load::<Environment>(env.id.as_str())?;
            env.work_package_id = wp.id.clone();
            env.blueprint_ref = bp.digest();
            self.save(actor.user_id.as_str(), "environment.reuse", &env, ev)?;
            env
        } else {
            let bp = plan_environment(
                &planner,
                &PlanRequest {
                    environment_id: self.next_id(EnvironmentId::from_sequence)?,
                    work_package: &wp,
                    tier,
                    platform_id: self.config.default_platform.clone(),
                    mode: PlanMode::Final,
                },
            )?;
            self.provision(actor, cred, &bp, &wp, None)?
        };
        // The initial Tier 3 deposit environment retires, as does a predecessor's environment not reused.
        let mut retire: Vec<EnvironmentId> = wp.environment_ids.clone();
        if let Some(prev) = &wp.supersedes {
            retire.extend(self.get_work_package(prev)?.environment_ids);
        }
        for id in retire {
            let e = self.get_environment(&id)?;
            if e.id != env.id && e.state != EnvironmentState::Decommissioned {
                self.decommission(actor, cred, &id)?;
            }
        }
        if !wp.environment_ids.contains(&env.id) {
            wp.environment_ids.push(env.id.clone());
        }
        self.save_wp(actor, "work_package.start_analysis", &wp, v)?;
        Ok(env)
    }

    /// Any change of data or intent makes a fresh package that is classified anew.
    pub fn supersede(
        &self,
        actor: &Actor,
        wp_id: &WorkPackageId,
        datasets: BTreeSet<DatasetId>,
        intent: WorkPackageIntent,
    ) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut old, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&old)?;
        self.step(actor, &mut old, &project, Event::Supersede, &guards)?;
        let new = self.create_work_package_locked(actor, &project.id, datasets, intent, Some(old.id.clone()))?;
        old.superseded_by = Some(new.id.clone());
        self.save_wp(actor, "work_package.supersede", &old, v)?;
        Ok(new)
    }

    pub fn close_work_package(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v, project) = self.live_wp(wp_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::Close, &guards)?;
        let live: Vec<EnvironmentId> = wp
            .environment_ids
            .iter()
            .filter_map(|id| self.get_environment(id).ok())
            .filter(|e| e.state != EnvironmentState::Decommissioned && e.work_package_id == wp.id)
            .map(|e| e.id)
            .collect();
        if !live.is_empty() {
            let cred = actor.credential()?;
            for id in live {
                self.decommission(actor, cred, &id)?;
            }
        }
        self.save_wp(actor, "work_package.close", &wp, v)?;
        Ok(wp)
    }

    /// Deletes every volume and keeps the project, with its environment and volume lists, as metadata.
    pub fn close_project(&self, actor: &Actor, project_id: &ProjectId) -> Result<ClosureRecord> {
        let _g = self.exclusive();
        self.require_programme_manager(actor, "close projects")?;
        let (mut project, pv) = self.live_project(project_id)?;
        for id in &project.work_package_ids {
            let wp = self.get_work_package(id)?;
            match wp.state {
                WorkPackageState::Closed | WorkPackageState::Superseded => {}
                WorkPackageState::EgressPending => return Err(HavenError::OpenEgress(wp.id)),
                _ => return Err(HavenError::LiveWorkPackage(wp.id)),
            }
        }
        let now = self.now();
        for r in self.list::<crate::ingress::ExceptionalRelease>()? {
            let ours = project.work_package_ids.contains(&r.work_package_id);
            let open = !r.revoked && r.closes_at.is_none_or(|c| c > now);
            if ours && open {
                return Err(HavenError::OpenEgress(r.work_package_id));
            }
        }
        let cred = actor.credential()?;
        let envs: Vec<Environment> = self.list::<Environment>()?.into_iter().filter(|e| &e.project_id == project_id).collect();
        for e in &envs {
            self.decommission(actor, cred, &e.id)?;
        }
        let volumes: Vec<Volume> = self.list::<Volume>()?.into_iter().filter(|v| &v.project_id == project_id).collect();
        for vol in &volumes {
            self.delete_volume(actor, cred, &vol.id)?;
        }
        let closure = ClosureRecord {
            closed_at: now,
            environment_ids: envs.iter().map(|e| e.id.clone()).collect(),
            volume_ids: volumes.iter().map(|v| v.id.clone()).collect(),
        };
        project.state = ProjectState::Closed;
        project.closure = Some(closure.clone());
        self.save(actor.user_id.as_str(), "project.close", &project, pv)?;
        Ok(closure)
    }

    pub(crate) fn delete_volume(&self, actor: &Actor, cred: &ForwardedCredential, id: &VolumeId) -> Result<()> {
        let (mut vol, v) = self.load::<Volume>(id.as_str())?;
        if vol.state == VolumeState::Deleted {
            return Ok(());
        }
        self.platform.delete_volume(cred, id)?;
        let prefix = format!("{CONTENT_PREFIX}{id}/");
        for (k, _) in self.store.backend().scan_prefix(&prefix)? {
            self.store.backend().delete(&k)?;
        }
        vol.state = VolumeState::Deleted;
        self.save(actor.user_id.as_str(), "volume.delete", &vol, v)?;
        Ok(())
    }
}

fn blueprint_key(env: &EnvironmentId) -> String {
    format!("blueprint/{env}")
}
