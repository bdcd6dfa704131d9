//! Egress: reclassification of outputs, publication, and exceptional release.

use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::{Actor, Haven, SCHEDULER_ACTOR};
use crate::blueprint::{plan_derived_environment, DerivedPlanRequest};
use crate::domain::*;
use crate::error::{HavenError, Result};
use crate::ids::*;
use crate::ingress::*;
use crate::lifecycle::Event;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressSpec {
    pub output_volume_id: VolumeId,
    pub analysis_script_ref: String,
    pub intent: EgressIntent,
    pub outputs: Vec<OutputDescriptor>,
    /// The Investigator confirms the outputs are the pre-approved ones.
    pub investigator_confirms: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobReport {
    pub verifications: Vec<IntegrityRecord>,
    pub expired_releases: Vec<GrantId>,
}

impl Haven {
    /// Research team freezes an output volume so it can be classified.
    pub fn seal_output(&self, actor: &Actor, volume_id: &VolumeId) -> Result<Volume> {
        let _g = self.exclusive();
        let (mut vol, v) = self.load::<Volume>(volume_id.as_str())?;
        let (project, _) = self.live_project(&vol.project_id)?;
        let roles = project.roles_of(&actor.user_id);
        self.require_role(actor, &roles, &[Role::Investigator, Role::Researcher], "seal outputs")?;
        if vol.kind != VolumeKind::Output {
            return Err(HavenError::Invalid(format!("{volume_id} is not an output volume")));
        }
        if vol.state != VolumeState::Open {
            return Err(HavenError::VolumeNotOpen(vol.id));
        }
        vol.state = VolumeState::Sealed;
        vol.mode = VolumeMode::ReadOnly;
        vol.environment_id = None;
        self.save(actor.user_id.as_str(), "egress.seal_output", &vol, v)?;
        Ok(vol)
    }

    /// Researcher writes into an environment's output volume.
    pub fn write_output(&self, actor: &Actor, volume_id: &VolumeId, path: &str, content: &[u8]) -> Result<()> {
        let _g = self.exclusive();
        let (vol, v) = self.load::<Volume>(volume_id.as_str())?;
        let (project, _) = self.live_project(&vol.project_id)?;
        if !project.is_research_team_member(&actor.user_id) {
            return Err(HavenError::unauthorized(&actor.user_id, "write outputs"));
        }
        if vol.kind != VolumeKind::Output || vol.state != VolumeState::Open || vol.environment_id.is_none() {
            return Err(HavenError::VolumeNotOpen(vol.id));
        }
        if path.is_empty() || path.starts_with('/') || path.split('/').any(|s| s == "..") {
            return Err(HavenError::Invalid(format!("unacceptable file path {path:?}")));
        }
        self.store.backend().put(&super::content_key(volume_id, path), content)?;
        let vref = crate::store::EntityRef { kind: "volume".into(), id: vol.id.to_string(), version: v };
        self.append(actor.user_id.as_str(), "egress.write_output", vref, &(path, content.len()))?;
        Ok(())
    }

    /// Outputs become a new work package; pre-approved outputs skip the provider representatives.
    pub fn request_egress(&self, actor: &Actor, wp_id: &WorkPackageId, spec: EgressSpec) -> Result<EgressRequest> {
        let _g = self.exclusive();
        let (mut wp, v) = self.load::<WorkPackage>(wp_id.as_str())?;
        let (mut project, pv) = self.live_project(&wp.project_id)?;
        if spec.analysis_script_ref.trim().is_empty() {
            return Err(HavenError::MissingScript);
        }
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::RequestEgress, &guards)?;

        let out = self.get_volume(&spec.output_volume_id)?;
        if out.kind != VolumeKind::Output || out.project_id != project.id {
            return Err(HavenError::Invalid(format!("{} is not an output of this project", out.id)));
        }
        if out.state != VolumeState::Sealed {
            return Err(HavenError::VolumeNotSealed(out.id));
        }
        let source_env = wp
            .environment_ids
            .iter()
            .filter_map(|id| self.get_environment(id).ok())
            .find(|e| e.state == EnvironmentState::Active && e.volume_ids.contains(&out.id))
            .ok_or_else(|| HavenError::Invalid(format!("{} is not an output of an active environment of {wp_id}", out.id)))?;

        if spec.investigator_confirms && project.investigator_id != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "confirm pre-approved outputs"));
        }
        let pre_approved = spec.investigator_confirms
            && !spec.outputs.is_empty()
            && spec.outputs.iter().all(|o| wp.pre_approved_outputs.contains(o));

        let mut derived = WorkPackage::draft(self.next_id(WorkPackageId::from_sequence)?, project.id.clone(), wp.dataset_ids.clone());
        derived.intended_analysis = format!("{:?} of outputs from {}", spec.intent, wp.id);
        derived.expected_outputs = spec.outputs.iter().map(|o| o.0.as_str()).collect::<Vec<_>>().join("; ");
        derived.derived_from = Some(Lineage {
            source_work_package_id: wp.id.clone(),
            source_environment_id: source_env.id.clone(),
            analysis_script_ref: DocRef::new(spec.analysis_script_ref.clone()),
            output_volume_id: out.id.clone(),
        });
        derived.state = WorkPackageState::FullClassification;
        derived.route = if pre_approved { ClassificationRoute::PreApproved } else { ClassificationRoute::Full };
        derived.dpia_ref = wp.dpia_ref.clone();
        derived.ethics_approval_ref = wp.ethics_approval_ref.clone();
        self.save(actor.user_id.as_str(), "work_package.create_derived", &derived, 0)?;

        let request = EgressRequest {
            id: self.next_id(RequestId::from_sequence)?,
            source_work_package_id: wp.id.clone(),
            derived_work_package_id: derived.id.clone(),
            output_volume_id: out.id.clone(),
            analysis_script_ref: spec.analysis_script_ref,
            intent: spec.intent,
            pre_approved,
            requested_by: actor.user_id.clone(),
            requested_at: self.now(),
        };
        self.save(actor.user_id.as_str(), "egress.request", &request, 0)?;

        wp.pending_egress = Some(derived.id.clone());
        self.save(actor.user_id.as_str(), "work_package.request_egress", &wp, v)?;
        project.work_package_ids.push(derived.id);
        self.save(actor.user_id.as_str(), "project.add_work_package", &project, pv)?;
        Ok(request)
    }

    pub fn egress_request(&self, derived: &WorkPackageId) -> Result<EgressRequest> {
        Ok(self.load::<EgressRequest>(derived.as_str())?.0)
    }

    /// Records the copy-out authorisation for a Tier 0/1 derived package. Repeat calls return the same record.
    pub fn publish_egress(&self, actor: &Actor, derived_id: &WorkPackageId) -> Result<ReleaseAuthorization> {
        let _g = self.exclusive();
        if let Some((existing, _)) = self.find::<ReleaseAuthorization>(derived_id.as_str())? {
            return Ok(existing);
        }
        let (derived, _) = self.load::<WorkPackage>(derived_id.as_str())?;
        let (project, _) = self.live_project(&derived.project_id)?;
        let roles = self.roles_on(&actor.user_id, &project, Some(&derived))?;
        self.require_role(actor, &roles, &[Role::Investigator, Role::ProjectManager], "publish outputs")?;
        let request = self.egress_request(derived_id)?;
        if request.intent != EgressIntent::Publish {
            return Err(HavenError::Invalid(format!("egress intent is {:?}, not Publish", request.intent)));
        }
        let tier = match (derived.state.has_final_tier(), derived.final_tier) {
            (true, Some(t)) => t,
            _ => {
                return Err(HavenError::WrongState { wp: derived.id, state: derived.state, action: "publish".into() })
            }
        };
        if tier > Tier::T1 {
            return Err(HavenError::TierTooHighToPublish(tier.level()));
        }
        let lineage = derived.derived_from.clone().expect("egress requests create derived packages");
        let src = self.get_environment(&lineage.source_environment_id)?;
        let out = self.get_volume(&lineage.output_volume_id)?;
        let consensus = self.consensus_record(derived_id)?;
        let bp = plan_derived_environment(
            &self.config.planner(),
            &DerivedPlanRequest {
                environment_id: EnvironmentId::new(format!("{}-publication", derived.id)),
                source_environment: &src,
                output_volume: &out,
                work_package: &derived,
                new_tier: tier,
                consensus: consensus.as_ref().map(|c| &c.outcome),
                platform_id: self.config.default_platform.clone(),
                purpose: EnvironmentPurpose::Publication,
            },
        )?;
        let auth = ReleaseAuthorization {
            work_package_id: derived.id.clone(),
            tier,
            blueprint_digest: bp.digest(),
            output_volume_id: out.id,
            authorized_by: actor.user_id.clone(),
            authorized_at: self.now(),
        };
        self.save(actor.user_id.as_str(), "egress.publish", &auth, 0)?;
        Ok(auth)
    }

    /// Returns the source package to Active once its egress is classified or abandoned.
    pub fn resolve_egress(&self, actor: &Actor, wp_id: &WorkPackageId) -> Result<WorkPackage> {
        let _g = self.exclusive();
        let (mut wp, v) = self.load::<WorkPackage>(wp_id.as_str())?;
        let (project, _) = self.live_project(&wp.project_id)?;
        let guards = self.guards(&wp)?;
        self.step(actor, &mut wp, &project, Event::ResolveEgress, &guards)?;
        wp.pending_egress = None;
        self.save(actor.user_id.as_str(), "work_package.resolve_egress", &wp, v)?;
        Ok(wp)
    }

    fn release_role(&self, actor: &UserId, wp: &WorkPackage) -> Result<Option<Role>> {
        for p in self.providers_of(&wp.dataset_ids)? {
            if &self.get_provider(&p)?.representative_user_id == actor {
                return Ok(Some(Role::DatasetProviderRepresentative));
            }
        }
        if self.is_programme_manager(actor)? {
            return Ok(Some(Role::ProgrammeManager));
        }
        Ok(None)
    }

    /// One half of the dual authorisation for an exceptional release.
    pub fn authorize_release(
        &self,
        actor: &Actor,
        wp_id: &WorkPackageId,
        ip_range: ipnet::IpNet,
        duration_hours: i64,
    ) -> Result<ExceptionalRelease> {
        let _g = self.exclusive();
        self.authorize_release_locked(actor, wp_id, ip_range, duration_hours)
    }

    fn authorize_release_locked(
        &self,
        actor: &Actor,
        wp_id: &WorkPackageId,
        ip_range: ipnet::IpNet,
        duration_hours: i64,
    ) -> Result<ExceptionalRelease> {
        if duration_hours <= 0 {
            return Err(HavenError::Invalid("release duration must be positive".into()));
        }
        let (wp, _) = self.load::<WorkPackage>(wp_id.as_str())?;
        self.live_project(&wp.project_id)?;
        if !wp.state.has_final_tier() {
            return Err(HavenError::WrongState { wp: wp.id, state: wp.state, action: "release outputs".into() });
        }
        let role = self
            .release_role(&actor.user_id, &wp)?
            .ok_or_else(|| HavenError::unauthorized(&actor.user_id, "authorise an exceptional release"))?;

        let pending = self.store.list::<ExceptionalRelease>()?.into_iter().find(|(r, _)| {
            r.work_package_id == wp.id && r.ip_range == ip_range && r.duration_hours == duration_hours && !r.is_granted() && !r.revoked
        });
        let (mut release, rv) = match pending {
            Some(p) => p,
            None => (
                ExceptionalRelease {
                    id: self.next_id(GrantId::from_sequence)?,
                    work_package_id: wp.id.clone(),
                    ip_range,
                    duration_hours,
                    approvals: Vec::new(),
                    volume_id: None,
                    representative_id: None,
                    opens_at: None,
                    closes_at: None,
                    revoked: false,
                },
                0,
            ),
        };
        if release.approvals.iter().any(|a| a.user_id == actor.user_id) || release.has_role(role) {
            return Ok(release);
        }
        release.approvals.push(ReleaseApproval { user_id: actor.user_id.clone(), role, at: self.now() });
        if release.is_granted() {
            let cred = actor.credential()?;
            let vol_id = self.next_id(VolumeId::from_sequence)?;
            self.platform.create_volume(cred, &vol_id)?;
            if let Some(l) = &wp.derived_from {
                let prefix = format!("{}{}/", super::CONTENT_PREFIX, l.output_volume_id);
                for (k, bytes) in self.store.backend().scan_prefix(&prefix)? {
                    self.store.backend().put(&super::content_key(&vol_id, &k[prefix.len()..]), &bytes)?;
                }
            }
            let vol = Volume {
                id: vol_id.clone(),
                project_id: wp.project_id.clone(),
                kind: VolumeKind::Output,
                mode: VolumeMode::ReadOnly,
                environment_id: None,
                dataset_id: None,
                state: VolumeState::Sealed,
            };
            self.save(actor.user_id.as_str(), "release.create_volume", &vol, 0)?;
            let now = self.now();
            release.volume_id = Some(vol_id);
            release.representative_id = release
                .approvals
                .iter()
                .find(|a| a.role == Role::DatasetProviderRepresentative)
                .map(|a| a.user_id.clone());
            release.opens_at = Some(now);
            release.closes_at = Some(now + release.duration());
        }
        self.save(actor.user_id.as_str(), "release.authorize", &release, rv)?;
        Ok(release)
    }

    /// Both parties authorise together. Refused, with nothing recorded, unless they are a
    /// provider representative and a programme manager.
    pub fn exceptional_release(
        &self,
        first: &Actor,
        second: &Actor,
        wp_id: &WorkPackageId,
        ip_range: ipnet::IpNet,
        duration_hours: i64,
    ) -> Result<ExceptionalRelease> {
        let _g = self.exclusive();
        let wp = self.get_work_package(wp_id)?;
        let a = self.release_role(&first.user_id, &wp)?;
        let b = self.release_role(&second.user_id, &wp)?;
        let both = first.user_id != second.user_id
            && matches!(
                (a, b),
                (Some(Role::DatasetProviderRepresentative), Some(Role::ProgrammeManager))
                    | (Some(Role::ProgrammeManager), Some(Role::DatasetProviderRepresentative))
            );
        if !both {
            return Err(HavenError::SinglePartyAuthorization);
        }
        second.credential()?;
        self.authorize_release_locked(first, wp_id, ip_range, duration_hours)?;
        self.authorize_release_locked(second, wp_id, ip_range, duration_hours)
    }

    /// The representative reaches the released volume from outside; every attempt is audited.
    pub fn access_release(&self, actor: &Actor, grant: &GrantId, addr: IpAddr) -> Result<VolumeId> {
        let _g = self.exclusive();
        let (release, v) = self.load::<ExceptionalRelease>(grant.as_str())?;
        let rref = crate::store::EntityRef { kind: "exceptional_release".into(), id: grant.to_string(), version: v };
        let verdict = if release.representative_id.as_ref() != Some(&actor.user_id) {
            Err("caller is not the authorised representative")
        } else {
            release.permits(addr, self.now())
        };
        match verdict {
            Ok(()) => {
                self.append(actor.user_id.as_str(), "release.access", rref, &addr.to_string())?;
                Ok(release.volume_id.expect("granted releases carry a volume"))
            }
            Err(reason) => {
                self.append(actor.user_id.as_str(), "release.access_denied", rref, &(addr.to_string(), reason))?;
                Err(HavenError::AccessDenied(reason.into()))
            }
        }
    }

    pub fn get_release(&self, grant: &GrantId) -> Result<ExceptionalRelease> {
        Ok(self.load::<ExceptionalRelease>(grant.as_str())?.0)
    }

    /// Revokes releases whose window has ended.
    pub fn expire_releases(&self) -> Result<Vec<GrantId>> {
        let _g = self.exclusive();
        let now = self.now();
        let mut out = Vec::new();
        for (mut r, v) in self.store.list::<ExceptionalRelease>()? {
            if !r.revoked && r.closes_at.is_some_and(|c| c <= now) {
                r.revoked = true;
                self.save(SCHEDULER_ACTOR, "release.expire", &r, v)?;
                out.push(r.id);
            }
        }
        Ok(out)
    }

    /// Background work: due integrity checks and release expiry.
    pub fn run_due_jobs(&self) -> Result<JobReport> {
        Ok(JobReport { verifications: self.run_scheduled_verifications()?, expired_releases: self.expire_releases()? })
    }
}
