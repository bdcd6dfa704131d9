//! Software ingress through the airlock volume.

use super::{content_key, Actor, Haven, CONTENT_PREFIX};
use crate::domain::*;
use crate::error::{HavenError, Result};
use crate::ids::*;
use crate::ingress::*;
use crate::policy::{resolve_policy, SoftwareIngressSignoff};

impl Haven {
    fn airlock_volume(&self, env: &Environment) -> Result<(Volume, u64)> {
        for id in &env.volume_ids {
            let (v, ver) = self.load::<Volume>(id.as_str())?;
            if v.kind == VolumeKind::SoftwareIngress {
                return Ok((v, ver));
            }
        }
        Err(HavenError::Invalid(format!("{} has no software ingress volume", env.id)))
    }

    fn set_airlock(&self, actor: &Actor, vol: &mut Volume, ver: u64, mode: AirlockMode) -> Result<()> {
        let (m, s) = match mode {
            AirlockMode::External => (VolumeMode::WriteOnly, VolumeState::Open),
            AirlockMode::Locked => (VolumeMode::WriteOnly, VolumeState::Sealed),
            AirlockMode::Internal => (VolumeMode::ReadOnly, VolumeState::Sealed),
        };
        vol.mode = m;
        vol.state = s;
        self.save(actor.user_id.as_str(), "volume.airlock", vol, ver)?;
        Ok(())
    }

    fn live_env(&self, env_id: &EnvironmentId) -> Result<(Environment, Project)> {
        let env = self.get_environment(env_id)?;
        if env.state != EnvironmentState::Active {
            return Err(HavenError::Invalid(format!("{env_id} is not active")));
        }
        let (project, _) = self.live_project(&env.project_id)?;
        Ok((env, project))
    }

    /// Pre-approved artifacts enter directly; anything else goes through the airlock.
    pub fn request_software_ingress(
        &self,
        actor: &Actor,
        env_id: &EnvironmentId,
        artifact_ref: &str,
        requires_admin_install: bool,
    ) -> Result<SoftwareIngressOutcome> {
        let _g = self.exclusive();
        let (env, project) = self.live_env(env_id)?;
        if !project.is_research_team_member(&actor.user_id) {
            return Err(HavenError::unauthorized(&actor.user_id, "request software ingress"));
        }
        let registry = self.find::<PreApprovalRegistry>(PreApprovalRegistry::ID)?.map(|r| r.0).unwrap_or_default();
        if registry.contains(artifact_ref) {
            let eref = crate::store::EntityRef { kind: "environment".into(), id: env.id.to_string(), version: 0 };
            self.append(actor.user_id.as_str(), "software.pre_approved", eref, &artifact_ref)?;
            return Ok(SoftwareIngressOutcome::PreApproved { artifact_ref: artifact_ref.into() });
        }
        let signoff = resolve_policy(env.tier).software_ingress_signoff;
        if signoff == SoftwareIngressSignoff::UserDirect {
            return Err(HavenError::AirlockNotRequired(env.tier.level()));
        }
        let open = self.list::<SoftwareIngressRequest>()?.into_iter().any(|r| {
            r.environment_id == env.id && matches!(r.review_state, ReviewState::AwaitingSubmission | ReviewState::AwaitingReview)
        });
        if open {
            return Err(HavenError::Invalid(format!("{env_id} already has an open software request")));
        }
        let (mut vol, ver) = self.airlock_volume(&env)?;
        for (k, _) in self.store.backend().scan_prefix(&format!("{CONTENT_PREFIX}{}/", vol.id))? {
            self.store.backend().delete(&k)?;
        }
        self.set_airlock(actor, &mut vol, ver, AirlockMode::External)?;
        let req = SoftwareIngressRequest {
            id: self.next_id(RequestId::from_sequence)?,
            environment_id: env.id,
            volume_id: vol.id,
            artifact_ref: artifact_ref.into(),
            submitted_by: actor.user_id.clone(),
            review_state: ReviewState::AwaitingSubmission,
            airlock: AirlockMode::External,
            signoffs: Vec::new(),
            requires_admin_install,
            required_signoff: signoff,
        };
        self.save(actor.user_id.as_str(), "software.request", &req, 0)?;
        Ok(SoftwareIngressOutcome::Airlock(req))
    }

    pub fn write_software(&self, actor: &Actor, req_id: &RequestId, path: &str, content: &[u8]) -> Result<()> {
        let _g = self.exclusive();
        let (req, v) = self.load::<SoftwareIngressRequest>(req_id.as_str())?;
        if req.submitted_by != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "write to this airlock"));
        }
        if !req.airlock.writable_from_outside() {
            return Err(HavenError::SoftwareWindowClosed);
        }
        super::ingress::check_path(path)?;
        self.store.backend().put(&content_key(&req.volume_id, path), content)?;
        let rref = crate::store::EntityRef { kind: "software_request".into(), id: req.id.to_string(), version: v };
        self.append(actor.user_id.as_str(), "software.write", rref, &(path, content.len()))?;
        Ok(())
    }

    /// Closes the external window and queues the contents for review.
    pub fn submit_software(&self, actor: &Actor, req_id: &RequestId) -> Result<SoftwareIngressRequest> {
        let _g = self.exclusive();
        let (mut req, v) = self.load::<SoftwareIngressRequest>(req_id.as_str())?;
        if req.submitted_by != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "submit this software request"));
        }
        if req.review_state != ReviewState::AwaitingSubmission {
            return Err(HavenError::SoftwareWindowClosed);
        }
        let (mut vol, vv) = self.load::<Volume>(req.volume_id.as_str())?;
        self.set_airlock(actor, &mut vol, vv, AirlockMode::Locked)?;
        req.review_state = ReviewState::AwaitingReview;
        req.airlock = AirlockMode::Locked;
        self.save(actor.user_id.as_str(), "software.submit", &req, v)?;
        Ok(req)
    }

    /// Investigator or Referee review. The airlock opens inwards once the tier's sign-off rule is met.
    pub fn signoff_software(&self, actor: &Actor, req_id: &RequestId) -> Result<SoftwareIngressRequest> {
        let _g = self.exclusive();
        let (mut req, v) = self.load::<SoftwareIngressRequest>(req_id.as_str())?;
        if req.review_state != ReviewState::AwaitingReview {
            return Err(HavenError::Invalid(format!("{req_id} is not awaiting review")));
        }
        let (_, project) = self.live_env(&req.environment_id)?;
        let roles = project.roles_of(&actor.user_id);
        let role = [Role::Investigator, Role::Referee]
            .into_iter()
            .find(|r| roles.contains(r) && !req.signoffs.iter().any(|s| s.role == *r))
            .ok_or_else(|| HavenError::unauthorized(&actor.user_id, "sign off software"))?;
        if req.signoffs.iter().any(|s| s.user_id == actor.user_id) {
            return Err(HavenError::SinglePartyAuthorization);
        }
        req.signoffs.push(Signoff { role, user_id: actor.user_id.clone(), at: self.now() });
        if req.signoffs_satisfy_policy() {
            let (mut vol, vv) = self.load::<Volume>(req.volume_id.as_str())?;
            self.set_airlock(actor, &mut vol, vv, AirlockMode::Internal)?;
            req.review_state = ReviewState::ApprovedInternal;
            req.airlock = AirlockMode::Internal;
        }
        self.save(actor.user_id.as_str(), "software.signoff", &req, v)?;
        Ok(req)
    }

    pub fn reject_software(&self, actor: &Actor, req_id: &RequestId) -> Result<SoftwareIngressRequest> {
        let _g = self.exclusive();
        let (mut req, v) = self.load::<SoftwareIngressRequest>(req_id.as_str())?;
        let (_, project) = self.live_env(&req.environment_id)?;
        let roles = project.roles_of(&actor.user_id);
        self.require_role(actor, &roles, &[Role::Investigator, Role::Referee], "reject software")?;
        if req.review_state != ReviewState::AwaitingReview {
            return Err(HavenError::Invalid(format!("{req_id} is not awaiting review")));
        }
        for (k, _) in self.store.backend().scan_prefix(&format!("{CONTENT_PREFIX}{}/", req.volume_id))? {
            self.store.backend().delete(&k)?;
        }
        req.review_state = ReviewState::Rejected;
        self.save(actor.user_id.as_str(), "software.reject", &req, v)?;
        Ok(req)
    }

    /// Adds a package or image to the list that may skip the airlock.
    pub fn pre_approve_software(&self, actor: &Actor, artifact_ref: &str) -> Result<PreApprovalRegistry> {
        let _g = self.exclusive();
        self.require_programme_manager(actor, "pre-approve software")?;
        let (mut reg, v) = self.find::<PreApprovalRegistry>(PreApprovalRegistry::ID)?.unwrap_or_default();
        reg.entries.insert(artifact_ref.into(), actor.user_id.clone());
        self.save(actor.user_id.as_str(), "software.pre_approve", &reg, v)?;
        Ok(reg)
    }

    pub fn software_request(&self, id: &RequestId) -> Result<SoftwareIngressRequest> {
        Ok(self.load::<SoftwareIngressRequest>(id.as_str())?.0)
    }

    pub fn read_software_inside(&self, req_id: &RequestId, path: &str) -> Result<Vec<u8>> {
        let req = self.software_request(req_id)?;
        if !req.airlock.readable_inside() {
            return Err(HavenError::SoftwareWindowClosed);
        }
        self.store
            .backend()
            .get(&content_key(&req.volume_id, path))?
            .ok_or_else(|| HavenError::not_found("file", path))
    }
}
