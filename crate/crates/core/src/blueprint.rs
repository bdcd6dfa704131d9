//! Declarative environment plans.
//!
//! A [`Blueprint`] describes volumes, network rules, the access node and the
//! package mirror of one environment. Blueprints are documents only; a
//! [`crate::platform::PlatformDriver`] turns them into infrastructure.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classification::ConsensusOutcome;
use crate::domain::{
    EnvironmentPurpose, Lineage, Tier, Volume, VolumeKind, VolumeMode, VolumeState, WorkPackage,
};
use crate::domain::{Environment, EnvironmentState};
use crate::ids::{DatasetId, EnvironmentId, PlatformId, VolumeId, WorkPackageId};
use crate::policy::{
    resolve_policy, Connection, CopyPaste, DevicePolicy, EnvironmentPolicy, InboundNetwork, OutboundNetwork,
    PackageMirror, PhysicalSecurity, SoftwareIngressSignoff, FULL_MIRROR_MAX_LAG_DAYS,
};

pub const BLUEPRINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPlan {
    /// Class of network admitted to the access node.
    pub inbound: InboundNetwork,
    /// Address ranges configured for that class.
    pub inbound_ranges: Vec<ipnet::IpNet>,
    pub outbound: OutboundNetwork,
    pub internal_isolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessProtocol {
    RemoteDesktop,
    Ssh,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessNodePlan {
    pub protocol: AccessProtocol,
    pub mfa_required: bool,
    pub clipboard_sharing: bool,
    pub disk_sharing: bool,
    pub copy_paste: CopyPaste,
    pub device_policy: DevicePolicy,
    pub physical_security: PhysicalSecurity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MirrorMode {
    /// No internal mirror; install from the reference package servers.
    None,
    Full,
    Whitelist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorConfig {
    pub mode: MirrorMode,
    pub max_lag_days: Option<u32>,
    pub whitelist_ref: Option<String>,
    pub fast_track_security: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftwareIngressPlan {
    pub signoff: SoftwareIngressSignoff,
    /// Whether a software-ingress airlock volume is provisioned.
    pub airlock: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernancePlan {
    pub referee_required: bool,
    pub member_counter_approval: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub name: String,
    pub kind: VolumeKind,
    pub mode: VolumeMode,
    pub dataset_id: Option<DatasetId>,
    /// Existing volume to mount instead of creating a new one.
    pub source_volume_id: Option<VolumeId>,
    /// Automatic deletion period for scratch space.
    pub retention_days: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InternalService {
    VersionControl,
    PaperAuthoring,
    RelationalDatabase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeRequest {
    pub node_count: u32,
    pub many_core: bool,
}

impl Default for ComputeRequest {
    fn default() -> Self {
        ComputeRequest { node_count: 1, many_core: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blueprint {
    pub schema_version: u32,
    pub environment_id: EnvironmentId,
    pub work_package_id: WorkPackageId,
    pub tier: Tier,
    pub platform_id: PlatformId,
    pub purpose: EnvironmentPurpose,
    pub network: NetworkPlan,
    pub access_node: AccessNodePlan,
    pub mirror_config: MirrorConfig,
    pub software_ingress: SoftwareIngressPlan,
    pub governance: GovernancePlan,
    pub volumes: Vec<VolumeSpec>,
    pub internal_services: Vec<InternalService>,
    pub compute: ComputeRequest,
    pub tool_manifest_ref: String,
    pub lineage: Option<Lineage>,
}

impl Blueprint {
    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_string(self)
    }

    pub fn digest(&self) -> String {
        crate::canonical::digest(self)
    }

    pub fn count(&self, kind: VolumeKind) -> usize {
        self.volumes.iter().filter(|v| v.kind == kind).count()
    }

    /// Shape problems independent of any policy.
    pub fn structural_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != BLUEPRINT_SCHEMA_VERSION {
            out.push(format!("unsupported schema_version {}", self.schema_version));
        }
        for kind in [
            VolumeKind::SecureDocument,
            VolumeKind::SecureScratch,
            VolumeKind::Output,
            VolumeKind::Software,
            VolumeKind::Home,
        ] {
            if self.count(kind) != 1 {
                out.push(format!("exactly one {kind:?} volume required, found {}", self.count(kind)));
            }
        }
        if self.count(VolumeKind::SecureData) == 0 {
            out.push("at least one SecureData volume required".into());
        }
        let airlocks = self.count(VolumeKind::SoftwareIngress);
        if airlocks != usize::from(self.software_ingress.airlock) {
            out.push(format!("software_ingress.airlock={} but {airlocks} airlock volumes", self.software_ingress.airlock));
        }
        if self.tier >= Tier::T2 && (self.access_node.clipboard_sharing || self.access_node.disk_sharing) {
            out.push("clipboard and disk sharing must be off at Tier 2 and above".into());
        }
        let names: BTreeSet<&str> = self.volumes.iter().map(|v| v.name.as_str()).collect();
        if names.len() != self.volumes.len() {
            out.push("volume names must be unique".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("work package {0} has no agreed tier")]
    TierUnset(WorkPackageId),
    #[error("requested {requested} but work package {wp} was agreed at {agreed}")]
    TierMismatch { wp: WorkPackageId, requested: Tier, agreed: Tier },
    #[error("initial ingress environments are Tier 3, not {0}")]
    InitialIngressTier(Tier),
    #[error("unknown platform {0}")]
    UnknownPlatform(PlatformId),
    #[error("source environment {0} is not active")]
    SourceNotActive(EnvironmentId),
    #[error("output volume {0} is not sealed")]
    OutputNotSealed(VolumeId),
    #[error("volume {0} is not an output volume of the source environment")]
    NotSourceOutput(VolumeId),
    #[error("no recorded consensus for work package {0} at the requested tier")]
    MissingConsensus(WorkPackageId),
    #[error("work package {0} is not derived from the source environment")]
    LineageMismatch(WorkPackageId),
    #[error("lineage edge {child} -> {parent} would create a cycle")]
    LineageCycle { child: EnvironmentId, parent: EnvironmentId },
}

/// Deployment-wide planning defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub platforms: BTreeSet<PlatformId>,
    pub scratch_retention_days: u32,
    pub mirror_max_lag_days: u32,
    pub whitelist_ref: String,
    pub tool_manifest_ref: String,
    pub compute: ComputeRequest,
    pub network_ranges: BTreeMap<String, Vec<ipnet::IpNet>>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            platforms: [PlatformId::new("sim")].into(),
            scratch_retention_days: 7,
            mirror_max_lag_days: FULL_MIRROR_MAX_LAG_DAYS,
            whitelist_ref: "whitelist/default".into(),
            tool_manifest_ref: "tools/default".into(),
            compute: ComputeRequest::default(),
            network_ranges: BTreeMap::new(),
        }
    }
}

impl PlannerConfig {
    fn ranges_for(&self, class: InboundNetwork) -> Vec<ipnet::IpNet> {
        let key = match class {
            InboundNetwork::Internet => "internet",
            InboundNetwork::Institutional => "institutional",
            InboundNetwork::Restricted => "restricted",
        };
        let mut ranges = self.network_ranges.get(key).cloned().unwrap_or_default();
        // Restricted networks are institutional networks too.
        if class == InboundNetwork::Institutional {
            ranges.extend(self.network_ranges.get("restricted").cloned().unwrap_or_default());
        }
        ranges.sort();
        ranges.dedup();
        ranges
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanMode {
    /// The work package has an agreed tier.
    Final,
    /// Initial deposit before full classification; always Tier 3.
    InitialIngress,
}

pub struct PlanRequest<'a> {
    pub environment_id: EnvironmentId,
    pub work_package: &'a WorkPackage,
    pub tier: Tier,
    pub platform_id: PlatformId,
    pub mode: PlanMode,
}

fn base_blueprint(
    config: &PlannerConfig,
    environment_id: EnvironmentId,
    work_package_id: WorkPackageId,
    tier: Tier,
    platform_id: PlatformId,
    purpose: EnvironmentPurpose,
    data_volumes: Vec<VolumeSpec>,
) -> Blueprint {
    let policy: EnvironmentPolicy = resolve_policy(tier);
    let isolated = policy.outbound_network == OutboundNetwork::Isolated;
    let mirror_config = match policy.package_mirror {
        PackageMirror::DirectFromInternet => {
            MirrorConfig { mode: MirrorMode::None, max_lag_days: None, whitelist_ref: None, fast_track_security: false }
        }
        PackageMirror::FullMirror { max_lag_days } => MirrorConfig {
            mode: MirrorMode::Full,
            max_lag_days: Some(config.mirror_max_lag_days.min(max_lag_days)),
            whitelist_ref: None,
            fast_track_security: true,
        },
        PackageMirror::WhitelistMirror => MirrorConfig {
            mode: MirrorMode::Whitelist,
            max_lag_days: None,
            whitelist_ref: Some(config.whitelist_ref.clone()),
            fast_track_security: true,
        },
    };
    let airlock = policy.software_ingress_signoff != SoftwareIngressSignoff::UserDirect;

    let mut volumes = data_volumes;
    let fixed = |name: &str, kind, mode, retention| VolumeSpec {
        name: name.into(),
        kind,
        mode,
        dataset_id: None,
        source_volume_id: None,
        retention_days: retention,
    };
    volumes.push(fixed("secure-document", VolumeKind::SecureDocument, VolumeMode::ReadOnly, None));
    volumes.push(fixed(
        "secure-scratch",
        VolumeKind::SecureScratch,
        VolumeMode::ReadWrite,
        Some(config.scratch_retention_days),
    ));
    volumes.push(fixed("output", VolumeKind::Output, VolumeMode::ReadWrite, None));
    volumes.push(fixed("software", VolumeKind::Software, VolumeMode::ReadOnly, None));
    volumes.push(fixed("home", VolumeKind::Home, VolumeMode::ReadWrite, None));
    if airlock {
        volumes.push(fixed("software-ingress", VolumeKind::SoftwareIngress, VolumeMode::ReadOnly, None));
    }

    Blueprint {
        schema_version: BLUEPRINT_SCHEMA_VERSION,
        environment_id,
        work_package_id,
        tier,
        platform_id,
        purpose,
        network: NetworkPlan {
            inbound: policy.inbound_network,
            inbound_ranges: config.ranges_for(policy.inbound_network),
            outbound: policy.outbound_network,
            internal_isolated: isolated,
        },
        access_node: AccessNodePlan {
            protocol: match policy.connection {
                Connection::SshAndDesktop => AccessProtocol::Both,
                Connection::RemoteDesktopOnly => AccessProtocol::RemoteDesktop,
            },
            mfa_required: true,
            clipboard_sharing: false,
            disk_sharing: false,
            copy_paste: policy.copy_paste,
            device_policy: policy.device_policy,
            physical_security: policy.physical_security,
        },
        mirror_config,
        software_ingress: SoftwareIngressPlan { signoff: policy.software_ingress_signoff, airlock },
        governance: GovernancePlan {
            referee_required: policy.referee_required,
            member_counter_approval: policy.provider_counter_approval,
        },
        volumes,
        internal_services: if isolated {
            vec![InternalService::VersionControl, InternalService::PaperAuthoring, InternalService::RelationalDatabase]
        } else {
            Vec::new()
        },
        compute: config.compute.clone(),
        tool_manifest_ref: config.tool_manifest_ref.clone(),
        lineage: None,
    }
}

/// Plans the environment for a work package at its tier. Deterministic.
pub fn plan_environment(config: &PlannerConfig, req: &PlanRequest<'_>) -> Result<Blueprint, PlanError> {
    let wp = req.work_package;
    match req.mode {
        PlanMode::Final => match wp.final_tier {
            None => return Err(PlanError::TierUnset(wp.id.clone())),
            Some(agreed) if agreed != req.tier => {
                return Err(PlanError::TierMismatch { wp: wp.id.clone(), requested: req.tier, agreed })
            }
            Some(_) => {}
        },
        PlanMode::InitialIngress if req.tier != Tier::T3 => return Err(PlanError::InitialIngressTier(req.tier)),
        PlanMode::InitialIngress => {}
    }
    if !config.platforms.contains(&req.platform_id) {
        return Err(PlanError::UnknownPlatform(req.platform_id.clone()));
    }
    let data = wp
        .dataset_ids
        .iter()
        .map(|d| VolumeSpec {
            name: format!("secure-data/{d}"),
            kind: VolumeKind::SecureData,
            mode: VolumeMode::ReadOnly,
            dataset_id: Some(d.clone()),
            source_volume_id: None,
            retention_days: None,
        })
        .collect();
    let purpose = match req.mode {
        PlanMode::InitialIngress => EnvironmentPurpose::InitialIngress,
        PlanMode::Final => EnvironmentPurpose::Analysis,
    };
    Ok(base_blueprint(
        config,
        req.environment_id.clone(),
        wp.id.clone(),
        req.tier,
        req.platform_id.clone(),
        purpose,
        data,
    ))
}

pub struct DerivedPlanRequest<'a> {
    pub environment_id: EnvironmentId,
    pub source_environment: &'a Environment,
    pub output_volume: &'a Volume,
    /// The derived work package created at egress.
    pub work_package: &'a WorkPackage,
    pub new_tier: Tier,
    pub consensus: Option<&'a ConsensusOutcome>,
    pub platform_id: PlatformId,
    pub purpose: EnvironmentPurpose,
}

/// Plans an environment whose secure data is the sealed output of another.
pub fn plan_derived_environment(config: &PlannerConfig, req: &DerivedPlanRequest<'_>) -> Result<Blueprint, PlanError> {
    let src = req.source_environment;
    let out = req.output_volume;
    let wp = req.work_package;
    if src.state != EnvironmentState::Active {
        return Err(PlanError::SourceNotActive(src.id.clone()));
    }
    if out.kind != VolumeKind::Output || !src.volume_ids.contains(&out.id) {
        return Err(PlanError::NotSourceOutput(out.id.clone()));
    }
    if out.state != VolumeState::Sealed {
        return Err(PlanError::OutputNotSealed(out.id.clone()));
    }
    let lineage = wp.derived_from.clone().ok_or_else(|| PlanError::LineageMismatch(wp.id.clone()))?;
    if lineage.source_environment_id != src.id || lineage.output_volume_id != out.id {
        return Err(PlanError::LineageMismatch(wp.id.clone()));
    }
    let agreed = req.consensus.filter(|c| c.permits_activation()).and_then(|c| c.tier);
    if agreed != Some(req.new_tier) || wp.final_tier != Some(req.new_tier) {
        return Err(PlanError::MissingConsensus(wp.id.clone()));
    }
    if !config.platforms.contains(&req.platform_id) {
        return Err(PlanError::UnknownPlatform(req.platform_id.clone()));
    }
    let data = vec![VolumeSpec {
        name: format!("secure-data/{}", out.id),
        kind: VolumeKind::SecureData,
        mode: VolumeMode::ReadOnly,
        dataset_id: None,
        source_volume_id: Some(out.id.clone()),
        retention_days: None,
    }];
    let mut bp = base_blueprint(
        config,
        req.environment_id.clone(),
        wp.id.clone(),
        req.new_tier,
        req.platform_id.clone(),
        req.purpose,
        data,
    );
    bp.lineage = Some(lineage);
    Ok(bp)
}

/// Derivation edges between environments; kept acyclic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageGraph {
    parents: BTreeMap<EnvironmentId, EnvironmentId>,
}

impl LineageGraph {
    pub fn from_environments<'a>(envs: impl IntoIterator<Item = &'a Environment>) -> Result<Self, PlanError> {
        let mut g = LineageGraph::default();
        for e in envs {
            if let Some(p) = &e.derived_from_environment_id {
                g.add(e.id.clone(), p.clone())?;
            }
        }
        Ok(g)
    }

    pub fn add(&mut self, child: EnvironmentId, parent: EnvironmentId) -> Result<(), PlanError> {
        let cycle = child == parent || self.ancestors(&parent).contains(&child);
        if cycle || self.parents.get(&child).is_some_and(|p| p != &parent) {
            return Err(PlanError::LineageCycle { child, parent });
        }
        self.parents.insert(child, parent);
        Ok(())
    }

    pub fn parent(&self, env: &EnvironmentId) -> Option<&EnvironmentId> {
        self.parents.get(env)
    }

    /// Nearest first.
    pub fn ancestors(&self, env: &EnvironmentId) -> Vec<EnvironmentId> {
        let mut out = Vec::new();
        let mut cur = env;
        while let Some(p) = self.parents.get(cur) {
            if out.contains(p) {
                break;
            }
            out.push(p.clone());
            cur = p;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classification::{ConsensusKind, ConsensusOutcome};
    use crate::domain::{DocRef, WorkPackageState};
    use crate::policy::validate_blueprint;

    fn wp(tier: Option<Tier>, datasets: &[&str]) -> WorkPackage {
        let mut w = WorkPackage::draft("wp-1".into(), "prj-1".into(), datasets.iter().map(|d| DatasetId::from(*d)).collect());
        w.final_tier = tier;
        if tier.is_some() {
            w.state = WorkPackageState::ConsensusReached;
        }
        w
    }

    fn plan(w: &WorkPackage, tier: Tier) -> Result<Blueprint, PlanError> {
        plan_environment(
            &PlannerConfig::default(),
            &PlanRequest {
                environment_id: "env-1".into(),
                work_package: w,
                tier,
                platform_id: "sim".into(),
                mode: PlanMode::Final,
            },
        )
    }

    #[test]
    fn tier_three_two_datasets() {
        let bp = plan(&wp(Some(Tier::T3), &["ds-a", "ds-b"]), Tier::T3).unwrap();
        assert_eq!(bp.count(VolumeKind::SecureData), 2);
        assert_eq!(bp.network.inbound, InboundNetwork::Restricted);
        assert_eq!(bp.network.outbound, OutboundNetwork::Isolated);
        assert_eq!(bp.mirror_config.mode, MirrorMode::Whitelist);
        assert!(bp.structural_problems().is_empty());
    }

    #[test]
    fn tier_zero_has_no_mirror_and_internet_access() {
        let bp = plan(&wp(Some(Tier::T0), &["ds-a"]), Tier::T0).unwrap();
        assert_eq!(bp.mirror_config.mode, MirrorMode::None);
        assert_eq!(bp.network.inbound, InboundNetwork::Internet);
        assert_eq!(bp.network.outbound, OutboundNetwork::Internet);
        assert!(bp.internal_services.is_empty());
        assert_eq!(bp.count(VolumeKind::SoftwareIngress), 0);
    }

    #[test]
    fn planning_is_deterministic_and_conforms() {
        for t in Tier::ALL {
            let w = wp(Some(t), &["ds-b", "ds-a"]);
            let a = plan(&w, t).unwrap();
            let b = plan(&w, t).unwrap();
            assert_eq!(a.to_canonical_json(), b.to_canonical_json());
            assert!(validate_blueprint(&a, &resolve_policy(t)).conforms(), "{t}");
            assert!(a.access_node.mfa_required);
        }
    }

    #[test]
    fn unset_tier_and_unknown_platform_are_errors() {
        assert_eq!(plan(&wp(None, &["ds-a"]), Tier::T2), Err(PlanError::TierUnset("wp-1".into())));
        let w = wp(Some(Tier::T2), &["ds-a"]);
        let err = plan_environment(
            &PlannerConfig::default(),
            &PlanRequest { environment_id: "env-1".into(), work_package: &w, tier: Tier::T2, platform_id: "nowhere".into(), mode: PlanMode::Final },
        );
        assert_eq!(err, Err(PlanError::UnknownPlatform("nowhere".into())));
    }

    #[test]
    fn initial_ingress_is_tier_three_without_final_tier() {
        let w = wp(None, &["ds-a"]);
        let req = |tier| PlanRequest { environment_id: "env-1".into(), work_package: &w, tier, platform_id: "sim".into(), mode: PlanMode::InitialIngress };
        assert_eq!(plan_environment(&PlannerConfig::default(), &req(Tier::T3)).unwrap().purpose, EnvironmentPurpose::InitialIngress);
        assert!(plan_environment(&PlannerConfig::default(), &req(Tier::T2)).is_err());
    }

    fn source_env() -> (Environment, Volume) {
        let out = Volume {
            id: "vol-out".into(),
            project_id: "prj-1".into(),
            kind: VolumeKind::Output,
            mode: VolumeMode::ReadOnly,
            environment_id: Some("env-src".into()),
            dataset_id: None,
            state: VolumeState::Sealed,
        };
        let env = Environment {
            id: "env-src".into(),
            work_package_id: "wp-0".into(),
            project_id: "prj-1".into(),
            tier: Tier::T3,
            platform_id: "sim".into(),
            purpose: EnvironmentPurpose::Analysis,
            state: EnvironmentState::Active,
            blueprint_ref: String::new(),
            volume_ids: vec![out.id.clone()],
            derived_from_environment_id: None,
            deployment_software: vec![],
        };
        (env, out)
    }

    fn derived_wp(tier: Tier) -> WorkPackage {
        let mut w = wp(Some(tier), &["ds-a"]);
        w.derived_from = Some(Lineage {
            source_work_package_id: "wp-0".into(),
            source_environment_id: "env-src".into(),
            analysis_script_ref: DocRef::new("scripts/pseudonymise.py"),
            output_volume_id: "vol-out".into(),
        });
        w
    }

    fn agreed(t: Tier) -> ConsensusOutcome {
        ConsensusOutcome { kind: ConsensusKind::Agreed, tier: Some(t), dissenting_decisions: vec![], missing: vec![] }
    }

    #[test]
    fn derived_environment_mounts_sealed_output() {
        let (env, out) = source_env();
        let w = derived_wp(Tier::T2);
        let c = agreed(Tier::T2);
        let req = DerivedPlanRequest {
            environment_id: "env-new".into(),
            source_environment: &env,
            output_volume: &out,
            work_package: &w,
            new_tier: Tier::T2,
            consensus: Some(&c),
            platform_id: "sim".into(),
            purpose: EnvironmentPurpose::Derived,
        };
        let bp = plan_derived_environment(&PlannerConfig::default(), &req).unwrap();
        let data: Vec<_> = bp.volumes.iter().filter(|v| v.kind == VolumeKind::SecureData).collect();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].source_volume_id, Some(out.id.clone()));
        assert_eq!(bp.lineage.as_ref().unwrap().source_environment_id, env.id);
        assert!(validate_blueprint(&bp, &resolve_policy(Tier::T2)).conforms());

        let unsealed = Volume { state: VolumeState::Open, ..out.clone() };
        let bad = DerivedPlanRequest { output_volume: &unsealed, ..req };
        assert_eq!(plan_derived_environment(&PlannerConfig::default(), &bad), Err(PlanError::OutputNotSealed(out.id.clone())));
    }

    #[test]
    fn derived_environment_requires_consensus() {
        let (env, out) = source_env();
        let w = derived_wp(Tier::T3);
        let req = DerivedPlanRequest {
            environment_id: "env-new".into(),
            source_environment: &env,
            output_volume: &out,
            work_package: &w,
            new_tier: Tier::T3,
            consensus: None,
            platform_id: "sim".into(),
            purpose: EnvironmentPurpose::Derived,
        };
        assert!(matches!(plan_derived_environment(&PlannerConfig::default(), &req), Err(PlanError::MissingConsensus(_))));
        let c = agreed(Tier::T3);
        let ok = DerivedPlanRequest { consensus: Some(&c), ..req };
        assert!(plan_derived_environment(&PlannerConfig::default(), &ok).is_ok());
    }

    #[test]
    fn lineage_rejects_cycles() {
        let mut g = LineageGraph::default();
        g.add("env-b".into(), "env-a".into()).unwrap();
        g.add("env-c".into(), "env-b".into()).unwrap();
        assert_eq!(g.ancestors(&"env-c".into()), vec![EnvironmentId::from("env-b"), EnvironmentId::from("env-a")]);
        assert!(g.add("env-a".into(), "env-c".into()).is_err());
        assert!(g.add("env-a".into(), "env-a".into()).is_err());
    }
}
