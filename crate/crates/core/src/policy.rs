//! Per-tier control matrix and blueprint conformance.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blueprint::{AccessProtocol, Blueprint, MirrorMode};
use crate::domain::Tier;

/// Maximum lag of a full package mirror behind the reference server (six weeks).
pub const FULL_MIRROR_MAX_LAG_DAYS: u32 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PackageMirror {
    DirectFromInternet,
    FullMirror { max_lag_days: u32 },
    WhitelistMirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InboundNetwork {
    Internet,
    Institutional,
    Restricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutboundNetwork {
    Internet,
    Isolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DevicePolicy {
    OpenAllowed,
    ManagedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhysicalSecurity {
    Open,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connection {
    SshAndDesktop,
    RemoteDesktopOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CopyPaste {
    AllowedWithApproval,
    ForbiddenByPolicyOnly,
    DisabledTechnically,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SoftwareIngressSignoff {
    UserDirect,
    InvestigatorSignoff,
    InvestigatorPlusReferee,
}

/// The resolved control set for one tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvironmentPolicy {
    pub package_mirror: PackageMirror,
    pub inbound_network: InboundNetwork,
    pub outbound_network: OutboundNetwork,
    pub device_policy: DevicePolicy,
    pub physical_security: PhysicalSecurity,
    pub connection: Connection,
    pub copy_paste: CopyPaste,
    pub software_ingress_signoff: SoftwareIngressSignoff,
    /// Referee scrutiny of classification. Anonymised-from-personal packages at
    /// Tier 0/1 also need a Referee; that is decided per package by the classifier set.
    pub referee_required: bool,
    /// New members must be counter-approved by provider representatives.
    pub provider_counter_approval: bool,
}

pub fn resolve_policy(tier: Tier) -> EnvironmentPolicy {
    use CopyPaste::*;
    use SoftwareIngressSignoff::*;
    match tier.level() {
        0 | 1 => EnvironmentPolicy {
            package_mirror: PackageMirror::DirectFromInternet,
            inbound_network: InboundNetwork::Internet,
            outbound_network: OutboundNetwork::Internet,
            device_policy: DevicePolicy::OpenAllowed,
            physical_security: PhysicalSecurity::Open,
            connection: Connection::SshAndDesktop,
            copy_paste: AllowedWithApproval,
            software_ingress_signoff: UserDirect,
            referee_required: false,
            provider_counter_approval: false,
        },
        2 => EnvironmentPolicy {
            package_mirror: PackageMirror::FullMirror { max_lag_days: FULL_MIRROR_MAX_LAG_DAYS },
            inbound_network: InboundNetwork::Institutional,
            outbound_network: OutboundNetwork::Isolated,
            device_policy: DevicePolicy::OpenAllowed,
            physical_security: PhysicalSecurity::Open,
            connection: Connection::RemoteDesktopOnly,
            copy_paste: ForbiddenByPolicyOnly,
            software_ingress_signoff: InvestigatorSignoff,
            referee_required: true,
            provider_counter_approval: false,
        },
        level => EnvironmentPolicy {
            package_mirror: PackageMirror::WhitelistMirror,
            inbound_network: InboundNetwork::Restricted,
            outbound_network: OutboundNetwork::Isolated,
            device_policy: DevicePolicy::ManagedOnly,
            physical_security: if level >= 4 { PhysicalSecurity::High } else { PhysicalSecurity::Medium },
            connection: Connection::RemoteDesktopOnly,
            copy_paste: DisabledTechnically,
            software_ingress_signoff: InvestigatorPlusReferee,
            referee_required: true,
            provider_counter_approval: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    PackageMirror,
    InboundNetwork,
    OutboundNetwork,
    DevicePolicy,
    PhysicalSecurity,
    Connection,
    CopyPaste,
    SoftwareIngressSignoff,
    RefereeRequired,
    ProviderCounterApproval,
    /// Mandatory multi-factor authentication on access nodes.
    AccessMfa,
    /// Volume kinds mounted in their required modes.
    VolumeModes,
    /// Local copies of version control, authoring and database services.
    InternalServices,
}

impl Control {
    /// The ten matrix controls, in table order.
    pub const MATRIX: [Control; 10] = [
        Control::PackageMirror,
        Control::InboundNetwork,
        Control::OutboundNetwork,
        Control::DevicePolicy,
        Control::PhysicalSecurity,
        Control::Connection,
        Control::CopyPaste,
        Control::SoftwareIngressSignoff,
        Control::RefereeRequired,
        Control::ProviderCounterApproval,
    ];

    pub const ALL: [Control; 13] = [
        Control::PackageMirror,
        Control::InboundNetwork,
        Control::OutboundNetwork,
        Control::DevicePolicy,
        Control::PhysicalSecurity,
        Control::Connection,
        Control::CopyPaste,
        Control::SoftwareIngressSignoff,
        Control::RefereeRequired,
        Control::ProviderCounterApproval,
        Control::AccessMfa,
        Control::VolumeModes,
        Control::InternalServices,
    ];
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().unwrap_or("control"))
    }
}

impl EnvironmentPolicy {
    /// Restrictiveness rank of one matrix control; higher is stricter.
    pub fn restrictiveness(&self, control: Control) -> Option<u8> {
        Some(match control {
            Control::PackageMirror => match self.package_mirror {
                PackageMirror::DirectFromInternet => 0,
                PackageMirror::FullMirror { .. } => 1,
                PackageMirror::WhitelistMirror => 2,
            },
            Control::InboundNetwork => self.inbound_network as u8,
            Control::OutboundNetwork => self.outbound_network as u8,
            Control::DevicePolicy => self.device_policy as u8,
            Control::PhysicalSecurity => self.physical_security as u8,
            Control::Connection => self.connection as u8,
            Control::CopyPaste => self.copy_paste as u8,
            Control::SoftwareIngressSignoff => self.software_ingress_signoff as u8,
            Control::RefereeRequired => self.referee_required as u8,
            Control::ProviderCounterApproval => self.provider_counter_approval as u8,
            _ => return None,
        })
    }

    /// The value of one matrix control, as it appears in the exported table.
    pub fn cell(&self, control: Control) -> Option<serde_json::Value> {
        let doc = serde_json::to_value(self).expect("policy serializes");
        let key = control.to_string();
        doc.get(&key).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub tier: Tier,
    pub policy: EnvironmentPolicy,
}

/// Versioned table of every tier's controls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMatrix {
    pub schema_version: u32,
    pub rows: Vec<PolicyRow>,
}

pub const POLICY_MATRIX_SCHEMA_VERSION: u32 = 1;

pub fn policy_matrix() -> PolicyMatrix {
    PolicyMatrix {
        schema_version: POLICY_MATRIX_SCHEMA_VERSION,
        rows: Tier::ALL.iter().map(|&tier| PolicyRow { tier, policy: resolve_policy(tier) }).collect(),
    }
}

// ---------------------------------------------------------------------------
// Blueprint conformance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceViolation {
    pub control: Control,
    /// Path of the offending blueprint element.
    pub element: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub violations: Vec<ConformanceViolation>,
}

impl ConformanceReport {
    pub fn conforms(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every blueprint element against the policy. Each control yields at
/// most one violation naming the first offending element.
pub fn validate_blueprint(bp: &Blueprint, policy: &EnvironmentPolicy) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    for control in Control::ALL {
        if let Some((element, detail)) = check_control(bp, policy, control) {
            report.violations.push(ConformanceViolation { control, element: element.into(), detail });
        }
    }
    report
}

fn check_control(bp: &Blueprint, p: &EnvironmentPolicy, control: Control) -> Option<(&'static str, String)> {
    let mismatch = |element: &'static str, want: &dyn fmt::Debug, got: &dyn fmt::Debug| {
        Some((element, format!("{control}={want:?} but blueprint has {got:?}")))
    };
    match control {
        Control::PackageMirror => {
            let m = &bp.mirror_config;
            match p.package_mirror {
                PackageMirror::DirectFromInternet => {
                    if m.mode != MirrorMode::None {
                        return mismatch("mirror_config.mode", &MirrorMode::None, &m.mode);
                    }
                }
                PackageMirror::FullMirror { max_lag_days } => {
                    if m.mode != MirrorMode::Full {
                        return mismatch("mirror_config.mode", &MirrorMode::Full, &m.mode);
                    }
                    match m.max_lag_days {
                        Some(lag) if lag <= max_lag_days => {}
                        got => {
                            return Some((
                                "mirror_config.max_lag_days",
                                format!("{control}: full mirror lag must be at most {max_lag_days} days, got {got:?}"),
                            ))
                        }
                    }
                    if !m.fast_track_security {
                        return Some((
                            "mirror_config.fast_track_security",
                            format!("{control}: critical security updates must be fast-tracked"),
                        ));
                    }
                }
                PackageMirror::WhitelistMirror => {
                    if m.mode != MirrorMode::Whitelist {
                        return mismatch("mirror_config.mode", &MirrorMode::Whitelist, &m.mode);
                    }
                    if m.whitelist_ref.as_deref().is_none_or(str::is_empty) {
                        return Some(("mirror_config.whitelist_ref", format!("{control}: whitelist reference missing")));
                    }
                }
            }
            None
        }
        Control::InboundNetwork => (bp.network.inbound != p.inbound_network)
            .then(|| ("network.inbound", format!("{control}={:?} but blueprint admits {:?}", p.inbound_network, bp.network.inbound))),
        Control::OutboundNetwork => {
            if bp.network.outbound != p.outbound_network {
                return mismatch("network.outbound", &p.outbound_network, &bp.network.outbound);
            }
            let isolated = p.outbound_network == OutboundNetwork::Isolated;
            (bp.network.internal_isolated != isolated).then(|| {
                ("network.internal_isolated", format!("{control}={:?} requires internal_isolated={isolated}", p.outbound_network))
            })
        }
        Control::DevicePolicy => (bp.access_node.device_policy != p.device_policy)
            .then(|| ("access_node.device_policy", format!("{control}={:?} but blueprint has {:?}", p.device_policy, bp.access_node.device_policy))),
        Control::PhysicalSecurity => (bp.access_node.physical_security != p.physical_security).then(|| {
            ("access_node.physical_security", format!("{control}={:?} but blueprint has {:?}", p.physical_security, bp.access_node.physical_security))
        }),
        Control::Connection => {
            let want = match p.connection {
                Connection::SshAndDesktop => AccessProtocol::Both,
                Connection::RemoteDesktopOnly => AccessProtocol::RemoteDesktop,
            };
            (bp.access_node.protocol != want)
                .then(|| ("access_node.protocol", format!("{control}={:?} requires {want:?}, got {:?}", p.connection, bp.access_node.protocol)))
        }
        Control::CopyPaste => {
            let a = &bp.access_node;
            if a.copy_paste != p.copy_paste {
                return mismatch("access_node.copy_paste", &p.copy_paste, &a.copy_paste);
            }
            if p.copy_paste != CopyPaste::AllowedWithApproval {
                if a.clipboard_sharing {
                    return Some(("access_node.clipboard_sharing", format!("{control}={:?} forbids clipboard sharing", p.copy_paste)));
                }
                if a.disk_sharing {
                    return Some(("access_node.disk_sharing", format!("{control}={:?} forbids disk sharing", p.copy_paste)));
                }
            }
            None
        }
        Control::SoftwareIngressSignoff => {
            let s = &bp.software_ingress;
            if s.signoff != p.software_ingress_signoff {
                return mismatch("software_ingress.signoff", &p.software_ingress_signoff, &s.signoff);
            }
            let airlock = p.software_ingress_signoff != SoftwareIngressSignoff::UserDirect;
            (s.airlock != airlock)
                .then(|| ("software_ingress.airlock", format!("{control}={:?} requires airlock={airlock}", p.software_ingress_signoff)))
        }
        Control::RefereeRequired => (bp.governance.referee_required != p.referee_required)
            .then(|| ("governance.referee_required", format!("{control}={}", p.referee_required))),
        Control::ProviderCounterApproval => (bp.governance.member_counter_approval != p.provider_counter_approval)
            .then(|| ("governance.member_counter_approval", format!("{control}={}", p.provider_counter_approval))),
        Control::AccessMfa => (!bp.access_node.mfa_required)
            .then(|| ("access_node.mfa_required", "access nodes require two-factor authentication".to_string())),
        Control::VolumeModes => {
            let bad = bp.volumes.iter().find(|v| !v.kind.mounted_modes().contains(&v.mode))?;
            Some(("volumes", format!("{} ({:?}) may not be mounted {:?}", bad.name, bad.kind, bad.mode)))
        }
        Control::InternalServices => {
            let isolated = p.outbound_network == OutboundNetwork::Isolated;
            (bp.internal_services.is_empty() == isolated).then(|| {
                let what = if isolated { "required in isolated environments" } else { "only provided in isolated environments" };
                ("internal_services", format!("internal services {what}"))
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Access decisions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceClass {
    Open,
    Managed,
}

/// A user device trying to reach an environment's access node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessAttempt {
    pub device: DeviceClass,
    pub origin: InboundNetwork,
    /// False for a managed laptop roaming away from the Restricted network.
    pub on_restricted_network: bool,
    pub space: PhysicalSecurity,
}

pub fn check_access(policy: &EnvironmentPolicy, attempt: &AccessAttempt) -> Result<(), Control> {
    let origin_ok = match policy.inbound_network {
        InboundNetwork::Internet => true,
        InboundNetwork::Institutional => attempt.origin >= InboundNetwork::Institutional,
        InboundNetwork::Restricted => attempt.origin == InboundNetwork::Restricted && attempt.on_restricted_network,
    };
    if !origin_ok {
        return Err(Control::InboundNetwork);
    }
    if policy.device_policy == DevicePolicy::ManagedOnly
        && (attempt.device != DeviceClass::Managed || !attempt.on_restricted_network)
    {
        return Err(Control::DevicePolicy);
    }
    if attempt.space < policy.physical_security {
        return Err(Control::PhysicalSecurity);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_cells() {
        assert_eq!(resolve_policy(Tier::T2).copy_paste, CopyPaste::ForbiddenByPolicyOnly);
        assert_eq!(resolve_policy(Tier::T2).package_mirror, PackageMirror::FullMirror { max_lag_days: 42 });
        assert_eq!(resolve_policy(Tier::T0).inbound_network, InboundNetwork::Internet);
        assert_eq!(resolve_policy(Tier::T4).physical_security, PhysicalSecurity::High);
    }

    #[test]
    fn controls_never_relax_with_tier() {
        for pair in Tier::ALL.windows(2) {
            let (lo, hi) = (resolve_policy(pair[0]), resolve_policy(pair[1]));
            for c in Control::MATRIX {
                assert!(lo.restrictiveness(c) <= hi.restrictiveness(c), "{c} relaxes from {} to {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn every_matrix_cell_is_exported() {
        for t in Tier::ALL {
            let p = resolve_policy(t);
            for c in Control::MATRIX {
                assert!(p.cell(c).is_some(), "{c}");
            }
        }
    }

    fn attempt(device: DeviceClass, origin: InboundNetwork, on_restricted: bool, space: PhysicalSecurity) -> AccessAttempt {
        AccessAttempt { device, origin, on_restricted_network: on_restricted, space }
    }

    #[test]
    fn open_devices_reach_tier_two_but_not_three() {
        let a = attempt(DeviceClass::Open, InboundNetwork::Institutional, false, PhysicalSecurity::Open);
        assert_eq!(check_access(&resolve_policy(Tier::T2), &a), Ok(()));
        assert!(check_access(&resolve_policy(Tier::T3), &a).is_err());
    }

    #[test]
    fn roaming_managed_laptop_is_refused_at_tier_three() {
        let a = attempt(DeviceClass::Managed, InboundNetwork::Restricted, false, PhysicalSecurity::Medium);
        assert!(check_access(&resolve_policy(Tier::T3), &a).is_err());
        let home = AccessAttempt { on_restricted_network: true, ..a };
        assert_eq!(check_access(&resolve_policy(Tier::T3), &home), Ok(()));
        assert_eq!(check_access(&resolve_policy(Tier::T4), &home), Err(Control::PhysicalSecurity));
    }

    #[test]
    fn internet_origin_refused_at_tier_two() {
        let a = attempt(DeviceClass::Open, InboundNetwork::Internet, false, PhysicalSecurity::Open);
        assert_eq!(check_access(&resolve_policy(Tier::T2), &a), Err(Control::InboundNetwork));
        assert_eq!(check_access(&resolve_policy(Tier::T1), &a), Ok(()));
    }
}
