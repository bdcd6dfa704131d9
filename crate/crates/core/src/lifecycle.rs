//! Work package state machine.
//!
//! [`transition`] is pure: given the current state, an event and the
//! evaluated guards it returns the next state or the reason it is refused.
//! [`transition_table`] is the same machine as data; it is published to
//! `docs/transitions.json` and the tests replay that file against
//! [`transition`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::classification::ConsensusKind;
use crate::domain::{Role, Tier, WorkPackageState};

use WorkPackageState as S;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    InitialClassify { provisional: Tier },
    CompleteInitialIngress,
    BeginFullClassification,
    RecordConsensus { kind: ConsensusKind },
    /// Any classifier suspects Tier 4 before analysis starts.
    RaiseTier4,
    AcknowledgeHalt,
    StartAnalysis,
    RequestEgress,
    ResolveEgress,
    Supersede,
    Close,
}

impl Event {
    /// Label used in the published table.
    pub fn label(&self) -> String {
        match self {
            Event::InitialClassify { provisional } if *provisional == Tier::T4 => "InitialClassify(T4)".into(),
            Event::InitialClassify { .. } => "InitialClassify".into(),
            Event::RecordConsensus { kind } => format!("RecordConsensus({kind:?})"),
            other => format!("{other:?}"),
        }
    }

    /// One representative of every label.
    pub fn samples() -> Vec<Event> {
        vec![
            Event::InitialClassify { provisional: Tier::T2 },
            Event::InitialClassify { provisional: Tier::T4 },
            Event::CompleteInitialIngress,
            Event::BeginFullClassification,
            Event::RecordConsensus { kind: ConsensusKind::Agreed },
            Event::RecordConsensus { kind: ConsensusKind::ProceedAtMax },
            Event::RecordConsensus { kind: ConsensusKind::Disagreement },
            Event::RecordConsensus { kind: ConsensusKind::Tier4Halt },
            Event::RaiseTier4,
            Event::AcknowledgeHalt,
            Event::StartAnalysis,
            Event::RequestEgress,
            Event::ResolveEgress,
            Event::Supersede,
            Event::Close,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineState {
    pub state: WorkPackageState,
    pub halted: bool,
}

impl MachineState {
    pub fn new(state: WorkPackageState, halted: bool) -> Self {
        MachineState { state, halted }
    }
}

/// Guard inputs, evaluated by the caller against the store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guards {
    /// A Programme Manager reviewed an earlier halt; Tier 4 no longer halts.
    pub tier4_acknowledged: bool,
    /// Every dataset has a sealed deposit in the initial Tier 3 environment.
    pub initial_ingress_sealed: bool,
    /// A stored consensus outcome permits activation at the package's tier.
    pub consensus_recorded: bool,
    pub agreements_signed: bool,
    /// Personal data present and no DPIA reference recorded.
    pub dpia_missing: bool,
    /// The derived package opened by the pending egress has reached consensus.
    pub derived_classified: bool,
}

impl Guards {
    pub fn all_met() -> Self {
        Guards {
            tier4_acknowledged: false,
            initial_ingress_sealed: true,
            consensus_recorded: true,
            agreements_signed: true,
            dpia_missing: false,
            derived_classified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum LifecycleError {
    #[error("{event} is not a legal transition from {from:?}")]
    IllegalTransition { from: WorkPackageState, event: String },
    #[error("work package is halted pending programme manager review")]
    Halted,
    #[error("guard not met: {0}")]
    GuardFailed(String),
}

fn guard(ok: bool, what: &str) -> Result<(), LifecycleError> {
    if ok {
        Ok(())
    } else {
        Err(LifecycleError::GuardFailed(what.into()))
    }
}

pub fn transition(current: MachineState, event: Event, g: &Guards) -> Result<MachineState, LifecycleError> {
    let illegal = || LifecycleError::IllegalTransition { from: current.state, event: event.label() };
    if current.halted {
        return match event {
            Event::AcknowledgeHalt => Ok(MachineState::new(S::Draft, false)),
            Event::Close => Ok(MachineState::new(S::Closed, false)),
            _ => Err(LifecycleError::Halted),
        };
    }
    let next = match (current.state, event) {
        (S::Draft, Event::InitialClassify { provisional }) => {
            if provisional == Tier::T4 && !g.tier4_acknowledged {
                return Ok(MachineState::new(S::Draft, true));
            }
            S::InitialClassified
        }
        (S::InitialClassified, Event::CompleteInitialIngress) => {
            guard(g.initial_ingress_sealed, "every dataset has a sealed initial deposit")?;
            S::IngressedTier3
        }
        (S::IngressedTier3, Event::BeginFullClassification) => S::FullClassification,
        (S::FullClassification, Event::RecordConsensus { kind }) => match kind {
            ConsensusKind::Agreed | ConsensusKind::ProceedAtMax => S::ConsensusReached,
            ConsensusKind::Disagreement => S::FullClassification,
            ConsensusKind::Tier4Halt => return Ok(MachineState::new(S::Draft, true)),
        },
        (s, Event::RaiseTier4) if s.is_pre_active() => {
            if g.tier4_acknowledged {
                return Err(illegal());
            }
            return Ok(MachineState::new(S::Draft, true));
        }
        (S::ConsensusReached, Event::StartAnalysis) => {
            guard(g.consensus_recorded, "consensus recorded")?;
            guard(g.agreements_signed, "sharing agreements signed for every dataset")?;
            guard(!g.dpia_missing, "DPIA recorded for personal data")?;
            S::Active
        }
        (S::Active, Event::RequestEgress) => S::EgressPending,
        (S::EgressPending, Event::ResolveEgress) => {
            guard(g.derived_classified, "derived work package classified")?;
            S::Active
        }
        (S::Active, Event::Supersede) => S::Superseded,
        (
            S::Draft | S::InitialClassified | S::IngressedTier3 | S::FullClassification | S::ConsensusReached | S::Active
            | S::Superseded,
            Event::Close,
        ) => S::Closed,
        _ => return Err(illegal()),
    };
    Ok(MachineState::new(next, false))
}

/// Roles permitted to raise each event.
pub fn authorized_roles(event: &Event) -> &'static [Role] {
    use Role::*;
    match event {
        Event::InitialClassify { .. } => &[Investigator],
        Event::CompleteInitialIngress | Event::BeginFullClassification => &[ProjectManager],
        Event::RecordConsensus { .. } => &[ProjectManager, Investigator],
        Event::RaiseTier4 => &[Investigator, DatasetProviderRepresentative, Referee],
        Event::AcknowledgeHalt => &[ProgrammeManager],
        Event::StartAnalysis => &[ProjectManager],
        Event::RequestEgress => &[Investigator, Researcher],
        Event::ResolveEgress => &[ProjectManager],
        Event::Supersede | Event::Close => &[ProjectManager, ProgrammeManager],
    }
}

pub fn is_authorized(event: &Event, roles: &BTreeSet<Role>) -> bool {
    authorized_roles(event).iter().any(|r| roles.contains(r))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub from: WorkPackageState,
    pub from_halted: bool,
    pub event: String,
    pub to: WorkPackageState,
    pub to_halted: bool,
    pub actors: Vec<Role>,
    /// Guards that must hold, by name.
    pub guards: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub schema_version: u32,
    pub states: Vec<WorkPackageState>,
    pub events: Vec<String>,
    pub rows: Vec<TransitionRow>,
}

fn guard_names(event: &Event) -> Vec<String> {
    let names: &[&str] = match event {
        Event::CompleteInitialIngress => &["initial_ingress_sealed"],
        Event::StartAnalysis => &["consensus_recorded", "agreements_signed", "dpia_present_if_personal_data"],
        Event::ResolveEgress => &["derived_classified"],
        _ => &[],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Every legal (state, event) pair with all guards met and no prior Tier 4 acknowledgement.
pub fn transition_table() -> TransitionTable {
    let mut rows = Vec::new();
    for from in WorkPackageState::ALL {
        for halted in [false, true] {
            if halted && from != S::Draft {
                continue;
            }
            for event in Event::samples() {
                if let Ok(to) = transition(MachineState::new(from, halted), event, &Guards::all_met()) {
                    rows.push(TransitionRow {
                        from,
                        from_halted: halted,
                        event: event.label(),
                        to: to.state,
                        to_halted: to.halted,
                        actors: authorized_roles(&event).to_vec(),
                        guards: guard_names(&event),
                    });
                }
            }
        }
    }
    TransitionTable {
        schema_version: 1,
        states: WorkPackageState::ALL.to_vec(),
        events: Event::samples().iter().map(Event::label).collect(),
        rows,
    }
}
