#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use safehaven_core::classification::*;
use safehaven_core::clock::ManualClock;
use safehaven_core::domain::*;
use safehaven_core::ids::*;
use safehaven_core::ingress::RecordingNotifier;
use safehaven_core::platform::{CredentialScope, ForwardedCredential, PlatformDriver, SimulatedPlatform};
use safehaven_core::service::{Actor, WorkPackageIntent};
use safehaven_core::Haven;

pub fn actor(user: &UserId) -> Actor {
    let cred = ForwardedCredential::new(user.clone(), format!("tok-{user}"), CredentialScope::Infrastructure).unwrap();
    Actor::new(user.clone()).with_credential(cred)
}

pub struct World {
    pub haven: Haven,
    pub platform: Arc<SimulatedPlatform>,
    pub notifier: Arc<RecordingNotifier>,
    pub clock: Arc<ManualClock>,
    pub pgm: Actor,
    pub pm: Actor,
    pub inv: Actor,
    pub rep: Actor,
    pub referee: Actor,
    pub researcher: Actor,
    pub provider: ProviderId,
    pub dataset: Dataset,
    pub project: ProjectId,
}

pub struct Options {
    pub personal_data: bool,
    pub sign_agreement: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { personal_data: false, sign_agreement: true }
    }
}

impl World {
    pub fn new() -> Self {
        Self::with(Options::default())
    }

    pub fn with(opts: Options) -> Self {
        let platform = Arc::new(SimulatedPlatform::new());
        Self::over(opts, platform.clone(), platform)
    }

    /// `driver` is what the service calls; `platform` is the simulator underneath it.
    pub fn over(opts: Options, platform: Arc<SimulatedPlatform>, driver: Arc<dyn PlatformDriver>) -> Self {
        let notifier = Arc::new(RecordingNotifier::new());
        let clock = Arc::new(ManualClock::default());
        let haven = Haven::in_memory(clock.clone(), driver, notifier.clone());
        let pgm = actor(&haven.bootstrap("Programme Manager", "dir:pgm").unwrap().id);
        let invite = |name: &str| {
            let u = haven.invite_user(&pgm, name, &format!("dir:{name}"), false).unwrap();
            let a = actor(&u.id);
            haven.certify_training(&a).unwrap();
            a
        };
        let pm = invite("pm");
        let inv = invite("investigator");
        let rep = invite("representative");
        let referee = invite("referee");
        let researcher = invite("researcher");
        let provider = haven.register_provider(&pgm, "Hospital", &rep.user_id).unwrap().id;
        let mut dataset = haven
            .register_dataset(&rep, &provider, "admissions", opts.personal_data, "research use only", None)
            .unwrap();
        if opts.sign_agreement {
            dataset = haven.sign_agreement(&rep, &dataset.id, DocRef::new("docs/dsa-1"), true).unwrap();
        }
        let project = haven.create_project(&pgm, "Readmissions", &pm.user_id, &inv.user_id).unwrap().id;
        haven.assign_user(&pm, &project, &researcher.user_id, Role::Researcher).unwrap();
        haven.assign_user(&pm, &project, &referee.user_id, Role::Referee).unwrap();
        World { haven, platform, notifier, clock, pgm, pm, inv, rep, referee, researcher, provider, dataset, project }
    }

    pub fn work_package(&self) -> WorkPackage {
        self.work_package_with(WorkPackageIntent::default())
    }

    pub fn work_package_with(&self, intent: WorkPackageIntent) -> WorkPackage {
        self.haven
            .create_work_package(&self.pm, &self.project, BTreeSet::from([self.dataset.id.clone()]), intent)
            .unwrap()
    }

    /// Initial classification through sealed deposit and the Tier 3 ingress environment.
    pub fn ingest(&self, wp: &WorkPackageId, provisional: Tier) -> VolumeId {
        let h = &self.haven;
        h.initial_classify(&self.inv, wp, provisional, false).unwrap();
        h.authorize_mount(&self.inv, wp, &self.dataset.id).unwrap();
        let issued = h.begin_ingress(&self.pm, wp, &self.dataset.id).unwrap();
        let files = vec![("admissions.csv".to_string(), b"id,age\n1,40\n2,51\n".to_vec())];
        h.deposit(&issued.token.token_id, &issued.secret, &files, None).unwrap();
        h.complete_ingress(&self.rep, &issued.token.volume_id).unwrap();
        h.complete_initial_ingress(&self.pm, wp).unwrap();
        issued.token.volume_id
    }

    /// Every required classifier answers for `tier`, then consensus is recorded.
    pub fn classify(&self, wp: &WorkPackageId, tier: Tier) -> ConsensusOutcome {
        let h = &self.haven;
        let required = h.required_classifiers(wp).unwrap();
        for who in [&self.inv, &self.rep, &self.referee] {
            let _ = h.submit_classification(who, wp, answers_for(tier));
        }
        let required_after = h.required_classifiers(wp).unwrap();
        assert!(required.is_subset(&required_after));
        h.record_consensus(&self.pm, wp, false).unwrap()
    }

    /// A work package running in its analysis environment at `tier`.
    pub fn active(&self, tier: Tier) -> (WorkPackage, Environment) {
        let wp = self.work_package();
        self.ingest(&wp.id, tier.min(Tier::T3));
        self.haven.begin_full_classification(&self.pm, &wp.id).unwrap();
        let outcome = self.classify(&wp.id, tier);
        assert_eq!(outcome.tier, Some(tier));
        let env = self.haven.start_analysis(&self.pm, &wp.id).unwrap();
        (self.haven.get_work_package(&wp.id).unwrap(), env)
    }

    pub fn output_volume(&self, env: &Environment) -> VolumeId {
        env.volume_ids
            .iter()
            .find(|v| self.haven.get_volume(v).unwrap().kind == VolumeKind::Output)
            .cloned()
            .expect("analysis environments have an output volume")
    }
}

/// Representative answers for each tier.
pub fn answers_for(tier: Tier) -> QuestionnaireAnswers {
    use CommercialSensitivity as C;
    use DeidentificationConfidence as D;
    use PersonalDataStatus as P;
    use PublicationIntent as I;
    let base = QuestionnaireAnswers {
        personal_data_status: P::None,
        deidentification_confidence: D::NotApplicable,
        substantial_threat_to_subjects: false,
        sophisticated_attacker_target: false,
        commercial_sensitivity: C::None,
        publication_intent: I::ReadyForPublication,
    };
    match tier.level() {
        0 => base,
        1 => QuestionnaireAnswers { publication_intent: I::EventualPublication, ..base },
        2 => QuestionnaireAnswers { commercial_sensitivity: C::Low, ..base },
        3 => QuestionnaireAnswers { commercial_sensitivity: C::NotLow, ..base },
        _ => QuestionnaireAnswers { sophisticated_attacker_target: true, ..base },
    }
}
