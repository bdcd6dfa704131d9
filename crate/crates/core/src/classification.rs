//! Tier selection, classifier sets and consensus.
//!
//! Each classifier answers the questionnaire independently; [`decide_tier`]
//! maps answers to a tier with an ordered rule list, most sensitive first:
//!
//! | order | condition                                                                 | tier |
//! |-------|---------------------------------------------------------------------------|------|
//! | 1     | substantial threat to subjects, or target of sophisticated attackers      | 4    |
//! | 2     | identifiable personal data, pseudonymised with weak confidence, or commercial sensitivity not low | 3 |
//! | 3     | pseudonymised with strong (or absolute) confidence, or low commercial sensitivity | 2 |
//! | 4     | confidential or eventual-publication intent, or very low commercial sensitivity | 1 |
//! | 5     | otherwise                                                                 | 0    |
//!
//! Sensitivity order of each answer field, least to most sensitive:
//!
//! | field                          | order                                                   |
//! |--------------------------------|---------------------------------------------------------|
//! | `personal_data_status`         | None < Anonymised < Pseudonymised < Identifiable         |
//! | `deidentification_confidence`  | Absolute < Strong < Weak (NotApplicable is unordered)    |
//! | `substantial_threat_to_subjects`, `sophisticated_attacker_target` | false < true |
//! | `commercial_sensitivity`       | None < VeryLow < Low < NotLow                            |
//! | `publication_intent`           | ReadyForPublication < EventualPublication < Confidential |
//!
//! Living-individual assumptions for answering the personal-data question
//! (lifespan of 100 years when unsure; age 16 for an adult and 0 for a child
//! when unsure) are documented on the questionnaire, never computed here.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::domain::{ClassificationRoute, Role, Tier};
use crate::ids::{ProviderId, UserId, WorkPackageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PersonalDataStatus {
    None,
    Anonymised,
    Pseudonymised,
    Identifiable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeidentificationConfidence {
    Absolute,
    Strong,
    Weak,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CommercialSensitivity {
    None,
    VeryLow,
    Low,
    NotLow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PublicationIntent {
    ReadyForPublication,
    EventualPublication,
    Confidential,
}

impl PersonalDataStatus {
    pub const ALL: [Self; 4] = [Self::None, Self::Anonymised, Self::Pseudonymised, Self::Identifiable];
    pub fn sensitivity(self) -> u8 {
        self as u8
    }
}

impl DeidentificationConfidence {
    pub const ALL: [Self; 4] = [Self::Absolute, Self::Strong, Self::Weak, Self::NotApplicable];
    /// `None` for `NotApplicable`, which sits outside the order.
    pub fn sensitivity(self) -> Option<u8> {
        match self {
            Self::Absolute => Some(0),
            Self::Strong => Some(1),
            Self::Weak => Some(2),
            Self::NotApplicable => None,
        }
    }
}

impl CommercialSensitivity {
    pub const ALL: [Self; 4] = [Self::None, Self::VeryLow, Self::Low, Self::NotLow];
    pub fn sensitivity(self) -> u8 {
        self as u8
    }
}

impl PublicationIntent {
    pub const ALL: [Self; 3] = [Self::ReadyForPublication, Self::EventualPublication, Self::Confidential];
    pub fn sensitivity(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionnaireAnswers {
    pub personal_data_status: PersonalDataStatus,
    pub deidentification_confidence: DeidentificationConfidence,
    pub substantial_threat_to_subjects: bool,
    pub sophisticated_attacker_target: bool,
    pub commercial_sensitivity: CommercialSensitivity,
    pub publication_intent: PublicationIntent,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClassificationError {
    #[error("rejected answers: {0}")]
    InvalidAnswers(String),
    #[error("decisions belong to more than one work package: {0:?}")]
    MixedWorkPackages(Vec<WorkPackageId>),
    #[error("work package has no datasets")]
    NoDatasets,
}

/// A warning raised while normalising answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notice(pub String);

impl QuestionnaireAnswers {
    /// Checks the answer invariants without rewriting anything.
    pub fn check(&self) -> Result<(), ClassificationError> {
        use DeidentificationConfidence as C;
        use PersonalDataStatus as P;
        let na_expected = matches!(self.personal_data_status, P::None | P::Identifiable);
        let na_given = self.deidentification_confidence == C::NotApplicable;
        if na_expected != na_given {
            return Err(ClassificationError::InvalidAnswers(format!(
                "deidentification_confidence must be NotApplicable iff personal data is None or Identifiable \
                 (got {:?} with {:?})",
                self.deidentification_confidence, self.personal_data_status
            )));
        }
        if self.personal_data_status == P::Anonymised && self.deidentification_confidence != C::Absolute {
            return Err(ClassificationError::InvalidAnswers(
                "Anonymised requires Absolute confidence; anything less is pseudonymised data".into(),
            ));
        }
        Ok(())
    }

    /// Input normalisation: anonymised data held with less than absolute
    /// confidence is treated as pseudonymised, and the rewrite is reported.
    pub fn normalized(mut self) -> Result<(Self, Vec<Notice>), ClassificationError> {
        use DeidentificationConfidence as C;
        let mut notices = Vec::new();
        if self.personal_data_status == PersonalDataStatus::Anonymised
            && matches!(self.deidentification_confidence, C::Strong | C::Weak)
        {
            self.personal_data_status = PersonalDataStatus::Pseudonymised;
            notices.push(Notice(format!(
                "anonymisation held with {:?} confidence is not anonymisation; answer recorded as Pseudonymised",
                self.deidentification_confidence
            )));
        }
        self.check()?;
        Ok((self, notices))
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }

    /// Every answer tuple satisfying the invariants.
    pub fn all_valid() -> Vec<QuestionnaireAnswers> {
        let mut out = Vec::new();
        for p in PersonalDataStatus::ALL {
            for c in DeidentificationConfidence::ALL {
                for threat in [false, true] {
                    for attacker in [false, true] {
                        for commercial in CommercialSensitivity::ALL {
                            for publication in PublicationIntent::ALL {
                                let a = QuestionnaireAnswers {
                                    personal_data_status: p,
                                    deidentification_confidence: c,
                                    substantial_threat_to_subjects: threat,
                                    sophisticated_attacker_target: attacker,
                                    commercial_sensitivity: commercial,
                                    publication_intent: publication,
                                };
                                if a.is_valid() {
                                    out.push(a);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Maps one classifier's answers to a tier. Pure and total over valid answers.
pub fn decide_tier(answers: &QuestionnaireAnswers) -> Result<Tier, ClassificationError> {
    use CommercialSensitivity as Com;
    use DeidentificationConfidence as C;
    use PersonalDataStatus as P;
    answers.check()?;
    let a = answers;
    let pseudonymised = a.personal_data_status == P::Pseudonymised;

    if a.substantial_threat_to_subjects || a.sophisticated_attacker_target {
        return Ok(Tier::T4);
    }
    if a.personal_data_status == P::Identifiable
        || (pseudonymised && a.deidentification_confidence == C::Weak)
        || a.commercial_sensitivity == Com::NotLow
    {
        return Ok(Tier::T3);
    }
    // Pseudonymised data stays personal data, so absolute confidence in the
    // pseudonymisation does not take it below Tier 2.
    if pseudonymised || a.commercial_sensitivity == Com::Low {
        return Ok(Tier::T2);
    }
    if a.publication_intent != PublicationIntent::ReadyForPublication || a.commercial_sensitivity == Com::VeryLow {
        return Ok(Tier::T1);
    }
    Ok(Tier::T0)
}

/// A seat that must be filled before consensus can be reached.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "slot", content = "provider")]
pub enum ClassifierSlot {
    Investigator,
    ProviderRepresentative(ProviderId),
    Referee,
}

impl ClassifierSlot {
    pub fn role(&self) -> Role {
        match self {
            ClassifierSlot::Investigator => Role::Investigator,
            ClassifierSlot::ProviderRepresentative(_) => Role::DatasetProviderRepresentative,
            ClassifierSlot::Referee => Role::Referee,
        }
    }
}

/// Inputs that decide who must classify a work package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierContext {
    /// Distinct providers across the package's datasets.
    pub providers: BTreeSet<ProviderId>,
    pub provisional_tier: Tier,
    /// Package contains personal data that has been anonymised.
    pub anonymised_personal_data: bool,
    pub route: ClassificationRoute,
    /// Egress towards a new analysis environment always consults a Referee.
    pub referee_mandatory: bool,
}

pub fn required_classifiers(ctx: &ClassifierContext) -> Result<BTreeSet<ClassifierSlot>, ClassificationError> {
    if ctx.providers.is_empty() {
        return Err(ClassificationError::NoDatasets);
    }
    let mut slots = BTreeSet::from([ClassifierSlot::Investigator]);
    if ctx.route == ClassificationRoute::Full {
        slots.extend(ctx.providers.iter().cloned().map(ClassifierSlot::ProviderRepresentative));
    }
    let referee = ctx.route == ClassificationRoute::PreApproved
        || ctx.referee_mandatory
        || ctx.provisional_tier >= Tier::T2
        || (ctx.anonymised_personal_data && ctx.provisional_tier <= Tier::T1);
    if referee {
        slots.insert(ClassifierSlot::Referee);
    }
    Ok(slots)
}

/// One classifier's stored pass through the questionnaire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierDecision {
    pub work_package_id: WorkPackageId,
    pub classifier_user_id: UserId,
    pub classifier_role: Role,
    pub slot: ClassifierSlot,
    pub answers: QuestionnaireAnswers,
    pub tier: Tier,
    pub timestamp: Timestamp,
    pub notices: Vec<Notice>,
}

impl TierDecision {
    /// Builds a decision whose tier is always the computed one.
    pub fn new(
        work_package_id: WorkPackageId,
        classifier_user_id: UserId,
        slot: ClassifierSlot,
        answers: QuestionnaireAnswers,
        timestamp: Timestamp,
    ) -> Result<Self, ClassificationError> {
        let (answers, notices) = answers.normalized()?;
        let tier = decide_tier(&answers)?;
        Ok(TierDecision {
            work_package_id,
            classifier_user_id,
            classifier_role: slot.role(),
            slot,
            answers,
            tier,
            timestamp,
            notices,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusKind {
    Agreed,
    Disagreement,
    ProceedAtMax,
    Tier4Halt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub kind: ConsensusKind,
    pub tier: Option<Tier>,
    pub dissenting_decisions: Vec<TierDecision>,
    pub missing: Vec<ClassifierSlot>,
}

impl ConsensusOutcome {
    /// Outcomes that allow a package to leave classification.
    pub fn permits_activation(&self) -> bool {
        matches!(self.kind, ConsensusKind::Agreed | ConsensusKind::ProceedAtMax)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusOptions {
    /// The team has chosen to proceed without agreement; the highest tier applies.
    pub proceed_without_consensus: bool,
    /// A Programme Manager reviewed an earlier Tier 4 halt for this package.
    pub tier4_acknowledged: bool,
}

pub fn resolve_consensus(
    decisions: &[TierDecision],
    required: &BTreeSet<ClassifierSlot>,
    options: ConsensusOptions,
) -> Result<ConsensusOutcome, ClassificationError> {
    let packages: BTreeSet<&WorkPackageId> = decisions.iter().map(|d| &d.work_package_id).collect();
    if packages.len() > 1 {
        return Err(ClassificationError::MixedWorkPackages(packages.into_iter().cloned().collect()));
    }

    let outcome = |kind, tier, dissenting, missing| ConsensusOutcome {
        kind,
        tier,
        dissenting_decisions: dissenting,
        missing,
    };

    if !options.tier4_acknowledged && decisions.iter().any(|d| d.tier == Tier::T4) {
        let dissent = decisions.iter().filter(|d| d.tier == Tier::T4).cloned().collect();
        return Ok(outcome(ConsensusKind::Tier4Halt, None, dissent, Vec::new()));
    }

    let filled: BTreeSet<&ClassifierSlot> = decisions.iter().map(|d| &d.slot).collect();
    let missing: Vec<ClassifierSlot> = required.iter().filter(|s| !filled.contains(s)).cloned().collect();
    if !missing.is_empty() || decisions.is_empty() {
        return Ok(outcome(ConsensusKind::Disagreement, None, Vec::new(), missing));
    }

    let tiers: BTreeMap<Tier, usize> = decisions.iter().fold(BTreeMap::new(), |mut m, d| {
        *m.entry(d.tier).or_default() += 1;
        m
    });
    let max = *tiers.keys().next_back().expect("decisions is non-empty");
    if tiers.len() == 1 {
        return Ok(outcome(ConsensusKind::Agreed, Some(max), Vec::new(), Vec::new()));
    }
    if options.proceed_without_consensus {
        let below = decisions.iter().filter(|d| d.tier < max).cloned().collect();
        return Ok(outcome(ConsensusKind::ProceedAtMax, Some(max), below, Vec::new()));
    }
    Ok(outcome(ConsensusKind::Disagreement, None, decisions.to_vec(), Vec::new()))
}

// ---------------------------------------------------------------------------
// Published form definition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOption {
    pub value: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt: String,
    pub help: String,
    pub options: Vec<QuestionOption>,
}

/// Machine-readable questionnaire consumed by both the CLI and the web console.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireDefinition {
    pub schema_version: u32,
    pub questions: Vec<Question>,
    pub constraints: Vec<String>,
    pub guidance: Vec<String>,
}

pub const QUESTIONNAIRE_SCHEMA_VERSION: u32 = 1;

fn opt(value: &str, label: &str) -> QuestionOption {
    QuestionOption { value: value.into(), label: label.into() }
}

fn yes_no() -> Vec<QuestionOption> {
    vec![opt("false", "No"), opt("true", "Yes")]
}

pub fn questionnaire_definition() -> QuestionnaireDefinition {
    QuestionnaireDefinition {
        schema_version: QUESTIONNAIRE_SCHEMA_VERSION,
        questions: vec![
            Question {
                id: "personal_data_status".into(),
                prompt: "Does the work package handle, combine or generate data about living individuals?".into(),
                help: "Include identification made possible by combining datasets, synthetic data or trained models."
                    .into(),
                options: vec![
                    opt("None", "No personal data"),
                    opt("Anonymised", "Anonymised: nobody can be re-identified under any circumstances"),
                    opt("Pseudonymised", "Pseudonymised: re-identifiable with separately held information"),
                    opt("Identifiable", "Identifiable personal data"),
                ],
            },
            Question {
                id: "deidentification_confidence".into(),
                prompt: "How confident are you that individuals cannot be re-identified?".into(),
                help: "Only asked for anonymised or pseudonymised data.".into(),
                options: vec![
                    opt("Absolute", "Absolute: no doubt involved"),
                    opt("Strong", "Strong"),
                    opt("Weak", "Weak"),
                    opt("NotApplicable", "Not applicable"),
                ],
            },
            Question {
                id: "substantial_threat_to_subjects".into(),
                prompt: "Could disclosure substantially threaten the safety, health or security of data subjects?"
                    .into(),
                help: String::new(),
                options: yes_no(),
            },
            Question {
                id: "sophisticated_attacker_target".into(),
                prompt: "Is the data likely to be targeted by well-resourced, determined attackers?".into(),
                help: "For example organised crime groups or state actors.".into(),
                options: yes_no(),
            },
            Question {
                id: "commercial_sensitivity".into(),
                prompt: "What would the commercial, legal, political or reputational consequences of disclosure be?"
                    .into(),
                help: "Commercial-in-confidence material is Tier 2 unless the provider representative agrees lower."
                    .into(),
                options: vec![
                    opt("None", "None"),
                    opt("VeryLow", "No impact or very low impact"),
                    opt("Low", "Low"),
                    opt("NotLow", "More than low"),
                ],
            },
            Question {
                id: "publication_intent".into(),
                prompt: "Could everything handled and generated be published as is?".into(),
                help: String::new(),
                options: vec![
                    opt("ReadyForPublication", "Ready for publication"),
                    opt("EventualPublication", "Intended for eventual publication"),
                    opt("Confidential", "Kept private"),
                ],
            },
        ],
        constraints: vec![
            "deidentification_confidence is NotApplicable iff personal_data_status is None or Identifiable".into(),
            "Anonymised requires Absolute confidence; lower confidence is recorded as Pseudonymised".into(),
        ],
        guidance: vec![
            "Treat a data subject as living unless there is reasonable evidence of death; assume a lifespan of 100 years when unsure.".into(),
            "When age is unknown assume 16 for an adult and 0 for a child, unless context supports another assumption.".into(),
            "Consider the other datasets this data will be combined with.".into(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use CommercialSensitivity as Com;
    use DeidentificationConfidence as C;
    use PersonalDataStatus as P;
    use PublicationIntent as Pub;

    fn answers(p: P, c: C, threat: bool, com: Com, publication: Pub) -> QuestionnaireAnswers {
        QuestionnaireAnswers {
            personal_data_status: p,
            deidentification_confidence: c,
            substantial_threat_to_subjects: threat,
            sophisticated_attacker_target: false,
            commercial_sensitivity: com,
            publication_intent: publication,
        }
    }

    #[test]
    fn spec_examples() {
        assert_eq!(decide_tier(&answers(P::Identifiable, C::NotApplicable, true, Com::None, Pub::Confidential)), Ok(Tier::T4));
        assert_eq!(decide_tier(&answers(P::Pseudonymised, C::Strong, false, Com::None, Pub::Confidential)), Ok(Tier::T2));
        assert_eq!(decide_tier(&answers(P::None, C::NotApplicable, false, Com::None, Pub::ReadyForPublication)), Ok(Tier::T0));
        assert_eq!(decide_tier(&answers(P::Pseudonymised, C::Weak, false, Com::None, Pub::Confidential)), Ok(Tier::T3));
    }

    #[test]
    fn invalid_answers_rejected() {
        let bad = answers(P::None, C::Strong, false, Com::None, Pub::Confidential);
        assert!(matches!(decide_tier(&bad), Err(ClassificationError::InvalidAnswers(_))));
        let bad = answers(P::Anonymised, C::Weak, false, Com::None, Pub::Confidential);
        assert!(decide_tier(&bad).is_err());
    }

    #[test]
    fn weak_anonymisation_is_normalized_to_pseudonymised_with_notice() {
        let (a, notices) = answers(P::Anonymised, C::Weak, false, Com::None, Pub::Confidential).normalized().unwrap();
        assert_eq!(a.personal_data_status, P::Pseudonymised);
        assert_eq!(notices.len(), 1);
        assert_eq!(decide_tier(&a), Ok(Tier::T3));
    }

    #[test]
    fn valid_space_size() {
        // (None|Identifiable)×NA + Anonymised×Absolute + Pseudonymised×{Absolute,Strong,Weak}
        // = 6 status/confidence pairs, times 2·2·4·3 = 48.
        assert_eq!(QuestionnaireAnswers::all_valid().len(), 6 * 48);
    }

    fn providers(n: usize) -> BTreeSet<ProviderId> {
        (0..n).map(|i| ProviderId::new(format!("prv-{i}"))).collect()
    }

    fn ctx(n: usize, tier: Tier, anonymised: bool) -> ClassifierContext {
        ClassifierContext {
            providers: providers(n),
            provisional_tier: tier,
            anonymised_personal_data: anonymised,
            route: ClassificationRoute::Full,
            referee_mandatory: false,
        }
    }

    #[test]
    fn two_providers_tier_three_need_everyone() {
        let got = required_classifiers(&ctx(2, Tier::T3, false)).unwrap();
        let want: BTreeSet<_> = [
            ClassifierSlot::Investigator,
            ClassifierSlot::ProviderRepresentative("prv-0".into()),
            ClassifierSlot::ProviderRepresentative("prv-1".into()),
            ClassifierSlot::Referee,
        ]
        .into();
        assert_eq!(got, want);
    }

    #[test]
    fn anonymised_tier_one_needs_referee() {
        assert!(required_classifiers(&ctx(1, Tier::T1, true)).unwrap().contains(&ClassifierSlot::Referee));
    }

    #[test]
    fn open_tier_zero_needs_investigator_and_rep_only() {
        let got = required_classifiers(&ctx(1, Tier::T0, false)).unwrap();
        assert_eq!(got.len(), 2);
        assert!(!got.contains(&ClassifierSlot::Referee));
    }

    #[test]
    fn referee_implied_by_tier_two_or_more() {
        for t in Tier::ALL {
            for anon in [false, true] {
                let s = required_classifiers(&ctx(1, t, anon)).unwrap();
                if t >= Tier::T2 {
                    assert!(s.contains(&ClassifierSlot::Referee));
                }
            }
        }
    }

    #[test]
    fn pre_approved_route_skips_representatives() {
        let mut c = ctx(2, Tier::T0, false);
        c.route = ClassificationRoute::PreApproved;
        let got = required_classifiers(&c).unwrap();
        assert_eq!(got, [ClassifierSlot::Investigator, ClassifierSlot::Referee].into());
    }

    #[test]
    fn no_providers_is_an_error() {
        assert_eq!(required_classifiers(&ctx(0, Tier::T0, false)), Err(ClassificationError::NoDatasets));
    }

    fn decision(slot: ClassifierSlot, tier: u8) -> TierDecision {
        TierDecision {
            work_package_id: "wp-1".into(),
            classifier_user_id: UserId::new(format!("usr-{slot:?}")),
            classifier_role: slot.role(),
            slot,
            answers: answers(P::None, C::NotApplicable, false, Com::None, Pub::ReadyForPublication),
            tier: Tier::new(tier).unwrap(),
            timestamp: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            notices: vec![],
        }
    }

    fn three(tiers: [u8; 3]) -> (Vec<TierDecision>, BTreeSet<ClassifierSlot>) {
        let slots = [
            ClassifierSlot::Investigator,
            ClassifierSlot::ProviderRepresentative("prv-0".into()),
            ClassifierSlot::Referee,
        ];
        let ds = slots.iter().zip(tiers).map(|(s, t)| decision(s.clone(), t)).collect();
        (ds, slots.into_iter().collect())
    }

    #[test]
    fn consensus_examples() {
        let (d, req) = three([2, 3, 3]);
        let o = resolve_consensus(&d, &req, ConsensusOptions { proceed_without_consensus: true, ..Default::default() }).unwrap();
        assert_eq!((o.kind, o.tier), (ConsensusKind::ProceedAtMax, Some(Tier::T3)));

        let (d, req) = three([2, 2, 2]);
        let o = resolve_consensus(&d, &req, ConsensusOptions::default()).unwrap();
        assert_eq!((o.kind, o.tier), (ConsensusKind::Agreed, Some(Tier::T2)));

        let two = vec![decision(ClassifierSlot::Investigator, 1), decision(ClassifierSlot::Referee, 4)];
        let req: BTreeSet<_> = [ClassifierSlot::Investigator, ClassifierSlot::Referee].into();
        let o = resolve_consensus(&two, &req, ConsensusOptions::default()).unwrap();
        assert_eq!(o.kind, ConsensusKind::Tier4Halt);
        assert_eq!(o.tier, None);

        let two = vec![decision(ClassifierSlot::Investigator, 1), decision(ClassifierSlot::Referee, 2)];
        let o = resolve_consensus(&two, &req, ConsensusOptions::default()).unwrap();
        assert_eq!(o.kind, ConsensusKind::Disagreement);
        let listed: Vec<u8> = o.dissenting_decisions.iter().map(|d| d.tier.level()).collect();
        assert_eq!(listed, vec![1, 2]);
    }

    #[test]
    fn missing_party_is_a_disagreement_listing_it() {
        let (mut d, req) = three([2, 2, 2]);
        d.pop();
        let o = resolve_consensus(&d, &req, ConsensusOptions { proceed_without_consensus: true, ..Default::default() }).unwrap();
        assert_eq!(o.kind, ConsensusKind::Disagreement);
        assert_eq!(o.missing, vec![ClassifierSlot::Referee]);
    }

    #[test]
    fn acknowledged_tier_four_can_be_agreed() {
        let (d, req) = three([4, 4, 4]);
        let o = resolve_consensus(&d, &req, ConsensusOptions { tier4_acknowledged: true, ..Default::default() }).unwrap();
        assert_eq!((o.kind, o.tier), (ConsensusKind::Agreed, Some(Tier::T4)));
    }

    #[test]
    fn mixed_packages_rejected() {
        let mut d = vec![decision(ClassifierSlot::Investigator, 1), decision(ClassifierSlot::Referee, 1)];
        d[1].work_package_id = "wp-2".into();
        assert!(matches!(
            resolve_consensus(&d, &BTreeSet::new(), ConsensusOptions::default()),
            Err(ClassificationError::MixedWorkPackages(_))
        ));
    }

    #[test]
    fn questionnaire_covers_every_answer_field() {
        let def = questionnaire_definition();
        let fields = serde_json::to_value(answers(P::None, C::NotApplicable, false, Com::None, Pub::Confidential)).unwrap();
        let ids: BTreeSet<&str> = def.questions.iter().map(|q| q.id.as_str()).collect();
        let keys: BTreeSet<&str> = fields.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(ids, keys);
    }
}
