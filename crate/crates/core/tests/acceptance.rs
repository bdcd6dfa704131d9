//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration as StdDuration, Instant};

use chrono::Duration;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use common::*;
use safehaven_core::audit::{event_key, AuditEvent, DivergenceKind};
use safehaven_core::blueprint::*;
use safehaven_core::classification::*;
use safehaven_core::domain::*;
use safehaven_core::ids::*;
use safehaven_core::ingress::*;
use safehaven_core::platform::*;
use safehaven_core::policy::*;
use safehaven_core::service::{Actor, DocumentKind, EgressSpec};
use safehaven_core::{Haven, HavenError};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("tier-definition vectors", tier_vectors),
        ("control matrix golden cells", control_matrix),
        ("tier monotonicity sweep", monotonicity),
        ("consensus law", consensus_law),
        ("state-machine safety", state_machine_safety),
        ("blueprint conformance and mutation sweep", blueprint_conformance),
        ("integrity corruption detection", integrity_detection),
        ("audit tamper evidence", audit_tamper),
        ("credential forwarding", credential_forwarding),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} ({ms} ms)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({ms} ms)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Tier definitions
// ---------------------------------------------------------------------------

fn answers(
    p: PersonalDataStatus,
    d: DeidentificationConfidence,
    threat: bool,
    attacker: bool,
    c: CommercialSensitivity,
    i: PublicationIntent,
) -> QuestionnaireAnswers {
    QuestionnaireAnswers {
        personal_data_status: p,
        deidentification_confidence: d,
        substantial_threat_to_subjects: threat,
        sophisticated_attacker_target: attacker,
        commercial_sensitivity: c,
        publication_intent: i,
    }
}

fn tier_vectors() -> Outcome {
    use CommercialSensitivity::{Low, NotLow, VeryLow};
    use DeidentificationConfidence::{Absolute, NotApplicable as NA, Strong, Weak};
    use PersonalDataStatus::{Anonymised, Identifiable, Pseudonymised};
    use PublicationIntent::{Confidential, EventualPublication as Eventual, ReadyForPublication as Ready};
    let none_p = PersonalDataStatus::None;
    let none_c = CommercialSensitivity::None;

    // (case, answers, expected tier), one line per case read off the tier definitions.
    let table: Vec<(&str, QuestionnaireAnswers, u8)> = vec![
        ("open public data, ready to publish", answers(none_p, NA, false, false, none_c, Ready), 0),
        ("open data with no commercial impact on disclosure", answers(none_p, NA, false, false, none_c, Ready), 0),
        ("kept private only for eventual publication", answers(none_p, NA, false, false, none_c, Eventual), 1),
        ("private for competitive advantage, not legal duty", answers(none_p, NA, false, false, none_c, Confidential), 1),
        ("anonymised with absolute confidence, heading for publication", answers(Anonymised, Absolute, false, false, none_c, Eventual), 1),
        ("anonymised with absolute confidence, held privately", answers(Anonymised, Absolute, false, false, none_c, Confidential), 1),
        ("commercial data with very low disclosure impact", answers(none_p, NA, false, false, VeryLow, Ready), 1),
        ("very low commercial impact, publication planned", answers(none_p, NA, false, false, VeryLow, Eventual), 1),
        ("pseudonymised with strong confidence", answers(Pseudonymised, Strong, false, false, none_c, Confidential), 2),
        ("pseudonymised with strong confidence, publication planned", answers(Pseudonymised, Strong, false, false, none_c, Eventual), 2),
        ("pseudonymised data is never below the intermediate tier", answers(Pseudonymised, Absolute, false, false, none_c, Ready), 2),
        ("commercial-in-confidence with low consequences", answers(none_p, NA, false, false, Low, Confidential), 2),
        ("intellectual property, low consequences of disclosure", answers(none_p, NA, false, false, Low, Ready), 2),
        ("strong pseudonymisation with low commercial sensitivity", answers(Pseudonymised, Strong, false, false, Low, Eventual), 2),
        ("identifiable personal data", answers(Identifiable, NA, false, false, none_c, Confidential), 3),
        ("pseudonymised with only weak confidence", answers(Pseudonymised, Weak, false, false, none_c, Confidential), 3),
        ("commercially sensitive, consequences not low", answers(none_p, NA, false, false, NotLow, Confidential), 3),
        ("sensitive intellectual property meant for publication", answers(none_p, NA, false, false, NotLow, Eventual), 3),
        ("weak pseudonymisation with low commercial sensitivity", answers(Pseudonymised, Weak, false, false, Low, Confidential), 3),
        ("identifiable data with sensitive commercial terms", answers(Identifiable, NA, false, false, NotLow, Confidential), 3),
        ("disclosure threatens subjects' personal safety", answers(Identifiable, NA, true, false, none_c, Confidential), 4),
        ("threat to subjects' health even when pseudonymised", answers(Pseudonymised, Strong, true, false, none_c, Confidential), 4),
        ("commercially sensitive, targeted by organised crime", answers(none_p, NA, false, true, NotLow, Confidential), 4),
        ("national security data facing state actors", answers(none_p, NA, false, true, none_c, Confidential), 4),
        ("both a threat to subjects and a sophisticated target", answers(Identifiable, NA, true, true, NotLow, Confidential), 4),
    ];
    let mut mismatches = Vec::new();
    for (case, a, want) in &table {
        match decide_tier(a) {
            Ok(t) if t.level() == *want => {}
            got => mismatches.push(format!("{case}: want {want}, got {got:?}")),
        }
    }
    ensure(table.len() >= 20, || format!("only {} vectors", table.len()))?;
    ensure(mismatches.is_empty(), || mismatches.join("; "))?;
    Ok(format!("{} vectors, 0 mismatches", table.len()))
}

// ---------------------------------------------------------------------------
// Control matrix
// ---------------------------------------------------------------------------

fn control_matrix() -> Outcome {
    // Columns follow Control::MATRIX order.
    let golden: [(u8, [Value; 10]); 5] = [
        (
            0,
            [
                json!("DirectFromInternet"),    // install from the reference package server
                json!("Internet"),              // access node reachable from the internet
                json!("Internet"),              // internet reachable from inside
                json!("OpenAllowed"),           // open devices may connect
                json!("Open"),                  // no physical security
                json!("SshAndDesktop"),         // unrestricted ssh, tunnels allowed
                json!("AllowedWithApproval"),   // copy-out with Investigator permission
                json!("UserDirect"),            // users install software themselves
                json!(false),                   // no Referee for the environment tier itself
                json!(false),                   // no provider counter-approval
            ],
        ),
        (
            1,
            [
                json!("DirectFromInternet"),
                json!("Internet"),
                json!("Internet"),
                json!("OpenAllowed"),
                json!("Open"),
                json!("SshAndDesktop"),
                json!("AllowedWithApproval"),
                json!("UserDirect"),
                json!(false),
                json!(false),
            ],
        ),
        (
            2,
            [
                json!({"FullMirror": {"max_lag_days": 42}}), // full mirror at most six weeks behind
                json!("Institutional"),                      // institutional network only
                json!("Isolated"),                           // isolated virtual network
                json!("OpenAllowed"),                        // open devices still allowed
                json!("Open"),                               // no physical security
                json!("RemoteDesktopOnly"),                  // remote desktop only
                json!("ForbiddenByPolicyOnly"),              // forbidden by policy, not enforced
                json!("InvestigatorSignoff"),                // Investigator signs off software
                json!(true),                                 // Referee scrutiny from this tier up
                json!(false),                                // no counter-approval yet
            ],
        ),
        (
            3,
            [
                json!("WhitelistMirror"),         // white-listed mirror only
                json!("Restricted"),              // restricted network only
                json!("Isolated"),
                json!("ManagedOnly"),             // managed devices only
                json!("Medium"),                  // medium security space
                json!("RemoteDesktopOnly"),
                json!("DisabledTechnically"),     // copy-paste disabled on the desktop
                json!("InvestigatorPlusReferee"), // Investigator and Referee sign off software
                json!(true),
                json!(true),                      // provider counter-approves members
            ],
        ),
        (
            4,
            [
                json!("WhitelistMirror"),
                json!("Restricted"),
                json!("Isolated"),
                json!("ManagedOnly"),
                json!("High"), // high security space
                json!("RemoteDesktopOnly"),
                json!("DisabledTechnically"),
                json!("InvestigatorPlusReferee"),
                json!(true),
                json!(true),
            ],
        ),
    ];
    let mut cells = 0;
    let mut mismatches = Vec::new();
    for (level, row) in &golden {
        let policy = resolve_policy(Tier::new(*level).unwrap());
        for (control, want) in Control::MATRIX.iter().zip(row) {
            cells += 1;
            let got = policy.cell(*control);
            if got.as_ref() != Some(want) {
                mismatches.push(format!("tier {level} {control}: want {want}, got {got:?}"));
            }
        }
    }
    ensure(cells == 50, || format!("{cells} cells"))?;
    ensure(mismatches.is_empty(), || mismatches.join("; "))?;
    Ok("50 cells, 0 mismatches".into())
}

// ---------------------------------------------------------------------------
// Monotonicity
// ---------------------------------------------------------------------------

/// Every answer tuple that differs from `a` in one field by a strictly more sensitive value.
fn one_step_more_sensitive(a: &QuestionnaireAnswers) -> Vec<QuestionnaireAnswers> {
    let mut out = Vec::new();
    for p in PersonalDataStatus::ALL {
        if p.sensitivity() > a.personal_data_status.sensitivity() {
            out.push(QuestionnaireAnswers { personal_data_status: p, ..*a });
        }
    }
    if let Some(cur) = a.deidentification_confidence.sensitivity() {
        for d in DeidentificationConfidence::ALL {
            if d.sensitivity().is_some_and(|s| s > cur) {
                out.push(QuestionnaireAnswers { deidentification_confidence: d, ..*a });
            }
        }
    }
    if !a.substantial_threat_to_subjects {
        out.push(QuestionnaireAnswers { substantial_threat_to_subjects: true, ..*a });
    }
    if !a.sophisticated_attacker_target {
        out.push(QuestionnaireAnswers { sophisticated_attacker_target: true, ..*a });
    }
    for c in CommercialSensitivity::ALL {
        if c.sensitivity() > a.commercial_sensitivity.sensitivity() {
            out.push(QuestionnaireAnswers { commercial_sensitivity: c, ..*a });
        }
    }
    for i in PublicationIntent::ALL {
        if i.sensitivity() > a.publication_intent.sensitivity() {
            out.push(QuestionnaireAnswers { publication_intent: i, ..*a });
        }
    }
    out.into_iter().filter(QuestionnaireAnswers::is_valid).collect()
}

fn monotonicity() -> Outcome {
    let start = Instant::now();
    let space = QuestionnaireAnswers::all_valid();
    let mut pairs = 0;
    let mut counterexamples = Vec::new();
    for a in &space {
        let base = decide_tier(a).map_err(|e| e.to_string())?;
        for b in one_step_more_sensitive(a) {
            pairs += 1;
            let raised = decide_tier(&b).map_err(|e| e.to_string())?;
            if raised < base {
                counterexamples.push(format!("{a:?} -> {b:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(counterexamples.is_empty(), || format!("{} counterexamples: {}", counterexamples.len(), counterexamples[0]))?;
    ensure(elapsed < StdDuration::from_secs(1), || format!("sweep took {elapsed:?}"))?;
    Ok(format!("{} valid tuples, {pairs} single-field increases, 0 counterexamples in {elapsed:?}", space.len()))
}

// ---------------------------------------------------------------------------
// Consensus
// ---------------------------------------------------------------------------

fn consensus_law() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5afe_4a7e);
    let wp = WorkPackageId::new("wp-0000000001");
    let all_slots = [
        ClassifierSlot::Investigator,
        ClassifierSlot::ProviderRepresentative(ProviderId::new("prv-1")),
        ClassifierSlot::ProviderRepresentative(ProviderId::new("prv-2")),
        ClassifierSlot::Referee,
    ];
    let ts = safehaven_core::clock::Clock::now(&safehaven_core::clock::ManualClock::default());
    let runs = 10_000;
    let mut resolved = 0;
    for run in 0..runs {
        let required: BTreeSet<ClassifierSlot> = all_slots.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
        let required = if required.is_empty() { BTreeSet::from([ClassifierSlot::Investigator]) } else { required };
        let mut decisions = Vec::new();
        for (n, slot) in required.iter().enumerate() {
            if rng.gen_bool(0.1) {
                continue;
            }
            // Tier 4 answers are rarer, as in practice.
            let level = if rng.gen_bool(0.05) { 4 } else { rng.gen_range(0..4) };
            let user = UserId::new(format!("usr-{n}"));
            let d = TierDecision::new(wp.clone(), user, slot.clone(), answers_for(Tier::new(level).unwrap()), ts)
                .map_err(|e| e.to_string())?;
            decisions.push(d);
        }
        let options = ConsensusOptions { proceed_without_consensus: rng.gen_bool(0.5), tier4_acknowledged: rng.gen_bool(0.3) };
        let got = resolve_consensus(&decisions, &required, options).map_err(|e| e.to_string())?;

        // Independent statement of the law.
        let tiers: Vec<Tier> = decisions.iter().map(|d| d.tier).collect();
        let complete = decisions.len() == required.len();
        let halted = !options.tier4_acknowledged && tiers.contains(&Tier::T4);
        let max = tiers.iter().max().copied();
        let unanimous = !tiers.is_empty() && tiers.iter().all(|t| Some(*t) == max);
        let want = if halted || !complete {
            None
        } else if unanimous || options.proceed_without_consensus {
            max
        } else {
            None
        };
        let msg = || format!("run {run}: tiers {tiers:?} required {} options {options:?} -> {got:?}", required.len());
        ensure(got.tier == want, msg)?;
        if let Some(t) = got.tier {
            resolved += 1;
            ensure(tiers.iter().all(|s| *s <= t), msg)?;
            let kind = if unanimous { ConsensusKind::Agreed } else { ConsensusKind::ProceedAtMax };
            ensure(got.kind == kind, msg)?;
        }
        ensure(got.kind != ConsensusKind::Tier4Halt || halted, msg)?;
    }
    Ok(format!("{runs} random decision sets, {resolved} resolved, law held in all"))
}

// ---------------------------------------------------------------------------
// State machine
// ---------------------------------------------------------------------------

struct Fixture {
    pgm: Actor,
    pm: Actor,
    inv: Actor,
    rep: Actor,
    researcher: Actor,
    dataset: DatasetId,
    project: ProjectId,
    wp: WorkPackageId,
    personal: bool,
}

type Step = fn(&Fixture, &Haven);

fn ingress_all(f: &Fixture, h: &Haven) {
    let _ = (|| -> Result<(), HavenError> {
        h.authorize_mount(&f.inv, &f.wp, &f.dataset)?;
        let issued = h.begin_ingress(&f.pm, &f.wp, &f.dataset)?;
        h.deposit(&issued.token.token_id, &issued.secret, &[("d.csv".into(), b"1,2\n".to_vec())], None)?;
        h.complete_ingress(&f.rep, &issued.token.volume_id)?;
        h.complete_initial_ingress(&f.pm, &f.wp)?;
        Ok(())
    })();
}

fn alphabet(extra: (&'static str, Step)) -> Vec<(&'static str, Step)> {
    vec![
        extra,
        ("initial_classify(T1)", |f, h| drop(h.initial_classify(&f.inv, &f.wp, Tier::T1, false))),
        ("initial_classify(T4)", |f, h| drop(h.initial_classify(&f.inv, &f.wp, Tier::T4, false))),
        ("ingress", ingress_all),
        ("begin_full_classification", |f, h| drop(h.begin_full_classification(&f.pm, &f.wp))),
        ("investigator answers T1", |f, h| drop(h.submit_classification(&f.inv, &f.wp, answers_for(Tier::T1)))),
        ("investigator answers T3", |f, h| drop(h.submit_classification(&f.inv, &f.wp, answers_for(Tier::T3)))),
        ("representative answers T1", |f, h| drop(h.submit_classification(&f.rep, &f.wp, answers_for(Tier::T1)))),
        ("researcher answers T1", |f, h| drop(h.submit_classification(&f.researcher, &f.wp, answers_for(Tier::T1)))),
        ("investigator withdraws", |f, h| drop(h.withdraw_classification(&f.inv, &f.wp))),
        ("record consensus", |f, h| drop(h.record_consensus(&f.pm, &f.wp, false))),
        ("record consensus, proceed", |f, h| drop(h.record_consensus(&f.pm, &f.wp, true))),
        ("raise tier 4", |f, h| drop(h.raise_tier4(&f.inv, &f.wp))),
        ("acknowledge halt", |f, h| drop(h.acknowledge_halt(&f.pgm, &f.wp))),
        ("start analysis", |f, h| drop(h.start_analysis(&f.pm, &f.wp))),
        ("researcher starts analysis", |f, h| drop(h.start_analysis(&f.researcher, &f.wp))),
    ]
}

fn activation_violations(f: &Fixture, h: &Haven) -> Vec<String> {
    let mut out = Vec::new();
    for wp in h.list_work_packages(&f.project).unwrap() {
        if !matches!(wp.state, WorkPackageState::Active | WorkPackageState::EgressPending) {
            continue;
        }
        let consensus = h.consensus_record(&wp.id).unwrap();
        let agreed = consensus.is_some_and(|c| c.outcome.permits_activation() && c.outcome.tier == wp.final_tier);
        if !agreed {
            out.push(format!("{} active without a stored consensus", wp.id));
        }
        for d in &wp.dataset_ids {
            if h.get_dataset(d).unwrap().sharing_agreement_doc_ref.is_none() {
                out.push(format!("{} active with unsigned agreement for {d}", wp.id));
            }
        }
        if f.personal && wp.dpia_ref.is_none() {
            out.push(format!("{} active on personal data without a DPIA", wp.id));
        }
    }
    out
}

struct SearchResult {
    states: usize,
    transitions: usize,
    active_states: usize,
    violations: Vec<String>,
}

fn explore(opts: Options, extra: (&'static str, Step), depth: usize) -> SearchResult {
    let w = World::with(opts);
    let personal = w.dataset.personal_data;
    let wp = w.work_package();
    let f = Fixture {
        pgm: w.pgm.clone(),
        pm: w.pm.clone(),
        inv: w.inv.clone(),
        rep: w.rep.clone(),
        researcher: w.researcher.clone(),
        dataset: w.dataset.id.clone(),
        project: w.project.clone(),
        wp: wp.id,
        personal,
    };
    let events = alphabet(extra);
    let mut seen = HashSet::from([w.haven.state_fingerprint().unwrap()]);
    let mut frontier = vec![(w.haven.clone(), w.platform.clone(), Vec::<&str>::new())];
    let mut result = SearchResult { states: 1, transitions: 0, active_states: 0, violations: Vec::new() };
    for _ in 0..depth {
        let mut next = Vec::new();
        for (haven, platform, path) in &frontier {
            for (label, step) in &events {
                let p = Arc::new(platform.fork());
                let child = haven.fork(p.clone()).expect("memory store forks");
                step(&f, &child);
                result.transitions += 1;
                if !seen.insert(child.state_fingerprint().unwrap()) {
                    continue;
                }
                result.states += 1;
                let mut path = path.clone();
                path.push(label);
                let v = activation_violations(&f, &child);
                if !v.is_empty() {
                    result.violations.push(format!("{} via [{}]", v.join(", "), path.join(" > ")));
                }
                let wp = child.get_work_package(&f.wp).unwrap();
                if wp.state == WorkPackageState::Active {
                    result.active_states += 1;
                }
                next.push((child, p, path));
            }
        }
        frontier = next;
    }
    result
}

fn state_machine_safety() -> Outcome {
    let unsigned = explore(
        Options { personal_data: false, sign_agreement: false },
        ("sign agreement", |f, h| drop(h.sign_agreement(&f.rep, &f.dataset, DocRef::new("docs/dsa"), true))),
        8,
    );
    let personal = explore(
        Options { personal_data: true, sign_agreement: true },
        ("record DPIA", |f, h| drop(h.record_document(&f.inv, &f.wp, DocumentKind::Dpia, DocRef::new("docs/dpia")))),
        8,
    );
    let mut detail = Vec::new();
    for (name, r) in [("unsigned-agreement fixture", &unsigned), ("personal-data fixture", &personal)] {
        ensure(r.violations.is_empty(), || format!("{name}: {}", r.violations[0]))?;
        // The search must actually reach activation, or the safety claim is vacuous.
        ensure(r.active_states > 0, || format!("{name}: Active never reached in {} states", r.states))?;
        detail.push(format!("{name}: {} states, {} transitions, {} active", r.states, r.transitions, r.active_states));
    }
    Ok(format!("depth 8; {}", detail.join("; ")))
}

// ---------------------------------------------------------------------------
// Blueprints
// ---------------------------------------------------------------------------

fn planned(tier: Tier) -> Blueprint {
    let mut wp = WorkPackage::draft(
        WorkPackageId::new("wp-0000000001"),
        ProjectId::new("prj-0000000001"),
        BTreeSet::from([DatasetId::new("dst-0000000001")]),
    );
    wp.final_tier = Some(tier);
    wp.state = WorkPackageState::ConsensusReached;
    plan_environment(
        &PlannerConfig::default(),
        &PlanRequest {
            environment_id: EnvironmentId::new("env-0000000001"),
            work_package: &wp,
            tier,
            platform_id: PlatformId::new("sim"),
            mode: PlanMode::Final,
        },
    )
    .expect("plannable")
}

/// Mutants of `bp`, each changing the elements of exactly one control.
fn mutants(bp: &Blueprint) -> Vec<(Control, String, Blueprint)> {
    let mut out = Vec::new();
    let mut push = |control: Control, what: String, f: &dyn Fn(&mut Blueprint)| {
        let mut m = bp.clone();
        f(&mut m);
        out.push((control, what, m));
    };
    for mode in [MirrorMode::None, MirrorMode::Full, MirrorMode::Whitelist] {
        if mode != bp.mirror_config.mode {
            push(Control::PackageMirror, format!("mirror {mode:?}"), &|m| m.mirror_config.mode = mode);
        }
    }
    match bp.mirror_config.mode {
        MirrorMode::Full => {
            push(Control::PackageMirror, "mirror lag 43 days".into(), &|m| m.mirror_config.max_lag_days = Some(43));
            push(Control::PackageMirror, "mirror lag unset".into(), &|m| m.mirror_config.max_lag_days = None);
            push(Control::PackageMirror, "no security fast-track".into(), &|m| m.mirror_config.fast_track_security = false);
        }
        MirrorMode::Whitelist => {
            push(Control::PackageMirror, "whitelist missing".into(), &|m| m.mirror_config.whitelist_ref = None);
        }
        MirrorMode::None => {}
    }
    for inbound in [InboundNetwork::Internet, InboundNetwork::Institutional, InboundNetwork::Restricted] {
        if inbound != bp.network.inbound {
            push(Control::InboundNetwork, format!("inbound {inbound:?}"), &|m| m.network.inbound = inbound);
        }
    }
    let other_out = match bp.network.outbound {
        OutboundNetwork::Internet => OutboundNetwork::Isolated,
        OutboundNetwork::Isolated => OutboundNetwork::Internet,
    };
    push(Control::OutboundNetwork, format!("outbound {other_out:?}"), &|m| m.network.outbound = other_out);
    push(Control::OutboundNetwork, "internal isolation flipped".into(), &|m| {
        m.network.internal_isolated = !m.network.internal_isolated
    });
    let other_dev = match bp.access_node.device_policy {
        DevicePolicy::OpenAllowed => DevicePolicy::ManagedOnly,
        DevicePolicy::ManagedOnly => DevicePolicy::OpenAllowed,
    };
    push(Control::DevicePolicy, format!("devices {other_dev:?}"), &|m| m.access_node.device_policy = other_dev);
    for space in [PhysicalSecurity::Open, PhysicalSecurity::Medium, PhysicalSecurity::High] {
        if space != bp.access_node.physical_security {
            push(Control::PhysicalSecurity, format!("space {space:?}"), &|m| m.access_node.physical_security = space);
        }
    }
    for proto in [AccessProtocol::RemoteDesktop, AccessProtocol::Ssh, AccessProtocol::Both] {
        if proto != bp.access_node.protocol {
            push(Control::Connection, format!("protocol {proto:?}"), &|m| m.access_node.protocol = proto);
        }
    }
    for cp in [CopyPaste::AllowedWithApproval, CopyPaste::ForbiddenByPolicyOnly, CopyPaste::DisabledTechnically] {
        if cp != bp.access_node.copy_paste {
            push(Control::CopyPaste, format!("copy-paste {cp:?}"), &|m| m.access_node.copy_paste = cp);
        }
    }
    if bp.access_node.copy_paste != CopyPaste::AllowedWithApproval {
        push(Control::CopyPaste, "clipboard sharing".into(), &|m| m.access_node.clipboard_sharing = true);
        push(Control::CopyPaste, "disk sharing".into(), &|m| m.access_node.disk_sharing = true);
    }
    for s in [
        SoftwareIngressSignoff::UserDirect,
        SoftwareIngressSignoff::InvestigatorSignoff,
        SoftwareIngressSignoff::InvestigatorPlusReferee,
    ] {
        if s != bp.software_ingress.signoff {
            push(Control::SoftwareIngressSignoff, format!("signoff {s:?}"), &|m| m.software_ingress.signoff = s);
        }
    }
    push(Control::SoftwareIngressSignoff, "airlock flipped".into(), &|m| m.software_ingress.airlock = !m.software_ingress.airlock);
    push(Control::RefereeRequired, "referee flipped".into(), &|m| m.governance.referee_required = !m.governance.referee_required);
    push(Control::ProviderCounterApproval, "counter-approval flipped".into(), &|m| {
        m.governance.member_counter_approval = !m.governance.member_counter_approval
    });
    push(Control::AccessMfa, "mfa off".into(), &|m| m.access_node.mfa_required = false);
    for (i, v) in bp.volumes.iter().enumerate() {
        for mode in [VolumeMode::ReadOnly, VolumeMode::ReadWrite, VolumeMode::WriteOnly] {
            if !v.kind.mounted_modes().contains(&mode) {
                push(Control::VolumeModes, format!("{} {mode:?}", v.name), &|m| m.volumes[i].mode = mode);
            }
        }
    }
    if bp.internal_services.is_empty() {
        push(Control::InternalServices, "internal services added".into(), &|m| {
            m.internal_services.push(InternalService::VersionControl)
        });
    } else {
        push(Control::InternalServices, "internal services removed".into(), &|m| m.internal_services.clear());
    }
    out
}

fn blueprint_conformance() -> Outcome {
    let mut total = 0;
    for tier in Tier::ALL {
        let bp = planned(tier);
        let policy = resolve_policy(tier);
        let report = validate_blueprint(&bp, &policy);
        ensure(report.conforms(), || format!("tier {tier:?} plan fails: {:?}", report.violations))?;
        let ms = mutants(&bp);
        let covered: BTreeSet<Control> = ms.iter().map(|(c, _, _)| *c).collect();
        ensure(covered.len() == Control::ALL.len(), || format!("tier {tier:?}: mutants cover {covered:?}"))?;
        for (control, what, m) in ms {
            total += 1;
            let r = validate_blueprint(&m, &policy);
            let ok = r.violations.len() == 1 && r.violations[0].control == control;
            ensure(ok, || format!("tier {}: mutant '{what}' gave {:?}", tier.level(), r.violations))?;
        }
    }
    Ok(format!("5 tiers conform; {total} mutants each with exactly one violation of the flipped control"))
}

// ---------------------------------------------------------------------------
// Integrity
// ---------------------------------------------------------------------------

fn integrity_detection() -> Outcome {
    let w = World::new();
    let wp = w.work_package();
    w.haven.initial_classify(&w.inv, &wp.id, Tier::T2, false).unwrap();
    w.haven.authorize_mount(&w.inv, &wp.id, &w.dataset.id).unwrap();
    let issued = w.haven.begin_ingress(&w.pm, &wp.id, &w.dataset.id).unwrap();
    let files = vec![
        ("admissions.csv".to_string(), (0..600u32).map(|i| (i % 251) as u8).collect::<Vec<_>>()),
        ("codes/lookup.csv".to_string(), b"code,label\nA,alpha\nB,beta\n".to_vec()),
    ];
    let digest = volume_digest(files.iter().map(|(p, c)| (p.as_str(), c.as_slice())));
    w.haven.deposit(&issued.token.token_id, &issued.secret, &files, Some(&digest)).unwrap();
    let vol = issued.token.volume_id.clone();
    w.haven.complete_ingress(&w.rep, &vol).unwrap();
    let first = w.haven.run_scheduled_verifications().unwrap();
    ensure(first.len() == 1 && first[0].status == IntegrityStatus::Match, || format!("baseline {first:?}"))?;

    let backend = w.haven.store().backend();
    let alerts_in_audit = |h: &Haven| h.audit().events().unwrap().iter().filter(|e| e.action == "integrity.alert").count();
    let mut rng = StdRng::seed_from_u64(7);
    let period = w.haven.config().reverification_period();
    for i in 0..100 {
        let (path, content) = &files[rng.gen_range(0..files.len())];
        let offset = rng.gen_range(0..content.len());
        let mask: u8 = rng.gen_range(1..=255);
        let key = safehaven_core::service::content_key(&vol, path);
        let mut bytes = backend.get(&key).unwrap().unwrap();
        bytes[offset] ^= mask;
        backend.put(&key, &bytes).unwrap();

        let audit_before = alerts_in_audit(&w.haven);
        let sent_before = w.notifier.sent().len();
        w.clock.advance(period);
        let recs = w.haven.run_scheduled_verifications().unwrap();
        let msg = |what: &str| format!("corruption {i} ({path}@{offset}^{mask:#04x}): {what}");
        ensure(recs.len() == 1 && recs[0].status == IntegrityStatus::Mismatch, || msg(&format!("{recs:?}")))?;
        ensure(alerts_in_audit(&w.haven) == audit_before + 1, || msg("alert audit events != 1"))?;
        let sent = w.notifier.sent();
        ensure(sent.len() == sent_before + 1, || msg("notifications != 1"))?;
        let alert = sent.last().unwrap();
        ensure(
            alert.recipients.contains(&w.pgm.user_id) && alert.recipients.contains(&w.pm.user_id),
            || msg("alert not addressed to the managers"),
        )?;

        bytes[offset] ^= mask;
        backend.put(&key, &bytes).unwrap();
        w.clock.advance(period);
        let recs = w.haven.run_scheduled_verifications().unwrap();
        ensure(recs.len() == 1 && recs[0].status == IntegrityStatus::Match, || msg("restored volume did not match"))?;
        ensure(alerts_in_audit(&w.haven) == audit_before + 1, || msg("alert raised for a clean volume"))?;
    }
    Ok("100 single-byte corruptions, 100 mismatches, 100 alerts, no false alarms".into())
}

// ---------------------------------------------------------------------------
// Audit
// ---------------------------------------------------------------------------

fn audit_tamper() -> Outcome {
    let w = World::new();
    w.active(Tier::T2);
    let n = w.haven.audit().len().unwrap();
    ensure(w.haven.audit().verify_chain().unwrap().valid, || "clean chain fails".into())?;
    let edits: [(&str, fn(&mut AuditEvent)); 5] = [
        ("action", |e| e.action.push('!')),
        ("actor", |e| e.actor_id = "usr-9999999999".into()),
        ("entity version", |e| e.entity_ref.version += 1),
        ("payload digest", |e| e.payload_digest = "0".repeat(64)),
        ("timestamp", |e| e.timestamp += Duration::seconds(1)),
    ];
    let mut cases = 0;
    for seq in 1..=n {
        for (name, edit) in &edits {
            let h = w.haven.fork(w.platform.clone()).unwrap();
            let mut e = h.audit().get(seq).unwrap().unwrap();
            edit(&mut e);
            h.store().backend().put(&event_key(seq), &serde_json::to_vec(&e).unwrap()).unwrap();
            let r = h.audit().verify_chain().unwrap();
            ensure(r.first_divergence.as_ref().map(|d| d.seq) == Some(seq), || {
                format!("edit of {name} at {seq} reported {:?}", r.first_divergence)
            })?;
            cases += 1;
        }
        // Raw byte damage, including damage that breaks decoding.
        let h = w.haven.fork(w.platform.clone()).unwrap();
        let mut raw = h.store().backend().get(&event_key(seq)).unwrap().unwrap();
        let at = seq as usize % raw.len();
        raw[at] ^= 0x20;
        h.store().backend().put(&event_key(seq), &raw).unwrap();
        let r = h.audit().verify_chain().unwrap();
        ensure(!r.valid && r.first_divergence.as_ref().map(|d| d.seq) == Some(seq), || {
            format!("byte damage at {seq} reported {:?}", r.first_divergence)
        })?;

        let h = w.haven.fork(w.platform.clone()).unwrap();
        h.store().backend().delete(&event_key(seq)).unwrap();
        let r = h.audit().verify_chain().unwrap();
        let d = r.first_divergence.clone();
        ensure(d.as_ref().is_some_and(|d| d.seq == seq && d.kind == DivergenceKind::Missing), || {
            format!("deletion at {seq} reported {d:?}")
        })?;
        cases += 2;
    }
    Ok(format!("{n} events; {cases} mutations and deletions each located at their seq"))
}

// ---------------------------------------------------------------------------
// Credentials
// ---------------------------------------------------------------------------

/// Passes calls through to the simulator after checking the credential came from a signed-in user.
struct CheckingPlatform {
    inner: Arc<SimulatedPlatform>,
    calls: Mutex<usize>,
    violations: Mutex<Vec<String>>,
}

impl CheckingPlatform {
    fn check(&self, cred: &ForwardedCredential, op: &str) {
        *self.calls.lock().unwrap() += 1;
        let issued = format!("tok-{}", cred.subject());
        let ok = cred.scope() == CredentialScope::Infrastructure
            && cred.subject().as_str().starts_with("usr-")
            && cred.expose_token() == issued;
        if !ok {
            self.violations.lock().unwrap().push(format!("{op} with {cred:?}"));
        }
    }
}

impl PlatformDriver for CheckingPlatform {
    fn provision(&self, c: &ForwardedCredential, bp: &Blueprint) -> Result<ProvisionAck, PlatformError> {
        self.check(c, "provision");
        self.inner.provision(c, bp)
    }
    fn decommission(&self, c: &ForwardedCredential, e: &EnvironmentId) -> Result<(), PlatformError> {
        self.check(c, "decommission");
        self.inner.decommission(c, e)
    }
    fn create_volume(&self, c: &ForwardedCredential, v: &VolumeId) -> Result<(), PlatformError> {
        self.check(c, "create_volume");
        self.inner.create_volume(c, v)
    }
    fn delete_volume(&self, c: &ForwardedCredential, v: &VolumeId) -> Result<(), PlatformError> {
        self.check(c, "delete_volume");
        self.inner.delete_volume(c, v)
    }
}

fn bare(a: &Actor) -> Actor {
    Actor::new(a.user_id.clone())
}

fn credential_forwarding() -> Outcome {
    let sim = Arc::new(SimulatedPlatform::new());
    let checker = Arc::new(CheckingPlatform { inner: sim.clone(), calls: Mutex::new(0), violations: Mutex::new(Vec::new()) });
    let w = World::over(Options::default(), sim.clone(), checker.clone());
    let h = &w.haven;
    let calls = || *checker.calls.lock().unwrap();
    let mut refused = 0;
    let mut refuse = |what: &str, r: Result<(), HavenError>, before: usize| -> Result<(), String> {
        refused += 1;
        ensure(matches!(r, Err(HavenError::MissingCredential)), || format!("{what} without credential gave {r:?}"))?;
        ensure(calls() == before, || format!("{what} reached the platform without a credential"))
    };

    // Ingress and the initial environment.
    let wp = w.work_package();
    h.initial_classify(&w.inv, &wp.id, Tier::T3, false).unwrap();
    h.authorize_mount(&w.inv, &wp.id, &w.dataset.id).unwrap();
    refuse("begin_ingress", h.begin_ingress(&bare(&w.pm), &wp.id, &w.dataset.id).map(drop), calls())?;
    let issued = h.begin_ingress(&w.pm, &wp.id, &w.dataset.id).unwrap();
    h.deposit(&issued.token.token_id, &issued.secret, &[("a.csv".into(), b"1".to_vec())], None).unwrap();
    h.complete_ingress(&w.rep, &issued.token.volume_id).unwrap();
    refuse("complete_initial_ingress", h.complete_initial_ingress(&bare(&w.pm), &wp.id).map(drop), calls())?;
    h.complete_initial_ingress(&w.pm, &wp.id).unwrap();
    h.begin_full_classification(&w.pm, &wp.id).unwrap();
    w.classify(&wp.id, Tier::T3);
    refuse("start_analysis", h.start_analysis(&bare(&w.pm), &wp.id).map(drop), calls())?;
    let env = h.start_analysis(&w.pm, &wp.id).unwrap();

    // Outputs go on to a derived environment.
    let out = w.output_volume(&env);
    h.write_output(&w.researcher, &out, "t.csv", b"x").unwrap();
    h.seal_output(&w.researcher, &out).unwrap();
    let spec = EgressSpec {
        output_volume_id: out,
        analysis_script_ref: "git:a@1".into(),
        intent: EgressIntent::FurtherAnalysis,
        outputs: vec![],
        investigator_confirms: false,
    };
    let req = h.request_egress(&w.researcher, &wp.id, spec).unwrap();
    let derived = req.derived_work_package_id.clone();
    w.classify(&derived, Tier::T2);
    refuse("derived start_analysis", h.start_analysis(&bare(&w.pm), &derived).map(drop), calls())?;
    h.start_analysis(&w.pm, &derived).unwrap();
    h.resolve_egress(&w.pm, &wp.id).unwrap();

    // Exceptional release of the derived outputs.
    let range: ipnet::IpNet = "192.0.2.0/24".parse().unwrap();
    h.authorize_release(&w.rep, &derived, range, 24).unwrap();
    refuse("release grant", h.authorize_release(&bare(&w.pgm), &derived, range, 24).map(drop), calls())?;
    let grant = h.authorize_release(&w.pgm, &derived, range, 24).unwrap();
    h.access_release(&w.rep, &grant.id, "192.0.2.9".parse().unwrap()).unwrap();
    w.clock.advance(Duration::hours(25));
    h.run_due_jobs().unwrap();

    // Wind down.
    refuse("close_work_package", h.close_work_package(&bare(&w.pm), &derived).map(drop), calls())?;
    h.close_work_package(&w.pm, &derived).unwrap();
    h.close_work_package(&w.pm, &wp.id).unwrap();
    refuse("close_project", h.close_project(&bare(&w.pgm), &w.project).map(drop), calls())?;
    h.close_project(&w.pgm, &w.project).unwrap();

    let total = calls();
    let violations = checker.violations.lock().unwrap().clone();
    ensure(violations.is_empty(), || violations.join("; "))?;
    ensure(total > 0 && total == sim.invocations().len(), || format!("{total} checked calls vs {}", sim.invocations().len()))?;
    let users: BTreeSet<UserId> = h.list_users().unwrap().into_iter().map(|u| u.id).collect();
    ensure(sim.invocations().iter().all(|i| users.contains(&i.subject)), || "call by unknown subject".into())?;
    Ok(format!("{total} platform calls, all with a forwarded user credential; {refused} credential-less attempts refused before the driver"))
}
