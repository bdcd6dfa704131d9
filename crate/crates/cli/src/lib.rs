//! `safehaven`: administrative command line over a local store.
//!
//! Commands call the same service operations as the HTTP API, with the same
//! authorisation: the acting user is `--as` and the credential forwarded to
//! the platform is `--token`. Output is human-readable unless `--json` is given.
//!
//! Exit codes: 0 success, 1 refused or failed operation, 2 usage error,
//! 3 a verification ran and failed, 4 store or configuration problem.

mod platform;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use safehaven_core::blueprint::{plan_environment, Blueprint, PlanMode, PlanRequest};
use safehaven_core::classification::QuestionnaireAnswers;
use safehaven_core::clock::SystemClock;
use safehaven_core::config::HavenConfig;
use safehaven_core::domain::{DocRef, OutputDescriptor, Role, Tier};
use safehaven_core::ids::*;
use safehaven_core::ingress::{Alert, EgressIntent, Notifier};
use safehaven_core::platform::{CredentialScope, ForwardedCredential};
use safehaven_core::policy::Control;
use safehaven_core::service::{Actor, DocumentKind, EgressSpec, WorkPackageIntent};
use safehaven_core::store::FileKv;
use safehaven_core::{audit, resolve_policy, validate_blueprint, Haven, HavenError};
use serde::Serialize;
use serde_json::{json, Value};

pub use platform::LoggingPlatform;

#[derive(Parser, Debug)]
#[command(name = "safehaven", version, about = "Governance of tiered secure research environments")]
pub struct Cli {
    /// Directory holding the entity store, audit log and platform log.
    #[arg(long, env = "SAFEHAVEN_STORE", default_value = "safehaven-data", global = true)]
    pub store: PathBuf,
    /// Deployment configuration (TOML).
    #[arg(long, env = "SAFEHAVEN_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Acting user id.
    #[arg(long = "as", env = "SAFEHAVEN_USER", global = true)]
    pub acting_user: Option<String>,
    /// The acting user's own token, forwarded to the platform.
    #[arg(long, env = "SAFEHAVEN_TOKEN", global = true, hide_env_values = true)]
    pub token: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Register the first programme manager of an empty store.
    Init {
        #[arg(long)]
        name: String,
        #[arg(long)]
        directory_ref: String,
    },
    #[command(subcommand)]
    User(UserCmd),
    #[command(subcommand)]
    Provider(ProviderCmd),
    #[command(subcommand)]
    Dataset(DatasetCmd),
    #[command(subcommand)]
    Project(ProjectCmd),
    #[command(subcommand)]
    Wp(WpCmd),
    #[command(subcommand)]
    Ingress(IngressCmd),
    #[command(subcommand)]
    Egress(EgressCmd),
    #[command(subcommand)]
    Policy(PolicyCmd),
    #[command(subcommand)]
    Blueprint(BlueprintCmd),
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Run due re-verifications and release expiries.
    Jobs,
    /// Serve the HTTP API over this store.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
pub enum UserCmd {
    Invite {
        name: String,
        #[arg(long)]
        directory_ref: String,
        #[arg(long)]
        guest: bool,
    },
    /// Record that the acting user completed data-handling training.
    Train,
    Show { id: String },
}

#[derive(Subcommand, Debug)]
pub enum ProviderCmd {
    Register {
        name: String,
        #[arg(long)]
        representative: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum DatasetCmd {
    Register {
        name: String,
        #[arg(long)]
        provider: String,
        #[arg(long)]
        personal_data: bool,
        #[arg(long, default_value = "")]
        terms: String,
        #[arg(long)]
        provider_hash: Option<String>,
    },
    /// Record the signed sharing agreement.
    Sign {
        id: String,
        #[arg(long)]
        doc: String,
        #[arg(long)]
        lawful_basis: bool,
    },
}

#[derive(Subcommand, Debug)]
pub enum ProjectCmd {
    Create {
        name: String,
        #[arg(long)]
        pm: String,
        #[arg(long)]
        investigator: String,
    },
    Assign {
        id: String,
        #[arg(long)]
        user: String,
        #[arg(long, value_enum)]
        role: RoleArg,
    },
    Show { id: String },
    Close { id: String },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RoleArg {
    Researcher,
    Referee,
}

#[derive(Subcommand, Debug)]
pub enum WpCmd {
    Create {
        #[arg(long)]
        project: String,
        #[arg(long = "dataset", required = true)]
        datasets: Vec<String>,
        #[arg(long, default_value = "")]
        analysis: String,
        #[arg(long = "pre-approved-output")]
        pre_approved_outputs: Vec<String>,
    },
    /// Settle the provisional tier from the initial conversations.
    Initial {
        id: String,
        #[arg(long)]
        tier: u8,
        #[arg(long)]
        anonymised: bool,
    },
    /// Open full classification once the initial deposit is in.
    Review { id: String },
    /// Submit the acting user's questionnaire answers (TOML or JSON file).
    Classify {
        id: String,
        #[arg(long)]
        answers: PathBuf,
    },
    Withdraw { id: String },
    Consensus {
        id: String,
        #[arg(long)]
        proceed: bool,
    },
    Status { id: String },
    Document {
        id: String,
        #[arg(long, value_enum)]
        kind: DocKind,
        #[arg(long)]
        doc: String,
    },
    RaiseTier4 { id: String },
    AcknowledgeHalt { id: String },
    Start { id: String },
    Close { id: String },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DocKind {
    Dpia,
    Ethics,
}

#[derive(Subcommand, Debug)]
pub enum IngressCmd {
    /// Investigator authorises mounting a dataset's deposit.
    Mount {
        wp: String,
        #[arg(long)]
        dataset: String,
    },
    /// Issue a write-only deposit token; the secret is shown once.
    Begin {
        wp: String,
        #[arg(long)]
        dataset: String,
    },
    /// Upload files through a token.
    Deposit {
        #[arg(long)]
        token_id: String,
        #[arg(long, env = "SAFEHAVEN_INGRESS_SECRET", hide_env_values = true)]
        secret: String,
        #[arg(long)]
        digest: Option<String>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Representative marks the transfer complete, sealing the volume.
    Complete { volume: String },
    Verify {
        volume: String,
        #[arg(long)]
        provider_hash: Option<String>,
    },
    /// Close the initial deposit stage of a work package.
    Finish { wp: String },
}

#[derive(Subcommand, Debug)]
pub enum EgressCmd {
    Request {
        wp: String,
        #[arg(long)]
        volume: String,
        #[arg(long)]
        script: String,
        #[arg(long, value_enum)]
        intent: IntentArg,
        #[arg(long = "output")]
        outputs: Vec<String>,
        /// Investigator confirms the outputs are the pre-approved ones.
        #[arg(long)]
        confirm: bool,
    },
    /// Authorise publication of a classified derived work package.
    Approve { derived: String },
    /// One half of the dual authorisation for an exceptional release.
    Release {
        derived: String,
        #[arg(long)]
        ip_range: ipnet::IpNet,
        #[arg(long)]
        hours: i64,
    },
    Resolve { wp: String },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum IntentArg {
    Publish,
    FurtherAnalysis,
}

#[derive(Subcommand, Debug)]
pub enum PolicyCmd {
    /// The control matrix row for a tier.
    Show { tier: u8 },
}

#[derive(Subcommand, Debug)]
pub enum BlueprintCmd {
    /// Plan the environment a classified work package would get.
    Plan { wp: String },
    /// The stored blueprint of an environment.
    Show { env: String },
    /// Check a blueprint file against its tier's policy.
    Validate { file: PathBuf },
}

#[derive(Subcommand, Debug)]
pub enum AuditCmd {
    Verify,
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify an exported NDJSON log without a store.
    ImportVerify { file: PathBuf },
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Key for the bundled signed-token identity provider.
    #[arg(long, env = "SAFEHAVEN_TOKEN_KEY", hide_env_values = true)]
    pub token_key: String,
}

enum Failure {
    Service(HavenError),
    Check(Value),
    Setup(String),
}

impl From<HavenError> for Failure {
    fn from(e: HavenError) -> Self {
        Failure::Service(e)
    }
}

type Outcome = Result<Value, Failure>;

fn to_value(v: impl Serialize) -> Outcome {
    serde_json::to_value(v).map_err(|e| Failure::Setup(e.to_string()))
}

struct StderrNotifier;

impl Notifier for StderrNotifier {
    fn notify(&self, alert: &Alert) {
        eprintln!("ALERT [{}] {} -> {:?}", alert.kind, alert.subject, alert.recipients);
    }
}

fn load_config(path: Option<&Path>) -> Result<HavenConfig, Failure> {
    let Some(path) = path else { return Ok(HavenConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))
}

fn open(cli: &Cli) -> Result<Haven, Failure> {
    let config = load_config(cli.config.as_deref())?;
    let kv = FileKv::open(cli.store.join("kv")).map_err(|e| Failure::Setup(e.to_string()))?;
    let platform = LoggingPlatform::new(cli.store.join("platform.log"));
    Haven::new(Arc::new(kv), Arc::new(SystemClock), Arc::new(platform), Arc::new(StderrNotifier), config)
        .map_err(|e| Failure::Setup(e.to_string()))
}

fn actor(cli: &Cli) -> Result<Actor, Failure> {
    let user = cli.acting_user.as_deref().ok_or_else(|| Failure::Setup("--as <user> is required".into()))?;
    let user = UserId::new(user);
    let mut a = Actor::new(user.clone());
    if let Some(t) = &cli.token {
        let c = ForwardedCredential::new(user, t.clone(), CredentialScope::Infrastructure)
            .map_err(|e| Failure::Setup(e.to_string()))?;
        a = a.with_credential(c);
    }
    Ok(a)
}

fn read_answers(path: &Path) -> Result<QuestionnaireAnswers, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))
}

fn tier(level: u8) -> Result<Tier, Failure> {
    Tier::new(level).map_err(|e| Failure::Service(HavenError::Invalid(e.to_string())))
}

fn execute(cli: &Cli) -> Outcome {
    if let Command::Audit(AuditCmd::ImportVerify { file }) = &cli.command {
        let f = fs::File::open(file).map_err(|e| Failure::Setup(format!("{}: {e}", file.display())))?;
        let report = audit::verify_export(BufReader::new(f)).map_err(|e| Failure::Setup(e.to_string()))?;
        let v = to_value(&report)?;
        return if report.valid { Ok(v) } else { Err(Failure::Check(v)) };
    }
    if let Command::Policy(PolicyCmd::Show { tier: level }) = &cli.command {
        return to_value(resolve_policy(tier(*level)?));
    }
    if let Command::Blueprint(BlueprintCmd::Validate { file }) = &cli.command {
        let text = fs::read_to_string(file).map_err(|e| Failure::Setup(format!("{}: {e}", file.display())))?;
        let bp: Blueprint = serde_json::from_str(&text).map_err(|e| Failure::Setup(format!("{}: {e}", file.display())))?;
        let report = validate_blueprint(&bp, &resolve_policy(bp.tier));
        let v = to_value(&report)?;
        return if report.conforms() { Ok(v) } else { Err(Failure::Check(v)) };
    }

    let h = open(cli)?;
    match &cli.command {
        Command::Init { name, directory_ref } => to_value(h.bootstrap(name, directory_ref)?),
        Command::User(c) => {
            let a = actor(cli)?;
            match c {
                UserCmd::Invite { name, directory_ref, guest } => to_value(h.invite_user(&a, name, directory_ref, *guest)?),
                UserCmd::Train => to_value(h.certify_training(&a)?),
                UserCmd::Show { id } => to_value(h.get_user(&UserId::new(id.as_str()))?),
            }
        }
        Command::Provider(ProviderCmd::Register { name, representative }) => {
            to_value(h.register_provider(&actor(cli)?, name, &UserId::new(representative.as_str()))?)
        }
        Command::Dataset(c) => {
            let a = actor(cli)?;
            match c {
                DatasetCmd::Register { name, provider, personal_data, terms, provider_hash } => to_value(h.register_dataset(
                    &a,
                    &ProviderId::new(provider.as_str()),
                    name,
                    *personal_data,
                    terms,
                    provider_hash.clone(),
                )?),
                DatasetCmd::Sign { id, doc, lawful_basis } => {
                    to_value(h.sign_agreement(&a, &DatasetId::new(id.as_str()), DocRef::new(doc.as_str()), *lawful_basis)?)
                }
            }
        }
        Command::Project(c) => {
            let a = actor(cli)?;
            match c {
                ProjectCmd::Create { name, pm, investigator } => {
                    to_value(h.create_project(&a, name, &UserId::new(pm.as_str()), &UserId::new(investigator.as_str()))?)
                }
                ProjectCmd::Assign { id, user, role } => {
                    let role = match role {
                        RoleArg::Researcher => Role::Researcher,
                        RoleArg::Referee => Role::Referee,
                    };
                    to_value(h.assign_user(&a, &ProjectId::new(id.as_str()), &UserId::new(user.as_str()), role)?)
                }
                ProjectCmd::Show { id } => to_value(h.get_project(&ProjectId::new(id.as_str()))?),
                ProjectCmd::Close { id } => to_value(h.close_project(&a, &ProjectId::new(id.as_str()))?),
            }
        }
        Command::Wp(c) => wp(&h, cli, c),
        Command::Ingress(c) => ingress(&h, cli, c),
        Command::Egress(c) => egress(&h, cli, c),
        Command::Blueprint(BlueprintCmd::Plan { wp }) => {
            let wp = h.get_work_package(&WorkPackageId::new(wp.as_str()))?;
            let t = wp.final_tier.ok_or_else(|| HavenError::Invalid(format!("{} has no agreed tier", wp.id)))?;
            let bp = plan_environment(
                &h.config().planner(),
                &PlanRequest {
                    environment_id: EnvironmentId::new(format!("{}-plan", wp.id)),
                    work_package: &wp,
                    tier: t,
                    platform_id: h.config().default_platform.clone(),
                    mode: PlanMode::Final,
                },
            )
            .map_err(HavenError::from)?;
            to_value(bp)
        }
        Command::Blueprint(BlueprintCmd::Show { env }) => to_value(h.get_blueprint(&EnvironmentId::new(env.as_str()))?),
        Command::Audit(AuditCmd::Verify) => {
            let report = h.audit().verify_chain().map_err(HavenError::from)?;
            let v = to_value(&report)?;
            if report.valid {
                Ok(v)
            } else {
                Err(Failure::Check(v))
            }
        }
        Command::Audit(AuditCmd::Export { out }) => {
            let mut buf = Vec::new();
            let n = h.audit().export_ndjson(&mut buf).map_err(HavenError::from)?;
            match out {
                Some(path) => {
                    fs::write(path, &buf).map_err(|e| Failure::Setup(format!("{}: {e}", path.display())))?;
                    Ok(json!({ "exported": n, "path": path }))
                }
                None => Ok(Value::String(String::from_utf8_lossy(&buf).into_owned())),
            }
        }
        Command::Jobs => to_value(h.run_due_jobs()?),
        Command::Serve(args) => serve(h, args),
        Command::Policy(_) | Command::Blueprint(BlueprintCmd::Validate { .. }) | Command::Audit(AuditCmd::ImportVerify { .. }) => {
            unreachable!("handled before the store is opened")
        }
    }
}

fn wp(h: &Haven, cli: &Cli, c: &WpCmd) -> Outcome {
    let a = actor(cli)?;
    let id = |s: &String| WorkPackageId::new(s.as_str());
    match c {
        WpCmd::Create { project, datasets, analysis, pre_approved_outputs } => {
            let datasets: BTreeSet<DatasetId> = datasets.iter().map(|d| DatasetId::new(d.as_str())).collect();
            let intent = WorkPackageIntent {
                intended_analysis: analysis.clone(),
                pre_approved_outputs: pre_approved_outputs.iter().map(|o| OutputDescriptor(o.clone())).collect(),
                ..WorkPackageIntent::default()
            };
            to_value(h.create_work_package(&a, &ProjectId::new(project.as_str()), datasets, intent)?)
        }
        WpCmd::Initial { id: w, tier: t, anonymised } => to_value(h.initial_classify(&a, &id(w), tier(*t)?, *anonymised)?),
        WpCmd::Review { id: w } => to_value(h.begin_full_classification(&a, &id(w))?),
        WpCmd::Classify { id: w, answers } => to_value(h.submit_classification(&a, &id(w), read_answers(answers)?)?),
        WpCmd::Withdraw { id: w } => {
            h.withdraw_classification(&a, &id(w))?;
            Ok(json!({ "withdrawn": w }))
        }
        WpCmd::Consensus { id: w, proceed } => to_value(h.record_consensus(&a, &id(w), *proceed)?),
        WpCmd::Status { id: w } => to_value(h.classification_status(&id(w))?),
        WpCmd::Document { id: w, kind, doc } => {
            let kind = match kind {
                DocKind::Dpia => DocumentKind::Dpia,
                DocKind::Ethics => DocumentKind::EthicsApproval,
            };
            to_value(h.record_document(&a, &id(w), kind, DocRef::new(doc.as_str()))?)
        }
        WpCmd::RaiseTier4 { id: w } => to_value(h.raise_tier4(&a, &id(w))?),
        WpCmd::AcknowledgeHalt { id: w } => to_value(h.acknowledge_halt(&a, &id(w))?),
        WpCmd::Start { id: w } => to_value(h.start_analysis(&a, &id(w))?),
        WpCmd::Close { id: w } => to_value(h.close_work_package(&a, &id(w))?),
    }
}

fn ingress(h: &Haven, cli: &Cli, c: &IngressCmd) -> Outcome {
    match c {
        IngressCmd::Deposit { token_id, secret, digest, files } => {
            let mut contents = Vec::new();
            for f in files {
                let bytes = fs::read(f).map_err(|e| Failure::Setup(format!("{}: {e}", f.display())))?;
                let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                contents.push((name, bytes));
            }
            to_value(h.deposit(&TokenId::new(token_id.as_str()), secret, &contents, digest.as_deref())?)
        }
        IngressCmd::Mount { wp, dataset } => {
            to_value(h.authorize_mount(&actor(cli)?, &WorkPackageId::new(wp.as_str()), &DatasetId::new(dataset.as_str()))?)
        }
        IngressCmd::Begin { wp, dataset } => {
            to_value(h.begin_ingress(&actor(cli)?, &WorkPackageId::new(wp.as_str()), &DatasetId::new(dataset.as_str()))?)
        }
        IngressCmd::Complete { volume } => to_value(h.complete_ingress(&actor(cli)?, &VolumeId::new(volume.as_str()))?),
        IngressCmd::Verify { volume, provider_hash } => {
            let rec = h.verify_integrity(&actor(cli)?, &VolumeId::new(volume.as_str()), provider_hash.as_deref())?;
            let v = to_value(&rec)?;
            if rec.status == safehaven_core::ingress::IntegrityStatus::Mismatch {
                Err(Failure::Check(v))
            } else {
                Ok(v)
            }
        }
        IngressCmd::Finish { wp } => to_value(h.complete_initial_ingress(&actor(cli)?, &WorkPackageId::new(wp.as_str()))?),
    }
}

fn egress(h: &Haven, cli: &Cli, c: &EgressCmd) -> Outcome {
    let a = actor(cli)?;
    match c {
        EgressCmd::Request { wp, volume, script, intent, outputs, confirm } => {
            let spec = EgressSpec {
                output_volume_id: VolumeId::new(volume.as_str()),
                analysis_script_ref: script.clone(),
                intent: match intent {
                    IntentArg::Publish => EgressIntent::Publish,
                    IntentArg::FurtherAnalysis => EgressIntent::FurtherAnalysis,
                },
                outputs: outputs.iter().map(|o| OutputDescriptor(o.clone())).collect(),
                investigator_confirms: *confirm,
            };
            to_value(h.request_egress(&a, &WorkPackageId::new(wp.as_str()), spec)?)
        }
        EgressCmd::Approve { derived } => to_value(h.publish_egress(&a, &WorkPackageId::new(derived.as_str()))?),
        EgressCmd::Release { derived, ip_range, hours } => {
            to_value(h.authorize_release(&a, &WorkPackageId::new(derived.as_str()), *ip_range, *hours)?)
        }
        EgressCmd::Resolve { wp } => to_value(h.resolve_egress(&a, &WorkPackageId::new(wp.as_str()))?),
    }
}

fn serve(h: Haven, args: &ServeArgs) -> Outcome {
    let idp = Arc::new(safehaven_api::SignedTokenIdp::new(args.token_key.as_bytes()));
    let state = safehaven_api::AppState::new(h, idp);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Setup(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        safehaven_api::serve(listener, state).await
    })
    .map_err(|e| Failure::Setup(e.to_string()))?;
    Ok(Value::Null)
}

/// Human-readable rendering of a command's result.
fn human(command: &Command, v: &Value) -> String {
    match command {
        Command::Policy(PolicyCmd::Show { tier }) => {
            let mut s = format!("Tier {tier}\n");
            for c in Control::MATRIX {
                let cell = v.get(c.to_string()).cloned().unwrap_or(Value::Null);
                s.push_str(&format!("  {:<26} {}\n", c.to_string(), compact(&cell)));
            }
            s
        }
        Command::Wp(WpCmd::Status { .. }) => {
            let wp = &v["work_package"];
            let mut s = format!("{}  state {}  final tier {}\n", compact(&wp["id"]), compact(&wp["state"]), compact(&wp["final_tier"]));
            s.push_str("required:");
            for r in v["required"].as_array().into_iter().flatten() {
                s.push_str(&format!(" {}", compact(r)));
            }
            s.push('\n');
            for d in v["decisions"].as_array().into_iter().flatten() {
                s.push_str(&format!(
                    "  {:<16} {:<32} tier {}\n",
                    compact(&d["classifier_user_id"]),
                    compact(&d["slot"]),
                    compact(&d["tier"])
                ));
            }
            s.push_str(&format!("consensus now: {} {}\n", compact(&v["preview"]["kind"]), compact(&v["preview"]["tier"])));
            match v["recorded"].get("outcome") {
                Some(o) => s.push_str(&format!("recorded: {} {}\n", compact(&o["kind"]), compact(&o["tier"]))),
                None => s.push_str("recorded: none\n"),
            }
            s
        }
        Command::Audit(AuditCmd::Verify | AuditCmd::ImportVerify { .. }) => match v["first_divergence"].as_object() {
            None if v["valid"] == true => format!("audit chain valid: {} events checked\n", v["checked"]),
            _ => format!(
                "audit chain INVALID: {} at seq {}\n",
                compact(&v["first_divergence"]["kind"]),
                compact(&v["first_divergence"]["seq"])
            ),
        },
        Command::Ingress(IngressCmd::Begin { .. }) => format!(
            "token {}\nsecret {}\nvolume {}\nexpires {}\n",
            compact(&v["token"]["token_id"]),
            compact(&v["secret"]),
            compact(&v["token"]["volume_id"]),
            compact(&v["token"]["expiry"])
        ),
        _ => match v {
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            Value::Object(o) => {
                let mut s = String::new();
                for key in ["id", "token_id", "derived_work_package_id", "kind", "state", "status", "tier", "review_state"] {
                    if let Some(x) = o.get(key) {
                        s.push_str(&format!("{key}: {}\n", compact(x)));
                    }
                }
                if s.is_empty() {
                    s = format!("{}\n", serde_json::to_string_pretty(v).unwrap_or_default());
                }
                s
            }
            other => format!("{}\n", serde_json::to_string_pretty(other).unwrap_or_default()),
        },
    }
}

fn compact(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// Runs one command line, writing results to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    let result = execute(&cli);
    let write_value = |out: &mut dyn Write, v: &Value| {
        if cli.json {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).unwrap_or_default());
        } else {
            let _ = write!(out, "{}", human(&cli.command, v));
        }
    };
    match result {
        Ok(v) => {
            write_value(out, &v);
            0
        }
        Err(Failure::Check(v)) => {
            write_value(out, &v);
            3
        }
        Err(Failure::Service(e)) => {
            if cli.json {
                let _ = writeln!(out, "{}", json!({ "error": { "code": e.code(), "message": e.to_string() } }));
            }
            let _ = writeln!(err, "error [{}]: {e}", e.code());
            1
        }
        Err(Failure::Setup(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            4
        }
    }
}
