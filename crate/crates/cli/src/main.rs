use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use vpd_core::lifecycle::{authorize, Decision, SupervisorMode};
use vpd_core::oracle::{brute_force_accessible, Via};
use vpd_core::relstore::{format_timestamp, parse_timestamp, DayBound, SchemaManifest, Violation};
use vpd_core::sessionctx::{ContextMap, SessionContext};
use vpd_core::simharness::{run_scenario, validate_scenario, Scenario, ScenarioReport};
use vpd_core::vpdrewrite::{entails, standard_policies, Entailment, Provenance};
use vpd_core::{fixtures, parse_query, ChainMode, Dataset, GeoPoint, Query};

mod render;
mod state;

use state::State;

#[derive(Parser)]
#[command(
    name = "vpd",
    version,
    about = "Query rewriting into location- and time-dependent private views"
)]
struct Cli {
    /// Dataset: a directory of CSV tables or a canonical JSON file.
    /// Defaults to the bundled logistics sample.
    #[arg(long, env = "VPD_DATA", global = true)]
    data: Option<PathBuf>,
    /// Schema manifest (JSON) replacing the dataset's own.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Route corridor half-width in km.
    #[arg(long, global = true)]
    corridor_km: Option<f64>,
    /// Supervisor semantics when a subordinate is out of range.
    #[arg(long, global = true, default_value = "narrative")]
    mode: SupervisorMode,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Session state file shared by successive invocations.
    #[arg(
        long,
        env = "VPD_STATE",
        global = true,
        default_value = ".vpd-state.json"
    )]
    state: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the dataset and print a summary.
    Load,
    /// Open a session; prints the session id.
    Login {
        user: String,
        #[arg(long, requires = "lon", allow_hyphen_values = true)]
        lat: Option<f64>,
        #[arg(long, requires = "lat", allow_hyphen_values = true)]
        lon: Option<f64>,
        /// Reported time (RFC 3339 or a date).
        #[arg(long)]
        time: Option<String>,
    },
    /// Close a session.
    Logout { session: String },
    /// List open sessions.
    Sessions,
    /// Run a query through the session's VPD.
    Query {
        /// Session id, or a subject name (its latest session, else wired).
        session: String,
        text: String,
        #[arg(long, default_value = "workflow")]
        chain: ChainMode,
    },
    /// Show a VPD definition, its validity and its rows.
    Vpd {
        /// Session id or subject name.
        target: String,
        #[arg(long, default_value = "workflow")]
        chain: ChainMode,
        #[arg(long, default_value = "select * from object")]
        query: String,
    },
    /// Show how a query is rewritten and checked.
    Explain {
        session: String,
        text: String,
        #[arg(long, default_value = "workflow")]
        chain: ChainMode,
    },
    /// Play a scenario and write its access event log.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Event log destination (JSON lines); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force reference answer for `select * from object`.
    Oracle {
        target: String,
        #[arg(long, default_value = "workflow")]
        chain: ChainMode,
    },
    /// Check the dataset and optionally a scenario.
    Validate {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

enum Outcome {
    Done,
    /// Well-formed request, access refused.
    Refused,
}

/// A query that failed to parse, with its text for the caret display.
#[derive(Debug)]
struct BadQuery {
    text: String,
    error: vpd_core::Error,
}

impl fmt::Display for BadQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)?;
        if let vpd_core::Error::Syntax { position, .. }
        | vpd_core::Error::UnsupportedFeature { position, .. } = self.error
        {
            let col = self.text[..position.min(self.text.len())].chars().count();
            write!(f, "\n  {}\n  {}^", self.text, " ".repeat(col))?;
        }
        Ok(())
    }
}

impl std::error::Error for BadQuery {}

fn parse(text: &str) -> Result<Query> {
    parse_query(text).map_err(|error| {
        BadQuery {
            text: text.to_string(),
            error,
        }
        .into()
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Refused) => ExitCode::from(2),
        Err(e) => {
            report_error(&e, cli.format);
            ExitCode::from(1)
        }
    }
}

fn error_code(e: &anyhow::Error) -> &'static str {
    if let Some(b) = e.downcast_ref::<BadQuery>() {
        return b.error.code();
    }
    e.downcast_ref::<vpd_core::Error>()
        .map_or("E_CLI", vpd_core::Error::code)
}

fn report_error(e: &anyhow::Error, format: Format) {
    let code = error_code(e);
    match format {
        Format::Table => eprintln!("error[{code}]: {e:#}"),
        Format::Json => {
            let mut body = json!({ "code": code, "message": format!("{e:#}") });
            if let Some(BadQuery {
                error: vpd_core::Error::Syntax { position, message },
                ..
            }) = e.downcast_ref()
            {
                body = json!({ "code": code, "message": message, "position": position });
            }
            eprintln!("{}", json!({ "error": body }));
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Load => cmd_load(cli),
        Command::Login {
            user,
            lat,
            lon,
            time,
        } => cmd_login(cli, user, *lat, *lon, time.as_deref()),
        Command::Logout { session } => cmd_logout(cli, session),
        Command::Sessions => cmd_sessions(cli),
        Command::Query {
            session,
            text,
            chain,
        } => cmd_query(cli, session, text, *chain),
        Command::Vpd {
            target,
            chain,
            query,
        } => cmd_vpd(cli, target, query, *chain),
        Command::Explain {
            session,
            text,
            chain,
        } => cmd_explain(cli, session, text, *chain),
        Command::Simulate { scenario, out } => cmd_simulate(cli, scenario, out.as_deref()),
        Command::Oracle { target, chain } => cmd_oracle(cli, target, *chain),
        Command::Validate { scenario } => cmd_validate(cli, scenario.as_deref()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

// ---------------------------------------------------------------------
// Configuration.

fn load_raw(cli: &Cli, fallback: Option<&Path>) -> Result<Dataset> {
    match cli.data.as_deref().or(fallback) {
        Some(p) => Dataset::load(p).with_context(|| format!("loading dataset {}", p.display())),
        None => Ok(fixtures::logistics()?),
    }
}

fn with_overrides(cli: &Cli, mut d: Dataset) -> Result<Dataset> {
    if let Some(p) = &cli.schema {
        let text = std::fs::read_to_string(p)
            .with_context(|| format!("reading schema {}", p.display()))?;
        let schema: SchemaManifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing schema {}", p.display()))?;
        d = d.with_schema(schema)?;
    }
    if let Some(km) = cli.corridor_km {
        let mut schema = d.schema.clone();
        schema.corridor_km = km;
        d = d.with_schema(schema)?;
    }
    Ok(d)
}

fn dataset(cli: &Cli) -> Result<Dataset> {
    with_overrides(cli, load_raw(cli, None)?)
}

/// Session by id, else the latest session of the named subject, else a
/// wired context for that subject.
fn resolve(state: &State, d: &Dataset, target: &str) -> Result<SessionContext> {
    if let Ok(ctx) = state.registry.get(target) {
        return Ok(ctx.clone());
    }
    if d.subject_by_name(target).is_some() {
        return Ok(state
            .registry
            .contexts()
            .remove(target)
            .unwrap_or_else(|| SessionContext::wired(target)));
    }
    Err(vpd_core::Error::UnknownSession(target.to_string()).into())
}

// ---------------------------------------------------------------------
// Commands.

fn cmd_load(cli: &Cli) -> Result<Outcome> {
    let d = dataset(cli)?;
    let source = cli
        .data
        .as_ref()
        .map_or_else(|| "bundled sample".to_string(), |p| p.display().to_string());
    let counts = [
        ("subject", d.subjects.len()),
        ("assignment", d.assignments.len()),
        ("carrier", d.carriers.len()),
        ("object", d.objects.len()),
        ("org_hierarchy", d.org_edges.len()),
    ];
    let fks: Vec<String> = d
        .schema
        .foreign_keys
        .iter()
        .map(|f| format!("{} -> {}", f.from, f.to))
        .collect();
    match cli.format {
        Format::Json => print_json(&json!({
            "source": source,
            "tables": counts.iter().map(|(t, n)| (t.to_string(), *n)).collect::<std::collections::BTreeMap<_, _>>(),
            "corridor_km": d.schema.corridor_km,
            "foreign_keys": fks,
        }))?,
        Format::Table => {
            println!("dataset: {source} (valid)");
            let rows: Vec<Vec<String>> = counts
                .iter()
                .map(|(t, n)| vec![t.to_string(), n.to_string()])
                .collect();
            print!("{}", render::table(&["table".into(), "rows".into()], &rows));
            println!("corridor: {} km", d.schema.corridor_km);
            println!("foreign keys: {}", fks.join(", "));
        }
    }
    Ok(Outcome::Done)
}

fn cmd_login(
    cli: &Cli,
    user: &str,
    lat: Option<f64>,
    lon: Option<f64>,
    time: Option<&str>,
) -> Result<Outcome> {
    let d = dataset(cli)?;
    let location = lat.zip(lon).map(|(a, b)| GeoPoint::new(a, b));
    let time = time
        .map(|t| parse_timestamp(t, DayBound::Start).map_err(anyhow::Error::msg))
        .transpose()?;
    let mut state = State::open(&cli.state)?;
    let opened_at = time.unwrap_or_else(Utc::now);
    let ctx = state.registry.open(user, location, time, opened_at, &d)?;
    state.save()?;
    match cli.format {
        Format::Json => print_json(&session_json(&ctx))?,
        Format::Table => println!("{}", ctx.session_id),
    }
    Ok(Outcome::Done)
}

fn session_json(ctx: &SessionContext) -> serde_json::Value {
    json!({
        "session": ctx.session_id,
        "user": ctx.user,
        "location": ctx.location,
        "time": ctx.timestamp.map(format_timestamp),
    })
}

fn cmd_logout(cli: &Cli, session: &str) -> Result<Outcome> {
    let mut state = State::open(&cli.state)?;
    if state.registry.close(session).is_none() {
        return Err(vpd_core::Error::UnknownSession(session.to_string()).into());
    }
    state.save()?;
    if cli.format == Format::Json {
        print_json(&json!({ "closed": session }))?;
    }
    Ok(Outcome::Done)
}

fn cmd_sessions(cli: &Cli) -> Result<Outcome> {
    let state = State::open(&cli.state)?;
    let sessions: Vec<&SessionContext> = state.registry.sessions().collect();
    match cli.format {
        Format::Json => print_json(&sessions.iter().map(|c| session_json(c)).collect::<Vec<_>>())?,
        Format::Table => {
            let rows: Vec<Vec<String>> = sessions
                .iter()
                .map(|c| {
                    vec![
                        c.session_id.clone(),
                        c.user.clone(),
                        c.location
                            .map_or("-".into(), |g| format!("{}, {}", g.lat, g.lon)),
                        c.timestamp.map_or("-".into(), format_timestamp),
                    ]
                })
                .collect();
            let headers = ["session", "user", "location", "time"].map(String::from);
            print!("{}", render::table(&headers, &rows));
        }
    }
    Ok(Outcome::Done)
}

struct Request {
    d: Dataset,
    ctx: SessionContext,
    contexts: ContextMap,
    decision: Decision,
}

fn decide(cli: &Cli, target: &str, text: &str, chain: ChainMode) -> Result<Request> {
    let d = dataset(cli)?;
    let state = State::open(&cli.state)?;
    let ctx = resolve(&state, &d, target)?;
    let contexts = state.registry.contexts();
    drop(state);
    let q = parse(text)?;
    let decision = authorize(
        &ctx,
        &q,
        &contexts,
        &d,
        &standard_policies(),
        chain,
        cli.mode,
    )?;
    Ok(Request {
        d,
        ctx,
        contexts,
        decision,
    })
}

fn outcome(r: &Request) -> Outcome {
    if r.decision.state.is_granted() {
        Outcome::Done
    } else {
        Outcome::Refused
    }
}

fn verdict_line(r: &Request) -> String {
    format!(
        "verdict: {} ({})",
        r.decision.state.state.as_str(),
        r.decision.state.reason
    )
}

fn cmd_query(cli: &Cli, session: &str, text: &str, chain: ChainMode) -> Result<Outcome> {
    let r = decide(cli, session, text, chain)?;
    let dec = &r.decision;
    match cli.format {
        Format::Json => print_json(&json!({
            "session": r.ctx.session_id,
            "subject": r.ctx.user,
            "verdict": dec.state.state,
            "reason": dec.state.reason,
            "chain": chain,
            "vpd": dec.vpd.render(),
            "schema": dec.rows.schema,
            "rows": render::json_rows(&dec.rows),
        }))?,
        Format::Table => {
            println!("{}", verdict_line(&r));
            print!("{}", dec.vpd.render());
            print!("{}", render::rowset(&dec.rows));
            println!(
                "{} row{}",
                dec.rows.len(),
                if dec.rows.len() == 1 { "" } else { "s" }
            );
        }
    }
    Ok(outcome(&r))
}

fn cmd_vpd(cli: &Cli, target: &str, text: &str, chain: ChainMode) -> Result<Outcome> {
    let r = decide(cli, target, text, chain)?;
    let v = &r.decision.vpd;
    let privileges: Vec<String> = v.privileges.iter().map(|p| p.to_string()).collect();
    match cli.format {
        Format::Json => print_json(&json!({
            "subject": v.subject,
            "definition": v.render(),
            "location_dependent": v.location_dependent,
            "time_dependent": v.time_dependent,
            "privileges": privileges,
            "subordinates": v.subordinates.iter().map(|b| json!({
                "subject": b.subject,
                "included": b.included,
                "reason": b.check.reason(),
            })).collect::<Vec<_>>(),
            "verdict": r.decision.state.state,
            "reason": r.decision.state.reason,
            "objects": r.decision.rows.object_ids(),
        }))?,
        Format::Table => {
            print!("{}", v.render());
            println!("privileges: {}", privileges.join(", "));
            for b in &v.subordinates {
                let mark = if b.included { "included" } else { "dropped" };
                println!("subordinate {}: {mark} ({})", b.subject, b.check.reason());
            }
            println!("{}", verdict_line(&r));
            let oids: Vec<String> = r.decision.rows.object_ids().into_iter().collect();
            println!(
                "objects: {}",
                if oids.is_empty() {
                    "-".into()
                } else {
                    oids.join(", ")
                }
            );
        }
    }
    Ok(outcome(&r))
}

fn cmd_explain(cli: &Cli, session: &str, text: &str, chain: ChainMode) -> Result<Outcome> {
    let r = decide(cli, session, text, chain)?;
    let v = &r.decision.vpd;
    let ent: Entailment = entails(&standard_policies(), v, &r.d, &r.ctx)?;
    let steps: Vec<String> = v
        .provenance
        .iter()
        .filter(|p| {
            !matches!(
                p,
                Provenance::SubordinateIncluded { .. } | Provenance::SubordinateDropped { .. }
            )
        })
        .map(|p| p.to_string())
        .collect();
    let tree: Vec<String> = v
        .provenance
        .iter()
        .filter(|p| {
            matches!(
                p,
                Provenance::SubordinateIncluded { .. } | Provenance::SubordinateDropped { .. }
            )
        })
        .map(|p| p.to_string())
        .collect();
    let witness = ent
        .witness
        .as_ref()
        .map(|w| format!("{} leaks {}", w.policy, w.oid));
    match cli.format {
        Format::Json => print_json(&json!({
            "steps": steps,
            "expansion": tree,
            "vpd": v.render(),
            "entailment": { "holds": ent.holds, "witness": witness },
            "verdict": r.decision.state.state,
            "reason": r.decision.state.reason,
            "contexts": r.contexts.len(),
        }))?,
        Format::Table => {
            for s in &steps {
                println!("{s}");
            }
            println!("expansion of vpd({}):", v.subject);
            for (i, t) in tree.iter().enumerate() {
                println!("  {} {t}", if i + 1 == tree.len() { "`-" } else { "|-" });
            }
            print!("{}", v.render());
            match &witness {
                None => println!("entailment: holds"),
                Some(w) => println!("entailment: violated ({w})"),
            }
            println!("{}", verdict_line(&r));
        }
    }
    Ok(outcome(&r))
}

fn cmd_simulate(cli: &Cli, path: &Path, out: Option<&Path>) -> Result<Outcome> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    let sc = Scenario::from_json_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let fallback = sc.dataset.as_ref().map(|p| base.join(p));
    let d = with_overrides(cli, load_raw(cli, fallback.as_deref())?)?;
    for issue in validate_scenario(&sc, &d).issues {
        eprintln!("warning: {issue}");
    }
    let (outcome, failure) = match run_scenario(&sc, &d, cli.mode) {
        Ok(o) => (o, None),
        Err(f) => (f.partial.clone(), Some(f)),
    };
    let log = outcome.log.to_jsonl();
    match out {
        Some(p) => std::fs::write(p, &log).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{log}"),
    }
    if let Some(path) = out {
        let states: Vec<Vec<String>> = outcome
            .states
            .values()
            .map(|s| {
                vec![
                    s.subject.clone(),
                    s.state.as_str().into(),
                    s.reason.to_string(),
                ]
            })
            .collect();
        match cli.format {
            Format::Json => print_json(&json!({
                "events": outcome.log.events.len(),
                "log": path.display().to_string(),
                "partial": failure.is_some(),
                "states": outcome.states,
                "queries": outcome.queries,
            }))?,
            Format::Table => {
                println!(
                    "{} events written to {}",
                    outcome.log.events.len(),
                    path.display()
                );
                print!(
                    "{}",
                    render::table(
                        &["subject".into(), "state".into(), "reason".into()],
                        &states
                    )
                );
            }
        }
    }
    if let Some(f) = failure {
        let events = f.partial.log.events.len();
        return Err(anyhow::Error::new(vpd_core::Error::from(f))
            .context(format!("partial log with {events} events written")));
    }
    Ok(Outcome::Done)
}

fn cmd_oracle(cli: &Cli, target: &str, chain: ChainMode) -> Result<Outcome> {
    let d = dataset(cli)?;
    let state = State::open(&cli.state)?;
    let ctx = resolve(&state, &d, target)?;
    let contexts = state.registry.contexts();
    drop(state);
    let r = brute_force_accessible(&ctx.user, &ctx, &contexts, &d, chain, cli.mode)?;
    match cli.format {
        Format::Json => print_json(&r)?,
        Format::Table => {
            let via = |v: &Option<Via>| match v {
                None => "-".to_string(),
                Some(Via::OwnChain) => "own chain".into(),
                Some(Via::SubordinateChain(s)) => format!("via {s}"),
                Some(Via::DirectSender) => "sender".into(),
                Some(Via::DirectReceiver) => "receiver".into(),
            };
            let rows: Vec<Vec<String>> = r
                .trace
                .iter()
                .map(|t| {
                    vec![
                        t.oid.clone(),
                        if t.permitted { "yes" } else { "no" }.into(),
                        via(&t.via),
                    ]
                })
                .collect();
            print!(
                "{}",
                render::table(&["oid".into(), "permitted".into(), "path".into()], &rows)
            );
            let oids: Vec<&str> = r.objects.iter().map(String::as_str).collect();
            println!(
                "objects: {}",
                if oids.is_empty() {
                    "-".into()
                } else {
                    oids.join(", ")
                }
            );
        }
    }
    Ok(Outcome::Done)
}

fn cmd_validate(cli: &Cli, scenario: Option<&Path>) -> Result<Outcome> {
    let sc = scenario
        .map(|p| -> Result<(Scenario, PathBuf)> {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading scenario {}", p.display()))?;
            Ok((
                Scenario::from_json_str(&text)?,
                p.parent().unwrap_or(Path::new(".")).to_path_buf(),
            ))
        })
        .transpose()?;
    let fallback = sc
        .as_ref()
        .and_then(|(s, base)| s.dataset.as_ref().map(|p| base.join(p)));
    let (d, violations): (Option<Dataset>, Vec<Violation>) =
        match load_raw(cli, fallback.as_deref()).and_then(|d| with_overrides(cli, d)) {
            Ok(d) => (Some(d), Vec::new()),
            Err(e) => match e.downcast::<vpd_core::Error>() {
                Ok(vpd_core::Error::Integrity(v)) => (None, v),
                Ok(other) => return Err(other.into()),
                Err(e) => match e.root_cause().downcast_ref::<vpd_core::Error>() {
                    Some(vpd_core::Error::Integrity(v)) => (None, v.clone()),
                    _ => return Err(e),
                },
            },
        };
    let report: Option<ScenarioReport> = match (&sc, &d) {
        (Some((s, _)), Some(d)) => Some(validate_scenario(s, d)),
        _ => None,
    };
    let clean = violations.is_empty() && report.as_ref().is_none_or(ScenarioReport::is_empty);
    match cli.format {
        Format::Json => print_json(&json!({
            "valid": clean,
            "dataset": violations,
            "scenario": report.as_ref().map(|r| &r.issues),
        }))?,
        Format::Table => {
            if violations.is_empty() {
                println!("dataset: valid");
            } else {
                println!(
                    "dataset: {} violation{}",
                    violations.len(),
                    if violations.len() == 1 { "" } else { "s" }
                );
                for v in &violations {
                    println!("  {v}");
                }
            }
            if let Some(r) = &report {
                if r.is_empty() {
                    println!("scenario: valid");
                } else {
                    println!(
                        "scenario: {} issue{}",
                        r.issues.len(),
                        if r.issues.len() == 1 { "" } else { "s" }
                    );
                    for i in &r.issues {
                        println!("  {i}");
                    }
                }
            }
        }
    }
    if clean {
        Ok(Outcome::Done)
    } else {
        bail!("validation failed")
    }
}
