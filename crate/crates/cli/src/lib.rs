//! The `aiq` command line and its local HTTP API.

pub mod api;

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aiq_core::adapters::AdapterConfig;
use aiq_core::adapters::ConsoleTranscriber;
use aiq_core::administration::{RunOptions, Session, SessionStatus, Store, Subject, SubjectCategory};
use aiq_core::battery::{load_battery, reference_battery, reference_battery_json, Battery, ScoringMode};
use aiq_core::clock::FixedClock;
use aiq_core::grading::{classify_grade, CapabilityProfile, GradeResult};
use aiq_core::reporting::{series, trend_report, write_rank_csv, write_trend_csv};
use aiq_core::scoring::{partial_ability_scores, write_results_csv};
use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::api::RankQuery;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Ability-based IQ assessment of AI systems and humans.
#[derive(Debug, Parser)]
#[command(name = "aiq", version)]
pub struct Cli {
    /// Store directory. AIQ_STORE takes precedence when set.
    #[arg(long, global = true, default_value = "aiq-store")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check or print test batteries.
    #[command(subcommand)]
    Battery(BatteryCmd),
    /// Register and list subjects.
    #[command(subcommand)]
    Subject(SubjectCmd),
    /// Start, run and inspect test sessions.
    #[command(subcommand)]
    Session(SessionCmd),
    /// Enter manual scores for human-graded items.
    #[command(subcommand)]
    Score(ScoreCmd),
    /// Classify capability profiles into intelligence grades.
    #[command(subcommand)]
    Grade(GradeCmd),
    /// Rank tables, trends and result exports.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Serve the HTTP API (and optionally the grader console) on loopback.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum BatteryCmd {
    /// Validate a battery file and list every violation.
    Validate { file: PathBuf },
    /// Print the built-in reference battery.
    Reference,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CategoryArg {
    Human,
    Ai,
}

#[derive(Debug, Subcommand)]
pub enum SubjectCmd {
    Add {
        id: String,
        #[arg(long)]
        name: String,
        #[arg(long, value_enum)]
        category: CategoryArg,
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        country: Option<String>,
        #[arg(long)]
        vintage: Option<i32>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum SessionCmd {
    /// Create a session and print its id.
    Start {
        /// Battery file, or `reference` for the built-in battery.
        #[arg(long)]
        battery: String,
        #[arg(long)]
        subject: String,
        /// Adapter config as a JSON file or inline JSON.
        #[arg(long)]
        adapter: String,
    },
    /// Administer the remaining items. Resumes where a previous run stopped.
    Run {
        id: String,
        #[arg(long)]
        max_items: Option<usize>,
    },
    Show {
        id: String,
        #[arg(long)]
        json: bool,
    },
    List,
    Abort {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScoreCmd {
    /// Terminal grading loop over the pending items of a session.
    Interactive {
        id: String,
        #[arg(long, default_value = "console")]
        grader: String,
    },
    /// Score one pending item.
    Set {
        id: String,
        item: String,
        points: f64,
        #[arg(long)]
        grader: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum GradeCmd {
    /// Classify a profile file, or a profile stored under `profiles/`.
    Classify {
        profile: String,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long)]
        json: bool,
    },
    /// Print the measured part of a subject's profile from its complete sessions.
    Measure { subject: String },
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    /// Latest IQ per subject, highest first.
    Rank {
        /// Only use `results/<NAME>.json`.
        #[arg(long)]
        results: Option<String>,
        #[arg(long)]
        as_of: Option<DateTime<Utc>>,
        #[arg(long, conflicts_with = "json")]
        csv: bool,
        #[arg(long)]
        json: bool,
    },
    /// Trend scenario of every subject against a human baseline.
    Trend {
        #[arg(long)]
        baseline: String,
        #[arg(long, conflicts_with = "json")]
        csv: bool,
        #[arg(long)]
        json: bool,
    },
    /// IQ results of complete sessions.
    Results {
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// AIQ_PORT takes precedence when set.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Address to bind. Anything but loopback exposes an unauthenticated API.
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: std::net::IpAddr,
    /// Directory of static console assets to serve at `/`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DOMAIN
        }
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

/// Opens the store named by AIQ_STORE or `--store`. AIQ_NOW pins the clock.
pub fn open_store(flag: &Path) -> Result<Store> {
    let root = env_var("AIQ_STORE")
        .map(PathBuf::from)
        .unwrap_or_else(|| flag.to_path_buf());
    let store = Store::open(&root).with_context(|| format!("opening store {}", root.display()))?;
    Ok(match env_var("AIQ_NOW") {
        Some(now) => {
            let at: DateTime<Utc> = now.parse().with_context(|| format!("AIQ_NOW={now}"))?;
            store.with_clock(Arc::new(FixedClock(at)))
        }
        None => store,
    })
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Battery(BatteryCmd::Validate { file }) => battery_validate(&file),
        Command::Battery(BatteryCmd::Reference) => {
            print!("{}", reference_battery_json());
            Ok(EXIT_OK)
        }
        Command::Subject(cmd) => subject(&open_store(&cli.store)?, cmd),
        Command::Session(cmd) => session(&open_store(&cli.store)?, cmd),
        Command::Score(cmd) => score(&open_store(&cli.store)?, cmd),
        Command::Grade(cmd) => grade(&cli.store, cmd),
        Command::Report(cmd) => report(&open_store(&cli.store)?, cmd),
        Command::Serve(args) => serve(open_store(&cli.store)?, args),
    }
}

fn battery_validate(file: &Path) -> Result<i32> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let battery = match Battery::from_json_str(&text) {
        Ok(b) => b,
        Err(e) => {
            println!("{}: {e}", file.display());
            return Ok(EXIT_DOMAIN);
        }
    };
    let report = battery.validate();
    if report.is_valid() {
        println!("{}: valid, {} items", file.display(), battery.item_count());
        return Ok(EXIT_OK);
    }
    for v in &report.violations {
        println!("SchemaViolation in {}: {} [{}]", v.field(), v.reason(), v.code());
    }
    println!(
        "{}: invalid, {} violation(s)",
        file.display(),
        report.violations.len()
    );
    Ok(EXIT_DOMAIN)
}

fn subject(store: &Store, cmd: SubjectCmd) -> Result<i32> {
    match cmd {
        SubjectCmd::Add {
            id,
            name,
            category,
            region,
            country,
            vintage,
        } => {
            let category = match category {
                CategoryArg::Human => SubjectCategory::Human,
                CategoryArg::Ai => SubjectCategory::ArtificialSystem,
            };
            let mut s = Subject::new(id, name, category);
            s.region = region;
            s.country = country;
            s.vintage = vintage;
            store.add_subject(s)?;
        }
        SubjectCmd::List => {
            for s in store.subjects()? {
                let kind = match s.category {
                    SubjectCategory::Human => "Human",
                    SubjectCategory::ArtificialSystem => "AI",
                };
                let place = match (&s.region, &s.country) {
                    (Some(r), Some(c)) => format!("{r}/{c}"),
                    (Some(r), None) => r.clone(),
                    (None, Some(c)) => c.clone(),
                    (None, None) => String::new(),
                };
                println!("{}\t{}\t{}\t{}", s.id, kind, s.display_name, place);
            }
        }
    }
    Ok(EXIT_OK)
}

fn read_battery(arg: &str) -> Result<Battery> {
    if arg == "reference" {
        return Ok(reference_battery());
    }
    load_battery(arg).with_context(|| format!("loading battery {arg}"))
}

/// Reads an adapter config from a file or inline JSON. AIQ_HTTP_TIMEOUT_MS
/// fills in `timeout_ms` when the config leaves it out.
pub fn read_adapter(arg: &str) -> Result<AdapterConfig> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading adapter config {arg}"))?
    };
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing adapter config {arg}"))?;
    if let (Some(obj), Some(ms)) = (value.as_object_mut(), env_var("AIQ_HTTP_TIMEOUT_MS")) {
        if !obj.contains_key("timeout_ms") {
            let ms: u64 = ms.parse().with_context(|| format!("AIQ_HTTP_TIMEOUT_MS={ms}"))?;
            obj.insert("timeout_ms".into(), ms.into());
        }
    }
    serde_json::from_value(value).with_context(|| format!("adapter config {arg}"))
}

fn session(store: &Store, cmd: SessionCmd) -> Result<i32> {
    match cmd {
        SessionCmd::Start {
            battery,
            subject,
            adapter,
        } => {
            let battery = read_battery(&battery)?;
            let adapter = read_adapter(&adapter)?;
            let session = store.start_session(&battery, &subject, adapter)?;
            println!("{}", session.id);
        }
        SessionCmd::Run { id, max_items } => {
            let opts = RunOptions {
                max_items,
                transcriber: Some(Box::new(ConsoleTranscriber)),
                ..RunOptions::default()
            };
            let session = store.run_session(&id, opts)?;
            print_session(store, &session)?;
        }
        SessionCmd::Show { id, json } => {
            let session = store.load_session(&id)?;
            if json {
                print!("{}", aiq_core::canonical::to_string(&session)?);
            } else {
                print_session(store, &session)?;
            }
        }
        SessionCmd::List => {
            for s in store.summaries()? {
                println!(
                    "{}\t{}\t{}\t{}\t{} responses\t{} pending",
                    s.id, s.subject_ref, s.battery_ref, s.status, s.responses, s.pending
                );
            }
        }
        SessionCmd::Abort { id } => {
            let session = store.abort_session(&id)?;
            println!("{} {}", session.id, session.status);
        }
    }
    Ok(EXIT_OK)
}

fn print_session(store: &Store, session: &Session) -> Result<()> {
    let battery = store.battery(&session.battery_ref)?;
    println!("session:  {}", session.id);
    println!("subject:  {}", session.subject_ref);
    println!("battery:  {}", session.battery_ref);
    println!("status:   {}", session.status);
    println!("answered: {}/{}", session.responses.len(), battery.item_count());
    let pending = session.pending_items(&battery);
    if !pending.is_empty() {
        println!("pending:  {}", pending.join(", "));
    }
    for (ability, score) in partial_ability_scores(session, &battery) {
        println!("f_{}:      {:.2}", ability.symbol(), score);
    }
    if session.status == SessionStatus::Complete {
        println!("Q:        {}", store.iq_result(session)?.q);
    }
    Ok(())
}

fn score(store: &Store, cmd: ScoreCmd) -> Result<i32> {
    match cmd {
        ScoreCmd::Set {
            id,
            item,
            points,
            grader,
        } => {
            let session = store.record_manual_score(&id, &item, points, &grader)?;
            print_session(store, &session)?;
        }
        ScoreCmd::Interactive { id, grader } => {
            let stdin = io::stdin();
            score_interactive(store, &id, &grader, &mut stdin.lock(), &mut io::stdout())?;
        }
    }
    Ok(EXIT_OK)
}

/// Prompts for a score per pending item. A blank line skips an item and `q`
/// stops.
pub fn score_interactive(
    store: &Store,
    id: &str,
    grader: &str,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let session = store.load_session(id)?;
    let battery = store.battery(&session.battery_ref)?;
    let pending: Vec<String> = session
        .pending_items(&battery)
        .iter()
        .map(|s| s.to_string())
        .collect();
    if pending.is_empty() {
        writeln!(out, "nothing to grade in {id} ({})", session.status)?;
        return Ok(());
    }
    'items: for item_id in pending {
        let (_, item) = battery
            .find_item(&item_id)
            .ok_or_else(|| anyhow!("item {item_id} vanished from battery"))?;
        let rubric = match &item.scoring {
            ScoringMode::HumanRubric { rubric, step } => format!("{rubric} (step {step})"),
            _ => "no rubric: subject did not answer".to_string(),
        };
        let response = session
            .responses
            .get(&item_id)
            .map(|r| r.raw_response.as_str())
            .unwrap_or("");
        writeln!(out, "--- {item_id} ---")?;
        writeln!(out, "prompt:   {}", item.prompt.content)?;
        writeln!(out, "response: {response}")?;
        writeln!(out, "rubric:   {rubric}")?;
        loop {
            write!(out, "points [0-{}], blank to skip, q to quit> ", item.max_points)?;
            out.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                break 'items;
            }
            let line = line.trim();
            match line {
                "" => continue 'items,
                "q" => break 'items,
                _ => {}
            }
            let Ok(points) = line.parse::<f64>() else {
                writeln!(out, "not a number: {line}")?;
                continue;
            };
            match store.record_manual_score(id, &item_id, points, grader) {
                Ok(s) => {
                    writeln!(out, "recorded; status {}", s.status)?;
                    continue 'items;
                }
                Err(aiq_core::administration::StoreError::Scoring(e)) => writeln!(out, "{e}")?,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let session = store.load_session(id)?;
    writeln!(out, "status: {}", session.status)?;
    if session.status == SessionStatus::Complete {
        writeln!(out, "Q: {}", store.iq_result(&session)?.q)?;
    }
    Ok(())
}

fn read_profile(store_flag: &Path, arg: &str) -> Result<CapabilityProfile> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing profile {arg}"));
    }
    let store = open_store(store_flag)?;
    store
        .profiles()?
        .into_iter()
        .find(|(name, _)| name == arg)
        .map(|(_, p)| p)
        .ok_or_else(|| anyhow!("no profile file or stored profile named {arg}"))
}

/// Human-readable grade report, starting with `grade: N`.
pub fn render_grade(g: &GradeResult) -> String {
    let list =
        |cs: &[aiq_core::grading::Condition]| cs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; ");
    let mut out = format!("grade: {}\n", g.grade);
    if g.degenerate {
        out.push_str("degenerate: yes\n");
    }
    out.push_str(&format!("storage: {:?}\n", g.storage_trend));
    out.push_str(&format!("matched: {}\n", list(&g.matched_conditions)));
    if g.next_grade_gaps.is_empty() {
        out.push_str("gaps: none\n");
    } else {
        out.push_str(&format!(
            "gaps to grade {}: {}\n",
            g.grade + 1,
            list(&g.next_grade_gaps)
        ));
    }
    for n in &g.notes {
        out.push_str(&format!("note: {n}\n"));
    }
    out
}

fn grade(store_flag: &Path, cmd: GradeCmd) -> Result<i32> {
    match cmd {
        GradeCmd::Classify { profile, eps, json } => {
            let p = read_profile(store_flag, &profile)?;
            let g = classify_grade(&p, eps)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&g)?);
            } else {
                print!("{}", render_grade(&g));
            }
        }
        GradeCmd::Measure { subject } => {
            let store = open_store(store_flag)?;
            store.subject(&subject)?;
            let results = store.completed_results()?;
            if !results.iter().any(|r| r.subject_ref == subject) {
                bail!("no complete sessions for {subject}");
            }
            let p = CapabilityProfile::measured(&subject, &results);
            print!("{}", aiq_core::canonical::to_string(&p)?);
        }
    }
    Ok(EXIT_OK)
}

fn report(store: &Store, cmd: ReportCmd) -> Result<i32> {
    let stdout = io::stdout();
    match cmd {
        ReportCmd::Rank {
            results,
            as_of,
            csv,
            json,
        } => {
            let table =
                api::store_rank(store, &RankQuery { results, as_of }).map_err(|e| anyhow!(e.message))?;
            if csv {
                write_rank_csv(&table, stdout.lock())?;
            } else if json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                print!("{}", table.render_text());
            }
        }
        ReportCmd::Trend { baseline, csv, json } => {
            let mut all = series(&store.observations()?);
            all.retain(|subject, points| {
                let fit = points
                    .first()
                    .is_some_and(|p0| points.iter().any(|p| p.at != p0.at));
                if !fit && *subject != baseline {
                    eprintln!("skipping {subject}: needs observations at two or more times");
                }
                fit || *subject == baseline
            });
            let rows = trend_report(&all, &baseline)?;
            if csv {
                write_trend_csv(&rows, stdout.lock())?;
            } else if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                for a in &rows {
                    let crossing = a
                        .crossing_year
                        .map(|y| format!("  crosses {:.2}", 1970.0 + y))
                        .unwrap_or_default();
                    println!(
                        "{}\t{}\t{:+.3}/yr{}",
                        a.subject_ref, a.scenario, a.slope, crossing
                    );
                }
            }
        }
        ReportCmd::Results { csv } => {
            let results = store.completed_results()?;
            if csv {
                write_results_csv(&results, stdout.lock())?;
            } else {
                for r in &results {
                    println!(
                        "{}\t{}\t{}\t{}",
                        r.subject_ref,
                        r.session_ref,
                        r.q,
                        r.computed_at.to_rfc3339()
                    );
                }
            }
        }
    }
    Ok(EXIT_OK)
}

fn serve(store: Store, args: ServeArgs) -> Result<i32> {
    let port = match env_var("AIQ_PORT") {
        Some(p) => p.parse().with_context(|| format!("AIQ_PORT={p}"))?,
        None => args.port,
    };
    let addr = SocketAddr::new(args.bind, port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        if !local.ip().is_loopback() {
            eprintln!("warning: the API has no authentication and is reachable on {local}");
        }
        println!("listening on http://{local}");
        io::stdout().flush()?;
        axum::serve(listener, api::router(store, args.assets))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(EXIT_OK)
}
