//! Command-line interface.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gazecoach_core::config::EngineConfig;
use gazecoach_core::exec::Execution;
use gazecoach_core::registration::{register_sweep, AudienceLayout};
use gazecoach_core::session::{
    metrics_csv, simulate, verify_replay, ControlCommand, Phase, SessionController, SessionLog,
};
use gazecoach_core::simulator::{bench_scenario, generate_sweep, scenario_identifier, Method, ScenarioSpec};
use tokio::net::TcpListener;

use crate::source::{feed, FeedOptions, RecordedSource};
use crate::worker::{self, Request, Stamping, WorkerSummary};

#[derive(Debug, Parser)]
#[command(name = "gazecoach", version, about = "Real-time eye-contact assistance for presenters")]
pub struct Cli {
    /// Engine configuration (TOML); defaults apply to anything not set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an audience layout from the frames of a registration sweep log.
    Register {
        sweep_log: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a session from a recorded log, a simulated scenario, or a live
    /// frame stream.
    Run(RunArgs),
    /// Render a scenario and run it through the engine.
    Simulate {
        /// Reference scenario name or path to a scenario TOML file.
        scenario: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Ground-truth JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Registration sweep log.
        #[arg(long)]
        sweep_out: Option<PathBuf>,
        /// Audience layout JSON.
        #[arg(long)]
        layout_out: Option<PathBuf>,
    },
    /// Per-window metrics of a session log as CSV.
    Analyze {
        log: PathBuf,
        /// Defaults to standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also replay the log and check its derived records match.
        #[arg(long)]
        verify: bool,
    },
    /// Compare identification methods on a scenario.
    BenchIdentify {
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "anchor,baseline")]
        methods: Vec<Method>,
        /// Report path; the CSV is written here and the markdown table next
        /// to it with an `.md` extension.
        #[arg(short, long)]
        output: PathBuf,
        /// Seeds to run; defaults to the scenario's own seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Run seeds one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceKind {
    Log,
    Sim,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StampKind {
    /// Session time is arrival time at the service.
    Arrival,
    /// Trust the `t` carried by each record.
    Source,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Audience layout JSON from `register` or `simulate --layout-out`.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub source: SourceKind,
    /// Session log to replay (`--source log`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Scenario name or file (`--source sim`).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Address accepting frame streams (`--source live`).
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long, value_enum, default_value = "arrival")]
    pub stamp: StampKind,
    /// Present immediately and stop when the source ends, with no console.
    #[arg(long)]
    pub headless: bool,
    /// Console API address, e.g. 127.0.0.1:8080.
    #[arg(long)]
    pub api: Option<String>,
    /// Pace recorded frames by their timestamps.
    #[arg(long)]
    pub realtime: bool,
    /// Session log to write; defaults to session-<unix time>.ndjson.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn main(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => EngineConfig::default(),
    };
    match cli.command {
        Command::Register { sweep_log, output } => register(&cfg, &sweep_log, &output),
        Command::Run(args) => run(cfg, cli.config.is_some(), args),
        Command::Simulate {
            scenario,
            output,
            seed,
            truth,
            sweep_out,
            layout_out,
        } => {
            let mut spec = ScenarioSpec::resolve(&scenario)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let sim = simulate(&spec, &cfg)?;
            sim.log.save(&output)?;
            if let Some(p) = truth {
                write_json(&p, &sim.truth)?;
            }
            if let Some(p) = sweep_out {
                sim.sweep_log.save(&p)?;
            }
            if let Some(p) = layout_out {
                write_json(&p, &sim.layout)?;
            }
            let closed = sim.log.metrics().count();
            let advice = sim.log.advice().count();
            println!(
                "{}: {} frames, {} closed windows, {} advice events -> {}",
                spec.name,
                sim.log.frames(Phase::Presenting).count(),
                closed,
                advice,
                output.display()
            );
            Ok(())
        }
        Command::Analyze { log, output, verify } => {
            let log = SessionLog::load(&log).with_context(|| format!("reading {}", log.display()))?;
            let csv = metrics_csv(&log);
            match output {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            if verify {
                let check = verify_replay(&log)?;
                if !check.is_identical() {
                    bail!(
                        "replay differs: {} recorded vs {} regenerated derived records, first mismatch at {:?}",
                        check.original,
                        check.regenerated,
                        check.first_mismatch
                    );
                }
                eprintln!("replay identical: {} derived records", check.original);
            }
            Ok(())
        }
        Command::BenchIdentify {
            scenario,
            methods,
            output,
            seeds,
            sequential,
        } => {
            let spec = ScenarioSpec::resolve(&scenario)?;
            let seeds = if seeds.is_empty() { vec![spec.seed] } else { seeds };
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let report = bench_scenario(&spec, &seeds, &methods, &cfg, exec)?;
            std::fs::write(&output, report.to_csv()).with_context(|| format!("writing {}", output.display()))?;
            let md = report.to_markdown();
            std::fs::write(output.with_extension("md"), &md)?;
            print!("{md}");
            Ok(())
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn register(cfg: &EngineConfig, sweep_log: &Path, output: &Path) -> Result<()> {
    let log = SessionLog::load(sweep_log).with_context(|| format!("reading {}", sweep_log.display()))?;
    let sweep: Vec<_> = log.frames(Phase::Registering).collect();
    let layout = if sweep.is_empty() {
        register_sweep(log.all_frames(), &cfg.registration)?
    } else {
        register_sweep(sweep, &cfg.registration)?
    };
    write_json(output, &layout)?;
    println!("{} audience members -> {}", layout.n_members(), output.display());
    Ok(())
}

fn load_layout(path: &Path) -> Result<AudienceLayout> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing layout {}", path.display()))
}

enum Source {
    Recorded(RecordedSource),
    Live(String),
}

fn run(mut cfg: EngineConfig, explicit_config: bool, args: RunArgs) -> Result<()> {
    if !args.headless && args.api.is_none() {
        bail!("an interactive session needs --api for the console; use --headless to run without one");
    }
    let mut layout = args.layout.as_deref().map(load_layout).transpose()?;
    let source = match args.source {
        SourceKind::Log => {
            let path = args.input.as_ref().context("--source log needs --input <log>")?;
            let log = SessionLog::load(path).with_context(|| format!("reading {}", path.display()))?;
            if !explicit_config {
                // replay under the recorded configuration
                if let Some(h) = log.header() {
                    cfg = h.config.clone();
                }
            }
            if layout.is_none() {
                layout = log.layout().cloned();
            }
            Source::Recorded(RecordedSource::from_log(&log, format!("log:{}", path.display())))
        }
        SourceKind::Sim => {
            let name = args.scenario.as_deref().context("--source sim needs --scenario <name|file>")?;
            let spec = ScenarioSpec::resolve(name)?;
            cfg.identifier = scenario_identifier(&spec);
            if layout.is_none() && args.headless {
                layout = Some(register_sweep(&generate_sweep(&spec)?.frames, &cfg.registration)?);
            }
            Source::Recorded(RecordedSource::from_scenario(&spec)?)
        }
        SourceKind::Live => Source::Live(args.listen.clone().context("--source live needs --listen <addr>")?),
    };
    if args.headless && layout.is_none() {
        bail!("a headless session needs an audience layout (--layout)");
    }

    let mut controller = match layout {
        Some(l) => SessionController::with_layout(cfg, l),
        None => SessionController::new(cfg),
    };
    let label = match &source {
        Source::Recorded(r) => {
            if args.headless {
                controller.advance_clock(r.start_t);
            }
            r.label.clone()
        }
        Source::Live(addr) => format!("live:{addr}"),
    };
    let stamping = match (args.stamp, &source) {
        (StampKind::Arrival, Source::Live(_)) => Stamping::Arrival(Instant::now()),
        _ => Stamping::Source,
    };
    let output = args.output.clone().unwrap_or_else(|| {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        PathBuf::from(format!("session-{secs}.ndjson"))
    });
    let file = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
    let (client, worker) = worker::spawn(controller, Box::new(BufWriter::new(file)), &label, stamping)?;

    let rt = tokio::runtime::Runtime::new()?;
    let summary = rt.block_on(async {
        let mut tasks = Vec::new();
        if let Some(addr) = &args.api {
            let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
            let local: SocketAddr = listener.local_addr()?;
            eprintln!("console API listening on http://{local}");
            let app = crate::api::router(client.clone());
            tasks.push(tokio::spawn(async move {
                let _ = axum::serve(listener, app).await;
            }));
        }
        let feeder = match source {
            Source::Recorded(rec) => {
                let opts = FeedOptions {
                    headless: args.headless,
                    realtime: args.realtime,
                };
                let c = client.clone();
                Some(tokio::spawn(async move { feed(rec, c, opts).await }))
            }
            Source::Live(addr) => {
                if args.headless {
                    if let Err(r) = client.control(ControlCommand::StartPresentation).await? {
                        bail!("cannot start presenting: {}", r.error);
                    }
                }
                let listener = TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
                eprintln!("frame ingestion listening on {}", listener.local_addr()?);
                tasks.push(tokio::spawn(crate::live::serve_ingest(listener, client.clone(), args.headless)));
                let c = client.clone();
                tasks.push(tokio::spawn(async move {
                    if tokio::signal::ctrl_c().await.is_ok() {
                        let _ = c.send(Request::EndOfSource { end_t: None });
                    }
                }));
                None
            }
        };
        drop(client);
        let summary: WorkerSummary = tokio::task::spawn_blocking(move || worker.join())
            .await?
            .map_err(|_| anyhow::anyhow!("session worker panicked"))??;
        if let Some(f) = feeder {
            f.await??;
        }
        // let subscribers receive the final messages
        tokio::time::sleep(Duration::from_millis(100)).await;
        for t in tasks {
            t.abort();
        }
        anyhow::Ok(summary)
    })?;

    let c = summary.counters;
    println!(
        "session {}: {} frames, {} dropped, {} advice events, {} log records -> {}",
        summary.state.phase,
        c.frames,
        c.dropped,
        c.advice_events,
        summary.records,
        output.display()
    );
    if !summary.rejected.is_empty() {
        let first = &summary.rejected[0];
        let msg = format!(
            "{} frames rejected; first: frame {}: {}",
            summary.rejected.len(),
            first.frame_id,
            first.error
        );
        if args.source == SourceKind::Live {
            eprintln!("{msg}");
        } else {
            bail!(msg);
        }
    }
    std::io::stdout().flush()?;
    Ok(())
}
