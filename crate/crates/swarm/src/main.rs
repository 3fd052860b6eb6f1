use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use swarm::atomic::write_atomic;
use swarm::check::{cmd_check, CheckConfig, Property};
use swarm::edgelist::write_edge_list;
use swarm::runner::{cmd_histogram, cmd_run, load_topology, Engine, Exit, OutputFormat, ProposerSel, RunConfig, TopologySource};
use swarm_core::async_sim::DelayKind;
use swarm_core::protocol::ConflictMode;
use swarm_core::topology::GraphKind;

#[derive(Parser)]
#[command(name = "swarm", version, about = "Leaderless swarm consensus simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Sync,
    Async,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    Ranked,
    Merry,
}

#[derive(Clone, Copy, ValueEnum)]
enum DelayArg {
    Constant,
    Uniform,
    PerEdgeFixed,
}

#[derive(clap::Args)]
struct TopoArgs {
    /// Graph kind: complete, path, ring, star, grid, random-regular, small-world.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<GraphKind>,
    #[arg(long)]
    n: Option<usize>,
    /// Diameter bound.
    #[arg(long)]
    d: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge-list file instead of a generator.
    #[arg(long, conflicts_with = "kind")]
    topology: Option<PathBuf>,
}

impl TopoArgs {
    fn source(&self) -> Result<Option<TopologySource>, String> {
        if let Some(p) = &self.topology {
            return Ok(Some(TopologySource::File(p.clone())));
        }
        match (self.kind, self.n, self.d) {
            (None, None, None) => Ok(None),
            (Some(kind), Some(n), Some(d)) => Ok(Some(TopologySource::Generate { kind, n, d, seed: self.seed })),
            _ => Err("--kind, --n and --d go together".into()),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario and write its artifacts.
    Run {
        #[command(flatten)]
        topo: TopoArgs,
        #[arg(long, value_enum, default_value = "sync")]
        engine: EngineArg,
        /// Largest message delay in seconds (async only).
        #[arg(long)]
        tau_max: Option<f64>,
        /// Delay model (async only).
        #[arg(long, value_enum)]
        delay: Option<DelayArg>,
        /// Simulated seconds (async only).
        #[arg(long)]
        duration: Option<f64>,
        /// Gnome id, `random` or `max-eccentricity`.
        #[arg(long, default_value = "0")]
        proposer: ProposerSel,
        #[arg(long, value_enum, default_value = "plain")]
        mode: ModeArg,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long, env = "SWARM_OUT", default_value = "swarm-out")]
        out: PathBuf,
        #[arg(long)]
        max_turns: Option<i64>,
        /// Skip the per-gnome trace.
        #[arg(long)]
        no_trace: bool,
    },
    /// Sweep an invariant over random scenarios.
    Check {
        /// One of: oracle, theorem1, lemma3, lemma4, sanity-fp, corollary,
        /// lemma6, lemma7, theorem2, const-delay, all.
        property: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        tau_max: f64,
        /// Where counterexamples are dumped.
        #[arg(long, env = "SWARM_OUT", default_value = "swarm-out")]
        out: PathBuf,
    },
    /// Rebuild the per-turn histogram from a trace file.
    Histogram {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated topology as an edge list.
    Generate {
        #[command(flatten)]
        topo: TopoArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<GraphKind, String> {
    GraphKind::parse(s).ok_or_else(|| format!("unknown graph kind `{s}`"))
}

fn code(e: Exit) -> ExitCode {
    ExitCode::from(e as u8)
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    code(Exit::Usage)
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { topo, engine, tau_max, delay, duration, proposer, mode, scenario, format, out, max_turns, no_trace } => {
            let mut cfg = RunConfig::new(out);
            cfg.topology = match topo.source() {
                Ok(t) => t,
                Err(e) => return usage(e),
            };
            cfg.seed = topo.seed;
            cfg.scenario = scenario;
            cfg.engine = match engine {
                EngineArg::Sync => Engine::Sync,
                EngineArg::Async => Engine::Async,
            };
            cfg.tau_max = tau_max;
            cfg.delay = delay.map(|d| match d {
                DelayArg::Constant => DelayKind::Constant,
                DelayArg::Uniform => DelayKind::Uniform,
                DelayArg::PerEdgeFixed => DelayKind::PerEdgeFixed,
            });
            cfg.duration = duration;
            cfg.proposer = proposer;
            cfg.mode = match mode {
                ModeArg::Plain => ConflictMode::Plain,
                ModeArg::Ranked => ConflictMode::Ranked,
                ModeArg::Merry => ConflictMode::Merry,
            };
            cfg.format = match format {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Json => OutputFormat::Json,
            };
            cfg.max_turns = max_turns;
            cfg.trace = !no_trace;
            match cmd_run(&cfg) {
                Ok(r) => {
                    println!("{}", r.line);
                    code(r.exit)
                }
                Err(e) => usage(e),
            }
        }
        Cmd::Check { property, n, trials, engine, seed, tau_max, out } => {
            let props: Vec<Property> = if property == "all" {
                Property::ALL.to_vec()
            } else {
                match Property::parse(&property) {
                    Some(p) => vec![p],
                    None => return usage(format!("unknown property `{property}`")),
                }
            };
            if let Some(e) = engine {
                let want = match e {
                    EngineArg::Sync => Engine::Sync,
                    EngineArg::Async => Engine::Async,
                };
                if let Some(p) = props.iter().find(|p| p.engine() != want) {
                    return usage(format!("property `{}` does not run on that engine", p.name()));
                }
            }
            if !(tau_max > 0.0 && tau_max.is_finite()) {
                return usage("--tau-max must be a positive number of seconds");
            }
            let cfg = CheckConfig { n, trials, seed, tau_max };
            let mut failed = false;
            for p in props {
                let report = match cmd_check(p, &cfg) {
                    Ok(r) => r,
                    Err(e) => return usage(e),
                };
                match report.failure {
                    None => println!("{}: PASS ({} trials)", p.name(), report.trials),
                    Some(cx) => {
                        failed = true;
                        let path = out.join(format!("counterexample-{}.json", p.name()));
                        let json = serde_json::to_string_pretty(&cx).expect("counterexample serializes");
                        if let Err(e) = write_atomic(&path, |w| writeln!(w, "{json}")) {
                            return usage(e);
                        }
                        println!("{}: FAIL at trial {}: {} (dumped to {})", p.name(), cx.trial, cx.detail, path.display());
                    }
                }
            }
            if failed {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Cmd::Histogram { trace, out } => {
            let out = out.unwrap_or_else(|| trace.with_file_name("histogram.csv"));
            match cmd_histogram(&trace, &out) {
                Ok(rows) => {
                    println!("{rows} turns written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => usage(e),
            }
        }
        Cmd::Generate { topo, out } => {
            let src = match topo.source() {
                Ok(Some(s @ TopologySource::Generate { .. })) => s,
                Ok(_) => return usage("generate needs --kind, --n and --d"),
                Err(e) => return usage(e),
            };
            let t = match load_topology(&src) {
                Ok(t) => t,
                Err(e) => return usage(e),
            };
            match write_atomic(&out, |w| write_edge_list(w, &t)) {
                Ok(()) => {
                    println!("{} gnomes, {} edges, diameter <= {}", t.len(), t.edge_count(), t.d_bound());
                    ExitCode::SUCCESS
                }
                Err(e) => usage(e),
            }
        }
    }
}
