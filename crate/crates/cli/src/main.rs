use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gesture_ucb::harness::{
    aggregate_reports, calibrate_severity, read_summary, recompute_reports, replay_emissions,
    replay_session, run_protocol, user_seed, write_outputs, RoundAggregate, World,
};
use gesture_ucb::metrics::MeanStats;
use gesture_ucb::{
    replay_open, BanditModel, ExperimentConfig, PostProcessConfig, SeedRange, N_GESTURES,
};
use gesture_ucb_gateway::GatewayConfig;
use tracing::info;

#[derive(Parser)]
#[command(name = "gesture-ucb", version, about = "Bandit personalization experiments")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated protocol and write results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory. Defaults to `out/<config name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the user seed range, e.g. `0..5`.
        #[arg(long)]
        seeds: Option<SeedRange>,
    },
    /// Print the severity that puts each user at the target frame accuracy.
    CalibrateSeverity {
        #[arg(long)]
        target_acc: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<SeedRange>,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 3000)]
        frames: usize,
    },
    /// Re-run a recorded frame log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Model to start from for logs without a session block.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Bandit and post-processing settings for logs without a session block.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the replayed event log here as JSON lines.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Recompute round reports from an output directory's event logs.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Start the live WebSocket gateway.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seeds } => run(&config, out, seeds),
        Command::CalibrateSeverity {
            target_acc,
            config,
            seeds,
            tolerance,
            frames,
        } => calibrate(target_acc, config.as_deref(), seeds, tolerance, frames),
        Command::Replay {
            log,
            snapshot,
            config,
            events,
        } => replay(&log, snapshot.as_deref(), config.as_deref(), events.as_deref()),
        Command::Report { input } => report(&input),
        Command::Serve {
            config,
            addr,
            data_dir,
        } => serve(config.as_deref(), addr, data_dir),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(config: &Path, out: Option<PathBuf>, seeds: Option<SeedRange>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
    }
    let out = out.unwrap_or_else(|| Path::new("out").join(&cfg.name));
    info!(users = cfg.seeds.len(), out = %out.display(), "running {}", cfg.name);
    let result = run_protocol(&cfg)?;
    write_outputs(&result, &out).with_context(|| format!("writing {}", out.display()))?;
    for user in &result.users {
        for w in &user.warnings {
            eprintln!("warning: user {}: {w}", user.user);
        }
    }
    print!("{}", aggregate_table(&result.summary().rounds));
    println!("wrote {}", out.display());
    Ok(())
}

fn stats(s: &Option<MeanStats>) -> String {
    match s {
        Some(s) => format!("{:+.4} ± {:.4}", s.mean, s.se),
        None => "n/a".into(),
    }
}

fn aggregate_table(rounds: &[RoundAggregate]) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>5} {:>20} {:>8} {:>20} {:>10}\n",
        "round", "learning", "users", "mean delta", "delta>0", "fnr", "completed"
    );
    for r in rounds {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>5} {:>20} {:>8.2} {:>20} {:>10.2}",
            r.round,
            r.learning,
            r.users,
            stats(&r.mean_delta),
            r.positive_delta_fraction,
            stats(&r.fnr),
            r.completion_rate
        );
    }
    s
}

fn calibrate(
    target_acc: f64,
    config: Option<&Path>,
    seeds: Option<SeedRange>,
    tolerance: f64,
    frames: usize,
) -> Result<()> {
    if !(0.0..=1.0).contains(&target_acc) {
        bail!("--target-acc must lie in [0, 1]");
    }
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
    }
    let world = World::new(&cfg)?;
    println!("user,severity,accuracy,within_tolerance");
    let mut missed = 0;
    for user in cfg.seeds.iter() {
        let c = calibrate_severity(&world, user_seed(&cfg, user), target_acc, tolerance, frames)?;
        if !c.within_tolerance {
            missed += 1;
        }
        println!("{user},{:.6},{:.4},{}", c.severity, c.accuracy, c.within_tolerance);
    }
    if missed > 0 {
        eprintln!("warning: {missed} user(s) outside ±{tolerance} of {target_acc}");
    }
    Ok(())
}

fn replay(
    log: &Path,
    snapshot: Option<&Path>,
    config: Option<&Path>,
    events: Option<&Path>,
) -> Result<()> {
    let cfg = config.map(load_config).transpose()?;
    let reader = replay_open(
        log,
        cfg.as_ref().map(|c| c.dim),
        cfg.as_ref().map(|_| N_GESTURES),
    )?;
    let header = reader.header().clone();
    if header.session.is_some() {
        let out = replay_session(reader)?;
        let emissions = out.log.iter().filter(|e| e.emitted.is_some()).count();
        println!("frames: {}", out.frames);
        println!("emissions: {emissions}");
        println!("position: {}/{}", out.final_state.position, out.final_state.length);
        println!("completed: {}", out.final_state.completed);
        println!("model step: {}", out.model.step());
        if let Some(path) = events {
            let mut text = String::new();
            for e in &out.log {
                text.push_str(&serde_json::to_string(e)?);
                text.push('\n');
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        return Ok(());
    }
    if events.is_some() {
        bail!("--events needs a log with a session block");
    }
    let model = match (snapshot, &cfg) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            BanditModel::from_json(&text)?
        }
        (None, Some(c)) => c.fresh_model()?,
        (None, None) => {
            let window = PostProcessConfig::for_fps(header.frame_rate).window_frames;
            BanditModel::new(header.d, header.n, 1.0, window)?
        }
    };
    let post = match &cfg {
        Some(c) => c.postprocess_config(),
        None => PostProcessConfig::for_fps(header.frame_rate),
    };
    println!("frame,class");
    for (t, class) in replay_emissions(reader, model, post)? {
        println!("{t},{class}");
    }
    Ok(())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn same_stats(a: &Option<MeanStats>, b: &Option<MeanStats>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => a.n == b.n && close(a.mean, b.mean) && close(a.se, b.se),
        _ => false,
    }
}

fn report(dir: &Path) -> Result<()> {
    let summary = read_summary(dir)?;
    let reports = recompute_reports(dir)?;
    let learning = |round: &str| {
        summary
            .rounds
            .iter()
            .find(|r| r.round == round)
            .map(|r| r.learning)
    };
    let mut items = Vec::with_capacity(reports.len());
    for r in &reports {
        let Some(l) = learning(&r.round) else {
            bail!("round {} is missing from summary.json", r.round);
        };
        items.push((r, l));
    }
    let recomputed = aggregate_reports(items);
    print!("{}", aggregate_table(&recomputed));
    let mut mismatches = Vec::new();
    if recomputed.len() != summary.rounds.len() {
        mismatches.push(format!(
            "{} rounds recomputed, summary has {}",
            recomputed.len(),
            summary.rounds.len()
        ));
    }
    for (a, b) in recomputed.iter().zip(&summary.rounds) {
        let ok = a.round == b.round
            && a.users == b.users
            && same_stats(&a.mean_delta, &b.mean_delta)
            && same_stats(&a.fnr, &b.fnr)
            && close(a.positive_delta_fraction, b.positive_delta_fraction)
            && close(a.completion_rate, b.completion_rate);
        if !ok {
            mismatches.push(format!("round {} differs from summary.json", a.round));
        }
    }
    if !mismatches.is_empty() {
        bail!("event logs disagree with the summary: {}", mismatches.join("; "));
    }
    println!("consistent with summary.json ({} reports)", reports.len());
    Ok(())
}

fn serve(config: Option<&Path>, addr: SocketAddr, data_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => GatewayConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => GatewayConfig::default(),
    };
    if let Some(dir) = data_dir {
        cfg.data_dir = dir;
    }
    let ctx = gesture_ucb_gateway::context(cfg)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        use std::io::Write;
        std::io::stdout().flush()?;
        gesture_ucb_gateway::serve(listener, ctx).await?;
        Ok(())
    })
}
