use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use navstack::orchestrator::{serve, RunConfig, Runner, ServeOptions};
use navstack::sim::Scenario;

#[derive(Parser)]
#[command(name = "navstack", about = "Deterministic 2D navigation stack on a simulated robot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Writes the tick log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Serves snapshots and accepts commands on this websocket port.
        #[arg(long, conflicts_with = "headless")]
        serve: Option<u16>,
        /// Simulated seconds per wall-clock second when serving; 0 = unthrottled.
        #[arg(long, default_value_t = 1.0, requires = "serve")]
        speed: f64,
        #[arg(long)]
        dump_maps: Option<PathBuf>,
        #[arg(long)]
        dump_clouds: Option<PathBuf>,
        /// Runs without the state-stream service (the default unless --serve is given).
        #[arg(long)]
        headless: bool,
        /// Localizes with the simulator's true pose instead of odometry.
        #[arg(long)]
        ground_truth: bool,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run {
        scenario,
        seed,
        log,
        serve: port,
        speed,
        dump_maps,
        dump_clouds,
        headless: _,
        ground_truth,
    } = Cli::parse().command;

    let mut sc = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
    sc.ground_truth |= ground_truth;
    let cfg = RunConfig {
        dump_maps,
        dump_clouds,
        stop_on_goal: port.is_none(),
        ..RunConfig::default()
    };
    let runner = Runner::new(&sc, cfg, seed)?;

    let started = Instant::now();
    let run_log = match port {
        Some(port) => {
            let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding port {port}"))?;
            let opts = ServeOptions {
                speed,
                ..ServeOptions::default()
            };
            let stop = opts.stop.clone();
            ctrlc_stop(stop.clone());
            eprintln!("serving on ws://127.0.0.1:{port} (ctrl-c to stop)");
            let out = serve(runner, listener, opts)?;
            stop.store(true, Ordering::Relaxed);
            out
        }
        None => runner.run_to_end()?,
    };

    if let Some(path) = log {
        std::fs::write(&path, run_log.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    let last = run_log.final_record();
    println!(
        "{}: {:?} after {:.3} s simulated ({} ticks, {:.2} s wall)",
        sc.name,
        run_log.outcome,
        last.map_or(0.0, |r| r.t),
        run_log.records.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Reads stdin until it closes, then requests shutdown. Ctrl-C kills the
/// process outright, which also ends the session; closing stdin (ctrl-d)
/// lets the log be written.
fn ctrlc_stop(stop: std::sync::Arc<std::sync::atomic::AtomicBool>) {
    std::thread::spawn(move || {
        let mut sink = String::new();
        while std::io::stdin().read_line(&mut sink).is_ok_and(|n| n > 0) {
            sink.clear();
        }
        stop.store(true, Ordering::Relaxed);
    });
}
