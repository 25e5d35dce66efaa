//! `peercompose`: operate a peer-to-peer service composition network.
//!
//! Subcommands run a peer daemon, issue client requests against running
//! peers, inspect registries, plan without executing, and drive the
//! deterministic simulator and its latency benchmark.

mod commands;
mod exit;
mod specs;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "peercompose",
    version,
    about = "Peer-to-peer service network: run peers, compose services across them, simulate deterministically"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Peer daemon operations.
    Peer {
        #[command(subcommand)]
        cmd: PeerCmd,
    },
    /// Requests against a running peer.
    Client {
        #[command(subcommand)]
        cmd: ClientCmd,
    },
    /// Registry inspection.
    Registry {
        #[command(subcommand)]
        cmd: RegistryCmd,
    },
    /// Planning without execution.
    Plan {
        #[command(subcommand)]
        cmd: PlanCmd,
    },
    /// Deterministic in-memory simulation.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Latency measurement.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
}

#[derive(Subcommand)]
enum PeerCmd {
    /// Serve one peer until terminated: all routes plus scheduled
    /// re-advertisement. Prints a startup document with the bound
    /// address.
    Run {
        /// Peer configuration (JSON).
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClientCmd {
    /// Send a composite request and print the aggregated response.
    Invoke {
        /// Target peer endpoint (host:port).
        #[arg(long)]
        to: String,
        /// Requested output as name:type; repeatable.
        #[arg(long = "goal", required = true)]
        goals: Vec<String>,
        /// Provided input as name:type=value; repeatable.
        #[arg(long = "input")]
        inputs: Vec<String>,
        /// Request id; generated when omitted.
        #[arg(long)]
        request_id: Option<String>,
        /// Request timeout in milliseconds.
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
}

#[derive(Subcommand)]
enum RegistryCmd {
    /// Fetch a peer's registry as a JSON document.
    Dump {
        /// Target peer endpoint (host:port).
        #[arg(long)]
        to: String,
        /// Request timeout in milliseconds.
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
}

#[derive(Subcommand)]
enum PlanCmd {
    /// Plan against a dumped registry snapshot and print the selected
    /// checklist without executing it.
    Explain {
        /// Registry dump file (output of `registry dump`).
        #[arg(long)]
        snapshot: PathBuf,
        /// Requested output as name:type; repeatable.
        #[arg(long = "goal", required = true)]
        goals: Vec<String>,
        /// Available input as name:type (value optional, ignored);
        /// repeatable.
        #[arg(long = "input")]
        inputs: Vec<String>,
        /// Longest checklist considered.
        #[arg(long, default_value_t = peercompose::planner::DEFAULT_MAX_PLAN_LEN)]
        max_plan_len: usize,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Run a scenario file on the in-memory network and print its
    /// transcript. Exit 0 iff every embedded assertion holds.
    Run {
        /// Scenario file (JSON).
        scenario: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run a scenario's setup once, then repeat its first composite
    /// request and print one latency row per run plus a summary.
    Run {
        /// Number of measured runs.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        runs: u64,
        /// Scenario file (JSON).
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Cmd::Peer {
            cmd: PeerCmd::Run { config },
        } => commands::peer_run(&config),
        Cmd::Client {
            cmd:
                ClientCmd::Invoke {
                    to,
                    goals,
                    inputs,
                    request_id,
                    timeout_ms,
                },
        } => commands::client_invoke(&to, &goals, &inputs, request_id, timeout_ms),
        Cmd::Registry {
            cmd: RegistryCmd::Dump { to, timeout_ms },
        } => commands::registry_dump(&to, timeout_ms),
        Cmd::Plan {
            cmd:
                PlanCmd::Explain {
                    snapshot,
                    goals,
                    inputs,
                    max_plan_len,
                },
        } => commands::plan_explain(&snapshot, &goals, &inputs, max_plan_len),
        Cmd::Sim {
            cmd: SimCmd::Run { scenario },
        } => commands::sim_run(&scenario),
        Cmd::Bench {
            cmd: BenchCmd::Run { runs, scenario },
        } => commands::bench_run(runs, &scenario),
    };
    std::process::exit(code as i32);
}
