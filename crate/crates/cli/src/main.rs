//! `intent-assure`: run intent scenarios through the closed loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use intent_assurance::assurance::LoopPhase;
use intent_assurance::planner::PlannerMode;
use intent_assurance::report::{emit_report, ReportFormat};
use intent_assurance::scenario::{execute, RunOptions, Scenario};
use intent_assurance::sweep::{run_seed_sweep, run_seed_sweep_sequential, SeedOutcome};

#[derive(Parser)]
#[command(
    name = "intent-assure",
    version,
    about = "Fulfil and assure a network intent on a simulated testbed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its report.
    Run {
        /// Scenario file; the bundled use case when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// rules, replay or llm (llm reads INTENT_LLM_ENDPOINT, INTENT_LLM_MODEL,
        /// INTENT_LLM_API_KEY and INTENT_LLM_TIMEOUT_SECS).
        #[arg(long)]
        planner: Option<PlannerMode>,
        /// Transcript to replay in replay mode.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Save the exchanges of an llm run to this file.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Write the report here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run a scenario under seeds `start..start+seeds` and summarise.
    Sweep {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Override the scenario horizon.
        #[arg(long)]
        hours: Option<u64>,
        #[arg(long)]
        planner: Option<PlannerMode>,
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Run seeds one after another on the calling thread.
        #[arg(long)]
        sequential: bool,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
    /// Print the bundled scenario as JSON, as a starting point for new ones.
    Scenario,
}

fn load(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Scenario::netflow_west()),
    }
}

fn write_out(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sweep_text(outcomes: &[SeedOutcome]) -> String {
    let mut out = String::from("seed | final phase | policies | t_down (s) | availability | intent_health\n");
    for o in outcomes {
        out.push_str(&format!(
            "{} | {} | {}+{} | {} | {} | {}{}\n",
            o.seed,
            o.final_phase,
            o.fulfillment_policies,
            o.assurance_policies,
            o.t_down,
            o.availability,
            o.intent_health,
            o.failure.as_ref().map(|f| format!(" ({f})")).unwrap_or_default()
        ));
    }
    let assured = outcomes.iter().filter(|o| o.final_phase == LoopPhase::Assured).count();
    let legal = outcomes.iter().filter(|o| o.transitions_legal).count();
    let healthy = outcomes.iter().filter(|o| o.intent_health == 1).count();
    let n = outcomes.len();
    out.push_str(&format!(
        "\n{n} seeds: {assured} assured, {healthy} with intent_health 1, {legal} with legal transitions\n"
    ));
    out
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            planner,
            transcript,
            record,
            format,
            output,
        } => {
            let s = load(scenario.as_deref())?;
            let opts = RunOptions {
                seed,
                planner,
                transcript,
                record,
            };
            let result = execute(&s, &opts)?;
            write_out(&emit_report(&result, format), output.as_deref())?;
            Ok(if result.final_phase == LoopPhase::Failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Sweep {
            scenario,
            seeds,
            start,
            hours,
            planner,
            transcript,
            sequential,
            format,
        } => {
            let mut s = load(scenario.as_deref())?;
            if let Some(h) = hours {
                s.run.horizon_hours = h;
                s.validate()?;
            }
            let opts = RunOptions {
                planner,
                transcript,
                ..RunOptions::default()
            };
            let list: Vec<u64> = (start..start + seeds).collect();
            let outcomes = if sequential {
                run_seed_sweep_sequential(&s, &opts, &list)?
            } else {
                run_seed_sweep(&s, &opts, &list)?
            };
            let text = match format {
                ReportFormat::Text => sweep_text(&outcomes),
                ReportFormat::Json => serde_json::to_string_pretty(&outcomes)? + "\n",
            };
            write_out(&text, None)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenario => {
            let text = serde_json::to_string_pretty(&Scenario::netflow_west())?;
            println!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
