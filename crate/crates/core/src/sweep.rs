//! Seed sweeps: the same scenario under many seeds.
//!
//! Each seed gets its own testbed and loop, so runs share nothing and the
//! parallel and sequential sweeps return identical results in seed order.

use serde::{Deserialize, Serialize};

use crate::assurance::{LoopPhase, ScenarioResult};
use crate::planner::PlannerMode;
use crate::scenario::{execute, RunOptions, Scenario, ScenarioError};

/// What a sweep keeps from each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_phase: LoopPhase,
    pub transitions_legal: bool,
    pub fulfillment_policies: usize,
    pub assurance_policies: usize,
    pub t_down: u64,
    pub availability: f64,
    pub intent_health: u8,
    pub failure: Option<String>,
}

impl SeedOutcome {
    pub fn from_result(r: &ScenarioResult) -> Self {
        Self {
            seed: r.seed,
            final_phase: r.final_phase,
            transitions_legal: r.transitions_legal(),
            fulfillment_policies: r.fulfillment.len(),
            assurance_policies: r.assurance_count(),
            t_down: r.kpis.t_down,
            availability: r.availability,
            intent_health: r.intent_health,
            failure: r.failure.clone(),
        }
    }
}

fn run_one(scenario: &Scenario, opts: &RunOptions, seed: u64) -> Result<SeedOutcome, ScenarioError> {
    let opts = RunOptions {
        seed: Some(seed),
        ..opts.clone()
    };
    execute(scenario, &opts).map(|r| SeedOutcome::from_result(&r))
}

fn check_mode(scenario: &Scenario, opts: &RunOptions) -> Result<(), ScenarioError> {
    if opts.planner.unwrap_or(scenario.run.planner) == PlannerMode::Llm {
        return Err(ScenarioError::Invalid(
            "seed sweeps run offline; use rules or replay".into(),
        ));
    }
    Ok(())
}

pub fn run_seed_sweep_sequential(
    scenario: &Scenario,
    opts: &RunOptions,
    seeds: &[u64],
) -> Result<Vec<SeedOutcome>, ScenarioError> {
    check_mode(scenario, opts)?;
    seeds.iter().map(|&s| run_one(scenario, opts, s)).collect()
}

/// Runs every seed, on the rayon pool when the `parallel` feature is on.
pub fn run_seed_sweep(
    scenario: &Scenario,
    opts: &RunOptions,
    seeds: &[u64],
) -> Result<Vec<SeedOutcome>, ScenarioError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        check_mode(scenario, opts)?;
        seeds.par_iter().map(|&s| run_one(scenario, opts, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    run_seed_sweep_sequential(scenario, opts, seeds)
}
