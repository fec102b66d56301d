//! Drives recipe → packing → layout with attempt ledgers until a layout
//! is found or every candidate has been tried.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{derive_bounds, ProblemInstance};
use crate::fdsolver::VarOrder;
use crate::stage1::{
    build_stage1_model, record_attempt, solve_stage1, Stage1Config, Stage1Ledger, Stage1Outcome,
    Stage1Solution, DEFAULT_ASSEMBLER_PENALTY,
};
use crate::stage2::{build_stage2_model, record_packing, solve_stage2, PackingLayout, Stage2Ledger, Stage2Outcome};
use crate::stage3::{build_stage3_model, solve_stage3, LayoutSolution, Penalties, Stage3Config, Stage3Outcome};
use crate::validator::{validate_structure, Blueprint};

/// Per-packing budget for the layout search. Unbounded searches can spend
/// hours proving one packing infeasible.
pub const DEFAULT_STAGE3_NODE_LIMIT: u64 = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub max_stage1_attempts: u32,
    pub max_stage2_attempts_per_stage1: u32,
    /// Search-node budgets per solve; 0 = unlimited. Node budgets keep runs
    /// reproducible, unlike the wall-clock limits below.
    pub stage1_node_limit: u64,
    pub stage2_node_limit: u64,
    pub stage3_node_limit: u64,
    /// Seconds per solve; 0 = unlimited.
    pub stage1_time_limit: f64,
    pub stage2_time_limit: f64,
    pub stage3_time_limit: f64,
    pub penalties: Penalties,
    pub assembler_penalty: i64,
    pub stage3_var_order: VarOrder,
    /// Layout solves run on this many threads; 1 keeps everything sequential.
    pub workers: usize,
    #[serde(skip)]
    pub dump_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_stage1_attempts: 64,
            max_stage2_attempts_per_stage1: 256,
            stage1_node_limit: 0,
            stage2_node_limit: 0,
            stage3_node_limit: DEFAULT_STAGE3_NODE_LIMIT,
            stage1_time_limit: 0.0,
            stage2_time_limit: 0.0,
            stage3_time_limit: 0.0,
            penalties: Penalties::default(),
            assembler_penalty: DEFAULT_ASSEMBLER_PENALTY,
            stage3_var_order: VarOrder::Input,
            workers: 1,
            dump_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Blueprint { blueprint: Blueprint },
    Infeasible,
    LimitReached,
}

/// How one packing attempt ended in the layout stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutResult {
    Accepted,
    Infeasible,
    Limit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingAttempt {
    pub anchors: Vec<crate::domain::GridCoord>,
    pub result: LayoutResult,
    pub nodes: u64,
    pub objective: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Attempt {
    pub solution: Stage1Solution,
    pub packings: Vec<PackingAttempt>,
    /// The packing stage ran out of candidates (as opposed to hitting a cap).
    pub packings_exhausted: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub stage1: f64,
    pub stage2: f64,
    pub stage3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub stage1_attempts: u32,
    /// Packings tried per stage-1 attempt, in attempt order.
    pub stage2_attempts: Vec<u32>,
    pub attempts: Vec<Stage1Attempt>,
    /// Objective of the accepted stage-1 solution and layout.
    pub stage1_objective: Option<i64>,
    pub layout_objective: Option<i64>,
    /// Some solve stopped on a budget, so exhaustion was not proven.
    pub limit_hit: bool,
    /// Wall-clock seconds; left out of serialized reports so that dumps
    /// are reproducible.
    #[serde(skip)]
    pub times: StageTimes,
}

impl RunReport {
    pub fn blueprint(&self) -> Option<&Blueprint> {
        match &self.outcome {
            RunOutcome::Blueprint { blueprint } => Some(blueprint),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("layout assigns stage-1 slot {0}, which is inactive")]
    InactiveSlot(usize),
    #[error("layout places {placed} assemblers, stage 1 has {active}")]
    CountMismatch { placed: usize, active: usize },
}

/// Merges stage-1 recipes with a solved layout.
pub fn assemble_blueprint(
    stage1: &Stage1Solution,
    layout: &LayoutSolution,
    inst: &ProblemInstance,
) -> Result<Blueprint, AssembleError> {
    let active = stage1.active().count();
    if layout.assignments.len() != active {
        return Err(AssembleError::CountMismatch {
            placed: layout.assignments.len(),
            active,
        });
    }
    if let Some(&a) = layout
        .assignments
        .keys()
        .find(|&&a| stage1.assembler_recipes.get(a).copied().unwrap_or(0) == 0)
    {
        return Err(AssembleError::InactiveSlot(a));
    }
    let predicted = stage1.production_of(inst.out_item) + inst.supply_of(inst.out_item);
    Ok(Blueprint::from_parts(
        &layout.conveyors,
        &layout.inserters,
        &layout.placements(stage1),
        predicted,
    ))
}

struct Dumper {
    dir: Option<PathBuf>,
}

impl Dumper {
    fn write<T: Serialize>(&self, name: &str, value: &T) {
        let Some(dir) = &self.dir else { return };
        let text = serde_json::to_string_pretty(value).expect("serializable artifact");
        // Dumps are a debugging aid; a failed write must not abort the run.
        let _ = fs::write(dir.join(name), text + "\n");
    }
}

fn stage3_config(cfg: &RunConfig) -> Stage3Config {
    Stage3Config {
        penalties: cfg.penalties,
        node_limit: cfg.stage3_node_limit,
        time_limit: cfg.stage3_time_limit,
        var_order: cfg.stage3_var_order,
    }
}

fn run_layout(
    inst: &ProblemInstance,
    s1: &Stage1Solution,
    packing: &PackingLayout,
    cfg: &RunConfig,
) -> (Stage3Outcome, u64, f64) {
    let t0 = Instant::now();
    match build_stage3_model(inst, s1, packing, &stage3_config(cfg)) {
        Ok(mut m) => {
            let (o, stats) = solve_stage3(&mut m);
            (o, stats.nodes, t0.elapsed().as_secs_f64())
        }
        Err(_) => (Stage3Outcome::Infeasible, 0, 0.0),
    }
}

/// Progress notifications emitted while a run is under way.
#[derive(Clone, Debug, PartialEq)]
pub enum RunEvent<'a> {
    Stage1 { attempt: u32, solution: &'a Stage1Solution },
    Layout { attempt: u32, packing: u32, result: LayoutResult, nodes: u64, seconds: f64 },
}

/// Runs the full pipeline. The instance is assumed valid.
pub fn optimize(inst: &ProblemInstance, cfg: &RunConfig) -> RunReport {
    optimize_with(inst, cfg, &mut |_| {})
}

pub fn optimize_with(inst: &ProblemInstance, cfg: &RunConfig, on_event: &mut dyn FnMut(&RunEvent)) -> RunReport {
    let dump = Dumper {
        dir: cfg.dump_dir.clone(),
    };
    if let Some(dir) = &dump.dir {
        let _ = fs::create_dir_all(dir);
    }
    dump.write("instance.json", inst);
    dump.write("config.json", cfg);

    let mut report = RunReport {
        outcome: RunOutcome::Infeasible,
        stage1_attempts: 0,
        stage2_attempts: Vec::new(),
        attempts: Vec::new(),
        stage1_objective: None,
        layout_objective: None,
        limit_hit: false,
        times: StageTimes::default(),
    };
    let bounds = derive_bounds(inst).ok();
    let s1_cfg = Stage1Config {
        assembler_penalty: cfg.assembler_penalty,
        node_limit: cfg.stage1_node_limit,
        time_limit: cfg.stage1_time_limit,
    };
    let mut ledger1 = Stage1Ledger::default();
    let reserved = inst.reserved_grid();
    let workers = cfg.workers.max(1);

    let outcome = 'outer: loop {
        if report.stage1_attempts >= cfg.max_stage1_attempts {
            report.limit_hit = true;
            break RunOutcome::LimitReached;
        }
        let t0 = Instant::now();
        let s1_outcome = match &bounds {
            Some(b) => {
                let mut m = build_stage1_model(inst, b, &ledger1, &s1_cfg);
                solve_stage1(&mut m).0
            }
            // Without recipes the only candidate is "no assemblers".
            None if ledger1.is_empty() => {
                Stage1Outcome::Solved(Stage1Solution::empty(0, inst.num_items as usize))
            }
            None => Stage1Outcome::Infeasible,
        };
        report.times.stage1 += t0.elapsed().as_secs_f64();
        let s1 = match s1_outcome {
            Stage1Outcome::Solved(s) | Stage1Outcome::LimitReached(Some(s)) => s,
            Stage1Outcome::Infeasible if report.limit_hit => break RunOutcome::LimitReached,
            Stage1Outcome::Infeasible => break RunOutcome::Infeasible,
            Stage1Outcome::LimitReached(None) => {
                report.limit_hit = true;
                break RunOutcome::LimitReached;
            }
        };
        report.stage1_attempts += 1;
        let i = report.stage1_attempts;
        dump.write(&format!("stage1_{i:03}.json"), &s1);
        on_event(&RunEvent::Stage1 { attempt: i, solution: &s1 });
        let totals: Vec<u32> = s1.active().map(|a| s1.inserter_total(a)).collect();

        let mut attempt = Stage1Attempt {
            solution: s1.clone(),
            packings: Vec::new(),
            packings_exhausted: false,
        };
        // A layout that delivers nothing is not an answer.
        if s1.production_of(inst.out_item) + inst.supply_of(inst.out_item) == 0 {
            report.stage2_attempts.push(0);
            report.attempts.push(attempt);
            ledger1 = record_attempt(&ledger1, &s1).expect("fresh stage-1 solution");
            continue;
        }
        let mut ledger2 = Stage2Ledger::default();
        loop {
            if attempt.packings.len() as u32 >= cfg.max_stage2_attempts_per_stage1 {
                report.limit_hit = true;
                break;
            }
            // Gather a batch of fresh packings, one per worker.
            let room = (cfg.max_stage2_attempts_per_stage1 as usize - attempt.packings.len()).min(workers);
            let mut batch = Vec::new();
            let t0 = Instant::now();
            let mut batch_ledger = ledger2.clone();
            for _ in 0..room {
                let mut m = build_stage2_model(inst.width, inst.height, &reserved, &totals, &batch_ledger)
                    .with_limits(cfg.stage2_node_limit, cfg.stage2_time_limit);
                match solve_stage2(&mut m).0 {
                    Stage2Outcome::Solved(p) => {
                        batch_ledger = record_packing(&batch_ledger, &p).expect("fresh packing");
                        batch.push(p);
                    }
                    Stage2Outcome::Infeasible => {
                        attempt.packings_exhausted = batch.is_empty();
                        break;
                    }
                    Stage2Outcome::LimitReached => {
                        report.limit_hit = true;
                        break;
                    }
                }
            }
            report.times.stage2 += t0.elapsed().as_secs_f64();
            if batch.is_empty() {
                break;
            }

            let t0 = Instant::now();
            let results: Vec<(Stage3Outcome, u64, f64)> = if batch.len() == 1 {
                vec![run_layout(inst, &s1, &batch[0], cfg)]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = batch
                        .iter()
                        .map(|p| scope.spawn(|| run_layout(inst, &s1, p, cfg)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("layout worker")).collect()
                })
            };
            report.times.stage3 += t0.elapsed().as_secs_f64();

            for (packing, (result, nodes, seconds)) in batch.iter().zip(results) {
                let j = attempt.packings.len() + 1;
                dump.write(&format!("stage2_{i:03}_{j:03}.json"), packing);
                let (layout, limited) = match result {
                    Stage3Outcome::Solved(l) => (Some(l), false),
                    Stage3Outcome::LimitReached(l) => (l, true),
                    Stage3Outcome::Infeasible => (None, false),
                };
                report.limit_hit |= limited;
                let Some(layout) = layout else {
                    let result = if limited { LayoutResult::Limit } else { LayoutResult::Infeasible };
                    on_event(&RunEvent::Layout {
                        attempt: i,
                        packing: j as u32,
                        result,
                        nodes,
                        seconds,
                    });
                    attempt.packings.push(PackingAttempt {
                        anchors: packing.anchors.clone(),
                        result,
                        nodes,
                        objective: None,
                    });
                    ledger2 = record_packing(&ledger2, packing).expect("fresh packing");
                    continue;
                };
                dump.write(&format!("stage3_{i:03}_{j:03}.json"), &layout);
                on_event(&RunEvent::Layout {
                    attempt: i,
                    packing: j as u32,
                    result: LayoutResult::Accepted,
                    nodes,
                    seconds,
                });
                attempt.packings.push(PackingAttempt {
                    anchors: packing.anchors.clone(),
                    result: LayoutResult::Accepted,
                    nodes,
                    objective: Some(layout.objective_value),
                });
                let bp = assemble_blueprint(&s1, &layout, inst).expect("layout matches its stage-1 solution");
                let violations = validate_structure(&bp, inst);
                assert!(violations.is_empty(), "layout model emitted an illegal blueprint: {violations:?}");
                report.stage1_objective = Some(s1.objective_value);
                report.layout_objective = Some(layout.objective_value);
                report.stage2_attempts.push(attempt.packings.len() as u32);
                report.attempts.push(attempt);
                break 'outer RunOutcome::Blueprint { blueprint: bp };
            }
            if attempt.packings_exhausted {
                break;
            }
        }
        report.stage2_attempts.push(attempt.packings.len() as u32);
        report.attempts.push(attempt);
        ledger1 = record_attempt(&ledger1, &s1).expect("fresh stage-1 solution");
    };
    report.outcome = outcome;
    if let Some(bp) = report.blueprint() {
        dump.write("blueprint.json", bp);
    }
    dump.write("report.json", &report);
    report
}

/// Convenience for callers that keep dumps next to an instance file.
pub fn default_dump_dir(instance_path: &Path) -> PathBuf {
    instance_path.with_extension("dump")
}
