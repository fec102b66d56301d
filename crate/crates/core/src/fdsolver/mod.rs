//! A small deterministic finite-domain constraint solver.
//!
//! Variables have bitset domains over a contiguous initial interval.
//! Constraints are lowered into propagators that run to a fixpoint after
//! every decision. Search is chronological depth-first with optional
//! branch-and-bound on a linear objective; there are no restarts and no
//! learning, so two runs on the same model visit the same nodes.

mod constraint;
mod store;

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use constraint::{Cmp, Constraint, Domains, Global, Lit, Propagator, Wipeout};
use constraint::{lower, propagate, Prop};
use store::{Conflict, PropResult, Store};

/// Handle to a model variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("empty domain [{lo}, {hi}]")]
    EmptyDomain { lo: i32, hi: i32 },
    #[error("constraint references unknown variable {0}")]
    UnknownVar(u32),
    #[error("element array must not be empty")]
    EmptyElementArray,
    #[error("table tuple arity does not match its variables")]
    TableArity,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum Objective {
    #[default]
    None,
    Maximize(Vec<(i64, Var)>),
    Minimize(Vec<(i64, Var)>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SearchMode {
    /// Stop at the first solution.
    First,
    /// Branch-and-bound to a proven optimum (same as `First` without an objective).
    #[default]
    Best,
    /// Visit every solution.
    Enumerate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarOrder {
    /// First unfixed variable in branching order.
    #[default]
    Input,
    /// Smallest domain first, ties broken by branching order.
    MinDomain,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ValueOrder {
    #[default]
    Ascending,
    Descending,
}

#[derive(Clone, Debug, Default)]
pub struct SearchConfig {
    pub objective: Objective,
    /// 0 = unlimited.
    pub node_limit: u64,
    /// Seconds; 0 = unlimited. Wall-clock limits make results machine
    /// dependent, prefer node limits where determinism matters.
    pub time_limit: f64,
    pub mode: SearchMode,
    pub var_order: VarOrder,
    pub value_order: ValueOrder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    values: Vec<i32>,
    pub objective: Option<i64>,
}

impl Solution {
    pub fn value(&self, v: Var) -> i32 {
        self.values[v.index()]
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Sat(Solution),
    Unsat,
    LimitReached(Option<Solution>),
}

impl Outcome {
    pub fn solution(&self) -> Option<&Solution> {
        match self {
            Outcome::Sat(s) | Outcome::LimitReached(Some(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes: u64,
    pub failures: u64,
    pub solutions: u64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub outcome: Outcome,
    pub stats: SearchStats,
    /// Every solution found, in discovery order, in `Enumerate` mode.
    pub solutions: Vec<Solution>,
}

/// A constraint model: variables, posted constraints and branching order.
/// Posting runs root propagation immediately, so domains observed through
/// [`Model::min`] and friends reflect everything posted so far.
#[derive(Clone, Debug, Default)]
pub struct Model {
    store: Store,
    props: Vec<Prop>,
    watches: Vec<Vec<u32>>,
    posted: Vec<Constraint>,
    branch_first: Vec<Var>,
    unsat: bool,
    queue: VecDeque<u32>,
    /// Global propagators wait here until the cheap ones are done.
    slow_queue: VecDeque<u32>,
    queued: Vec<bool>,
}

enum Flow {
    Continue,
    Stop,
}

struct SearchState<'a> {
    cfg: &'a SearchConfig,
    order: Vec<u32>,
    objective: Vec<(i64, u32)>,
    objective_prop: Option<u32>,
    bound: i64,
    best: Option<Solution>,
    stats: SearchStats,
    collected: Vec<Solution>,
    started: Instant,
    limit_hit: bool,
    callback: Option<&'a mut dyn FnMut(&Solution) -> bool>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.store.num_vars()
    }

    pub fn add_var(&mut self, lo: i32, hi: i32) -> Result<Var, ModelError> {
        if lo > hi {
            return Err(ModelError::EmptyDomain { lo, hi });
        }
        let id = self.store.add(lo, hi);
        self.watches.push(Vec::new());
        Ok(Var(id))
    }

    /// Infallible shorthand for `add_var` with a domain known to be non-empty.
    pub fn int(&mut self, lo: i32, hi: i32) -> Var {
        self.add_var(lo, hi).expect("non-empty domain")
    }

    pub fn boolean(&mut self) -> Var {
        self.int(0, 1)
    }

    pub fn constant(&mut self, value: i32) -> Var {
        self.int(value, value)
    }

    pub fn is_unsat(&self) -> bool {
        self.unsat
    }

    pub fn min(&self, v: Var) -> i32 {
        self.store.min(v.0)
    }

    pub fn max(&self, v: Var) -> i32 {
        self.store.max(v.0)
    }

    pub fn size(&self, v: Var) -> u32 {
        self.store.size(v.0)
    }

    pub fn contains(&self, v: Var, value: i32) -> bool {
        self.store.contains(v.0, value)
    }

    pub fn values(&self, v: Var) -> Vec<i32> {
        self.store.values(v.0)
    }

    pub fn is_fixed(&self, v: Var) -> bool {
        self.store.is_fixed(v.0)
    }

    /// Every constraint posted so far, in posting order.
    pub fn constraints(&self) -> &[Constraint] {
        &self.posted
    }

    /// Variables branched on before all others, in the given order. The
    /// remaining variables follow in registration order.
    pub fn set_branching(&mut self, vars: Vec<Var>) {
        self.branch_first = vars;
    }

    pub fn post(&mut self, c: Constraint) -> Result<(), ModelError> {
        let n = self.store.num_vars() as u32;
        if let Some(bad) = c.vars().into_iter().find(|v| v.0 >= n) {
            return Err(ModelError::UnknownVar(bad.0));
        }
        match &c {
            Constraint::Element { array, .. } if array.is_empty() => {
                return Err(ModelError::EmptyElementArray)
            }
            Constraint::Table { vars, tuples } if tuples.iter().any(|t| t.len() != vars.len()) => {
                return Err(ModelError::TableArity)
            }
            _ => {}
        }
        let props = lower(&c);
        self.posted.push(c);
        for p in props {
            let id = self.add_prop(p);
            self.enqueue(id);
        }
        if !self.unsat && self.fixpoint(i64::MAX).is_err() {
            self.unsat = true;
        }
        Ok(())
    }

    fn add_prop(&mut self, p: Prop) -> u32 {
        let id = self.props.len() as u32;
        let mut vs = p.vars();
        vs.sort_unstable();
        vs.dedup();
        for v in vs {
            self.watches[v as usize].push(id);
        }
        self.props.push(p);
        self.queued.push(false);
        id
    }

    fn enqueue(&mut self, id: u32) {
        if !self.queued[id as usize] {
            self.queued[id as usize] = true;
            if matches!(self.props[id as usize], Prop::Global(_)) {
                self.slow_queue.push_back(id);
            } else {
                self.queue.push_back(id);
            }
        }
    }

    fn fixpoint(&mut self, bound: i64) -> PropResult {
        loop {
            while let Some(v) = self.store.touched.pop() {
                for i in 0..self.watches[v as usize].len() {
                    let id = self.watches[v as usize][i];
                    self.enqueue(id);
                }
            }
            let Some(id) = self.queue.pop_front().or_else(|| self.slow_queue.pop_front()) else {
                return Ok(());
            };
            self.queued[id as usize] = false;
            if let Err(c) = propagate(&self.props[id as usize], &mut self.store, bound) {
                for q in self.queue.drain(..).chain(self.slow_queue.drain(..)) {
                    self.queued[q as usize] = false;
                }
                self.store.touched.clear();
                return Err(c);
            }
        }
    }

    pub fn solve(&mut self, cfg: &SearchConfig) -> SolveResult {
        self.run(cfg, None)
    }

    /// Enumerates solutions, calling `f` on each until it returns `false`.
    pub fn enumerate(&mut self, cfg: &SearchConfig, f: &mut dyn FnMut(&Solution) -> bool) -> SearchStats {
        let cfg = SearchConfig {
            mode: SearchMode::Enumerate,
            ..cfg.clone()
        };
        self.run(&cfg, Some(f)).stats
    }

    fn run<'a>(&mut self, cfg: &'a SearchConfig, callback: Option<&'a mut dyn FnMut(&Solution) -> bool>) -> SolveResult {
        if self.unsat {
            return SolveResult {
                outcome: Outcome::Unsat,
                stats: SearchStats::default(),
                solutions: Vec::new(),
            };
        }
        let n = self.store.num_vars();
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for v in self.branch_first.iter().map(|v| v.0).chain(0..n as u32) {
            if !seen[v as usize] {
                seen[v as usize] = true;
                order.push(v);
            }
        }
        let objective: Vec<(i64, u32)> = match &cfg.objective {
            Objective::None => Vec::new(),
            Objective::Minimize(t) => t.iter().map(|&(c, v)| (c, v.0)).collect(),
            Objective::Maximize(t) => t.iter().map(|&(c, v)| (-c, v.0)).collect(),
        };
        let optimizing = cfg.mode == SearchMode::Best && !matches!(cfg.objective, Objective::None);
        let props_before = self.props.len();
        let objective_prop = optimizing.then(|| {
            self.add_prop(Prop::Objective {
                terms: objective.clone(),
            })
        });

        let mark = self.store.trail_len();
        let mut st = SearchState {
            cfg,
            order,
            objective,
            objective_prop,
            bound: i64::MAX,
            best: None,
            stats: SearchStats::default(),
            collected: Vec::new(),
            started: Instant::now(),
            limit_hit: false,
            callback,
        };
        self.dfs(&mut st, 0);
        self.store.undo_to(mark);

        // Drop the temporary objective propagator.
        if objective_prop.is_some() {
            self.props.truncate(props_before);
            self.queued.truncate(props_before);
            for w in &mut self.watches {
                w.retain(|&id| (id as usize) < props_before);
            }
        }

        let outcome = if st.limit_hit {
            Outcome::LimitReached(st.best.clone())
        } else {
            match st.best.clone() {
                Some(s) => Outcome::Sat(s),
                None => Outcome::Unsat,
            }
        };
        SolveResult {
            outcome,
            stats: st.stats,
            solutions: st.collected,
        }
    }

    fn out_of_budget(&self, st: &mut SearchState) -> bool {
        if st.cfg.node_limit > 0 && st.stats.nodes >= st.cfg.node_limit {
            st.limit_hit = true;
        }
        if st.cfg.time_limit > 0.0
            && st.stats.nodes.is_multiple_of(256)
            && st.started.elapsed() >= Duration::from_secs_f64(st.cfg.time_limit)
        {
            st.limit_hit = true;
        }
        st.limit_hit
    }

    fn dfs(&mut self, st: &mut SearchState, start: usize) -> Flow {
        if self.out_of_budget(st) {
            return Flow::Stop;
        }
        st.stats.nodes += 1;
        if let Some(id) = st.objective_prop {
            self.enqueue(id);
        }
        if self.fixpoint(st.bound).is_err() {
            st.stats.failures += 1;
            return Flow::Continue;
        }

        let Some((pos, var)) = self.select(st, start) else {
            return self.on_solution(st);
        };

        let mut values = self.store.values(var);
        if st.cfg.value_order == ValueOrder::Descending {
            values.reverse();
        }
        for val in values {
            let mark = self.store.trail_len();
            let ok: Result<bool, Conflict> = self.store.assign(var, val);
            let flow = match ok {
                Ok(_) => self.dfs(st, pos),
                Err(_) => {
                    st.stats.failures += 1;
                    Flow::Continue
                }
            };
            self.store.undo_to(mark);
            self.store.touched.clear();
            if let Flow::Stop = flow {
                return Flow::Stop;
            }
        }
        Flow::Continue
    }

    fn select(&self, st: &SearchState, start: usize) -> Option<(usize, u32)> {
        match st.cfg.var_order {
            VarOrder::Input => st.order[start..]
                .iter()
                .position(|&v| !self.store.is_fixed(v))
                .map(|p| (start + p, st.order[start + p])),
            VarOrder::MinDomain => {
                let mut best: Option<(usize, u32, u32)> = None;
                let mut first_unfixed = None;
                for (p, &v) in st.order.iter().enumerate().skip(start) {
                    let size = self.store.size(v);
                    if size <= 1 {
                        continue;
                    }
                    first_unfixed.get_or_insert(p);
                    if best.is_none_or(|b| size < b.2) {
                        best = Some((p, v, size));
                        if size == 2 {
                            break;
                        }
                    }
                }
                // Resume scanning from the first unfixed position, not the chosen one.
                best.map(|(_, v, _)| (first_unfixed.unwrap(), v))
            }
        }
    }

    fn on_solution(&mut self, st: &mut SearchState) -> Flow {
        let values: Vec<i32> = (0..self.store.num_vars() as u32).map(|v| self.store.min(v)).collect();
        let objective = if matches!(st.cfg.objective, Objective::None) {
            None
        } else {
            let internal: i64 = st.objective.iter().map(|&(c, v)| c * values[v as usize] as i64).sum();
            Some(match st.cfg.objective {
                Objective::Maximize(_) => -internal,
                _ => internal,
            })
        };
        let sol = Solution { values, objective };
        st.stats.solutions += 1;
        match st.cfg.mode {
            SearchMode::First => {
                st.best = Some(sol);
                Flow::Stop
            }
            SearchMode::Best => {
                if st.objective_prop.is_none() {
                    st.best = Some(sol);
                    return Flow::Stop;
                }
                let internal: i64 = st
                    .objective
                    .iter()
                    .map(|&(c, v)| c * sol.values[v as usize] as i64)
                    .sum();
                st.bound = internal - 1;
                st.best = Some(sol);
                Flow::Continue
            }
            SearchMode::Enumerate => {
                let keep_going = match st.callback.as_mut() {
                    Some(f) => f(&sol),
                    None => true,
                };
                if st.callback.is_none() {
                    st.collected.push(sol.clone());
                }
                st.best.get_or_insert(sol);
                if keep_going {
                    Flow::Continue
                } else {
                    Flow::Stop
                }
            }
        }
    }
}
