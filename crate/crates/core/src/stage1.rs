//! Recipe stage: how many assemblers, which recipe each runs, at what rate,
//! and how many inserters feed and empty each one. No geometry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ItemId, ModelBounds, ProblemInstance, MAX_INSERTERS_PER_ASSEMBLER};
use crate::fdsolver::{
    Constraint, Lit, Model, Objective, Outcome, SearchConfig, SearchStats, ValueOrder, Var,
};

/// Penalty per active assembler in the stage objective.
pub const DEFAULT_ASSEMBLER_PENALTY: i64 = 9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Solution {
    pub num_assemblers: u32,
    /// Product per assembler slot; `0` marks an inactive slot.
    pub assembler_recipes: Vec<ItemId>,
    pub assembler_rates: Vec<u32>,
    /// `[assembler][item - 1]`
    pub inserters_in: Vec<Vec<u32>>,
    pub inserters_out: Vec<u32>,
    /// `[assembler][item - 1]`, items per minute.
    pub consuming: Vec<Vec<u32>>,
    pub objective_value: i64,
}

impl Stage1Solution {
    /// The solution with no active assembler.
    pub fn empty(max_assemblers: usize, num_items: usize) -> Self {
        Self {
            num_assemblers: 0,
            assembler_recipes: vec![0; max_assemblers],
            assembler_rates: vec![0; max_assemblers],
            inserters_in: vec![vec![0; num_items]; max_assemblers],
            inserters_out: vec![0; max_assemblers],
            consuming: vec![vec![0; num_items]; max_assemblers],
            objective_value: 0,
        }
    }

    /// Indices of active assembler slots, in slot order.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.assembler_recipes
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != 0)
            .map(|(a, _)| a)
    }

    pub fn inserter_total(&self, a: usize) -> u32 {
        self.inserters_in[a].iter().sum::<u32>() + self.inserters_out[a]
    }

    /// Per-slot inserter totals over every slot, inactive ones included.
    pub fn inserter_totals(&self) -> Vec<u32> {
        (0..self.assembler_recipes.len())
            .map(|a| self.inserter_total(a))
            .collect()
    }

    pub fn inserters_in_for(&self, a: usize, item: ItemId) -> u32 {
        self.inserters_in[a].get(item as usize - 1).copied().unwrap_or(0)
    }

    /// Σ rates over active assemblers producing `item`.
    pub fn production_of(&self, item: ItemId) -> u64 {
        self.active()
            .filter(|&a| self.assembler_recipes[a] == item)
            .map(|a| self.assembler_rates[a] as u64)
            .sum()
    }
}

/// Previously attempted `(recipes, inserter totals)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Ledger {
    pub attempts: Vec<(Vec<ItemId>, Vec<u32>)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("stage-1 attempt already recorded")]
pub struct DuplicateAttempt;

impl Stage1Ledger {
    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    pub fn contains(&self, sol: &Stage1Solution) -> bool {
        let key = (sol.assembler_recipes.clone(), sol.inserter_totals());
        self.attempts.contains(&key)
    }
}

pub fn record_attempt(ledger: &Stage1Ledger, sol: &Stage1Solution) -> Result<Stage1Ledger, DuplicateAttempt> {
    if ledger.contains(sol) {
        return Err(DuplicateAttempt);
    }
    let mut next = ledger.clone();
    next.attempts
        .push((sol.assembler_recipes.clone(), sol.inserter_totals()));
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct Stage1Config {
    pub assembler_penalty: i64,
    pub node_limit: u64,
    pub time_limit: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            assembler_penalty: DEFAULT_ASSEMBLER_PENALTY,
            node_limit: 0,
            time_limit: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
struct Slot {
    recipe: Var,
    rate: Var,
    active: Var,
    ins_in: Vec<Var>,
    ins_out: Var,
    total: Var,
    consuming: Vec<Var>,
    /// Production per item (0 unless the slot runs that item's recipe).
    producing: Vec<Var>,
}

/// A built stage-1 model together with its variable map.
pub struct Stage1Model {
    pub model: Model,
    slots: Vec<Slot>,
    objective: Vec<(i64, Var)>,
    num_items: usize,
    config: Stage1Config,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage1Outcome {
    Solved(Stage1Solution),
    Infeasible,
    /// The search budget ran out; carries the best solution found, if any.
    LimitReached(Option<Stage1Solution>),
}

pub fn build_stage1_model(
    inst: &ProblemInstance,
    bounds: &ModelBounds,
    ledger: &Stage1Ledger,
    config: &Stage1Config,
) -> Stage1Model {
    let n = inst.num_items as usize;
    let slots_n = bounds.max_assemblers as usize;
    let ir = inst.inserter_rate as i64;
    let mut m = Model::new();

    let products: Vec<ItemId> = {
        let mut p: Vec<ItemId> = inst.recipes.iter().map(|r| r.product).collect();
        p.sort_unstable();
        p
    };
    let is_ingredient = |j: ItemId| inst.recipes.iter().any(|r| r.ingredients.contains_key(&j));

    let mut slots = Vec::with_capacity(slots_n);
    for _ in 0..slots_n {
        let recipe = m.int(0, inst.num_items as i32);
        for item in 1..=inst.num_items {
            if !products.contains(&item) {
                m.post(Constraint::Clause(vec![Lit::Ne(recipe, item as i32)])).unwrap();
            }
        }
        let rate = m.int(0, bounds.max_rate as i32);
        let active = m.boolean();
        m.post(Constraint::ReifGt {
            b: active,
            x: recipe,
            value: 0,
        })
        .unwrap();
        let ins_in: Vec<Var> = (1..=inst.num_items)
            .map(|j| {
                if is_ingredient(j) {
                    m.int(0, bounds.max_inserters_in as i32)
                } else {
                    m.constant(0)
                }
            })
            .collect();
        let ins_out = m.int(0, bounds.max_inserters_out as i32);
        let total = m.int(0, MAX_INSERTERS_PER_ASSEMBLER as i32);
        let consuming: Vec<Var> = (1..=inst.num_items)
            .map(|j| {
                if is_ingredient(j) {
                    m.int(0, bounds.max_consumption as i32)
                } else {
                    m.constant(0)
                }
            })
            .collect();
        let producing: Vec<Var> = (1..=inst.num_items)
            .map(|j| {
                if products.contains(&j) {
                    m.int(0, bounds.max_rate as i32)
                } else {
                    m.constant(0)
                }
            })
            .collect();
        slots.push(Slot {
            recipe,
            rate,
            active,
            ins_in,
            ins_out,
            total,
            consuming,
            producing,
        });
    }

    for s in &slots {
        // total = Σ in + out
        let mut terms: Vec<(i64, Var)> = s.ins_in.iter().map(|&v| (1, v)).collect();
        terms.push((1, s.ins_out));
        terms.push((-1, s.total));
        m.post(Constraint::eq(terms, 0)).unwrap();

        // Inactive slots are empty; active ones produce something.
        let idle = Lit::Eq(s.recipe, 0);
        m.post(Constraint::implies_le(idle, vec![(1, s.rate)], 0)).unwrap();
        m.post(Constraint::implies_le(idle, vec![(1, s.total)], 0)).unwrap();
        m.post(Constraint::Implies(Lit::Ne(s.recipe, 0), Lit::Ge(s.rate, 1))).unwrap();

        for (jx, &item) in (1..=inst.num_items).collect::<Vec<_>>().iter().enumerate() {
            let cons = s.consuming[jx];
            m.post(Constraint::implies_le(idle, vec![(1, cons)], 0)).unwrap();
            // producing[item] = rate if recipe = item else 0
            let prod = s.producing[jx];
            if products.contains(&item) {
                let runs = Lit::Eq(s.recipe, item as i32);
                m.post(Constraint::implies_eq(runs, vec![(1, prod), (-1, s.rate)], 0)).unwrap();
                m.post(Constraint::implies_le(runs.negate(), vec![(1, prod)], 0)).unwrap();
            }
        }

        for r in &inst.recipes {
            let runs = Lit::Eq(s.recipe, r.product as i32);
            m.post(Constraint::implies_le(runs, vec![(1, s.rate)], r.rate as i64)).unwrap();
            let qp = r.qty_produced as i64;
            for (jx, &cons) in s.consuming.iter().enumerate() {
                let item = jx as ItemId + 1;
                match r.ingredients.get(&item) {
                    Some(&q) => {
                        let q = q as i64;
                        // cons = floor(q·rate / qp)
                        m.post(Constraint::implies_le(runs, vec![(qp, cons), (-q, s.rate)], 0))
                            .unwrap();
                        m.post(Constraint::implies_le(runs, vec![(q, s.rate), (-qp, cons)], qp - 1))
                            .unwrap();
                        // Every ingredient has to arrive by inserter.
                        m.post(Constraint::implies_ge(runs, vec![(1, cons)], 1)).unwrap();
                    }
                    None => {
                        m.post(Constraint::implies_le(runs, vec![(1, cons)], 0)).unwrap();
                    }
                }
            }
        }

        // Inserter bands: (n-1)·r < f ≤ n·r.
        for (&n_in, &f) in s.ins_in.iter().zip(&s.consuming) {
            m.post(Constraint::le(vec![(1, f), (-ir, n_in)], 0)).unwrap();
            m.post(Constraint::le(vec![(ir, n_in), (-1, f)], ir - 1)).unwrap();
        }
        m.post(Constraint::le(vec![(1, s.rate), (-ir, s.ins_out)], 0)).unwrap();
        m.post(Constraint::le(vec![(ir, s.ins_out), (-1, s.rate)], ir - 1)).unwrap();
    }

    // Item balance: consumption within supply plus in-blueprint production.
    for jx in 0..n {
        let item = jx as ItemId + 1;
        let mut terms: Vec<(i64, Var)> = Vec::new();
        for s in &slots {
            if !m.is_fixed(s.consuming[jx]) || m.min(s.consuming[jx]) != 0 {
                terms.push((1, s.consuming[jx]));
            }
            if !m.is_fixed(s.producing[jx]) || m.min(s.producing[jx]) != 0 {
                terms.push((-1, s.producing[jx]));
            }
        }
        if !terms.is_empty() {
            m.post(Constraint::le(terms, inst.supply_of(item) as i64)).unwrap();
        }
    }

    // Symmetry: inactive slots last; active slots sorted by (product, inserter total).
    let key_span = MAX_INSERTERS_PER_ASSEMBLER as i64 + 1;
    for w in slots.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        m.post(Constraint::Implies(Lit::Eq(a.recipe, 0), Lit::Eq(b.recipe, 0))).unwrap();
        m.post(Constraint::implies_le(
            Lit::is_true(b.active),
            vec![(key_span, a.recipe), (1, a.total), (-key_span, b.recipe), (-1, b.total)],
            0,
        ))
        .unwrap();
    }

    // Exclude earlier attempts.
    for (recipes, totals) in &ledger.attempts {
        let mut lits = Vec::new();
        for (s, (&r, &t)) in slots.iter().zip(recipes.iter().zip(totals)) {
            lits.push(Lit::Ne(s.recipe, r as i32));
            lits.push(Lit::Ne(s.total, t as i32));
        }
        m.post(Constraint::Clause(lits)).unwrap();
    }

    // Objective: output production minus building penalties.
    let out = inst.out_item as usize - 1;
    let mut objective: Vec<(i64, Var)> = Vec::new();
    for s in &slots {
        objective.push((1, s.producing[out]));
        objective.push((-config.assembler_penalty, s.active));
        objective.push((-1, s.total));
    }

    let mut branching = Vec::new();
    for s in &slots {
        branching.push(s.recipe);
        branching.push(s.rate);
    }
    m.set_branching(branching);

    Stage1Model {
        model: m,
        slots,
        objective,
        num_items: n,
        config: config.clone(),
    }
}

impl Stage1Model {
    fn decode(&self, sol: &crate::fdsolver::Solution) -> Stage1Solution {
        let val = |v: Var| sol.value(v) as u32;
        let assembler_recipes: Vec<ItemId> = self.slots.iter().map(|s| val(s.recipe)).collect();
        Stage1Solution {
            num_assemblers: assembler_recipes.iter().filter(|&&r| r != 0).count() as u32,
            assembler_rates: self.slots.iter().map(|s| val(s.rate)).collect(),
            inserters_in: self
                .slots
                .iter()
                .map(|s| s.ins_in.iter().map(|&v| val(v)).collect())
                .collect(),
            inserters_out: self.slots.iter().map(|s| val(s.ins_out)).collect(),
            consuming: self
                .slots
                .iter()
                .map(|s| s.consuming.iter().map(|&v| val(v)).collect())
                .collect(),
            objective_value: sol.objective.unwrap_or(0),
            assembler_recipes,
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }
}

pub fn solve_stage1(model: &mut Stage1Model) -> (Stage1Outcome, SearchStats) {
    let cfg = SearchConfig {
        objective: Objective::Maximize(model.objective.clone()),
        node_limit: model.config.node_limit,
        time_limit: model.config.time_limit,
        value_order: ValueOrder::Descending,
        ..Default::default()
    };
    let r = model.model.solve(&cfg);
    let outcome = match r.outcome {
        Outcome::Sat(s) => Stage1Outcome::Solved(model.decode(&s)),
        Outcome::Unsat => Stage1Outcome::Infeasible,
        Outcome::LimitReached(s) => Stage1Outcome::LimitReached(s.map(|s| model.decode(&s))),
    };
    (outcome, r.stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{derive_bounds, GridCoord, Recipe, Source};
    use std::collections::BTreeMap;

    pub(crate) fn strip(qty_in: u32, qty_out: u32, rate: u32) -> ProblemInstance {
        ProblemInstance {
            width: 3,
            height: 5,
            num_items: 2,
            out_item: 2,
            inserter_rate: 50,
            conveyor_capacity: 450,
            sources: vec![Source {
                at: GridCoord::new(1, 1),
                item: 1,
                rate: 400,
            }],
            destination: GridCoord::new(3, 1),
            recipes: vec![Recipe {
                product: 2,
                qty_produced: qty_out,
                rate,
                ingredients: BTreeMap::from([(1, qty_in)]),
            }],
        }
    }

    fn solve(inst: &ProblemInstance, ledger: &Stage1Ledger) -> Stage1Outcome {
        let b = derive_bounds(inst).unwrap();
        let mut m = build_stage1_model(inst, &b, ledger, &Stage1Config::default());
        solve_stage1(&mut m).0
    }

    fn solved(o: Stage1Outcome) -> Stage1Solution {
        match o {
            Stage1Outcome::Solved(s) => s,
            other => panic!("expected a solution, got {other:?}"),
        }
    }

    #[test]
    fn one_to_one_recipe() {
        let s = solved(solve(&strip(1, 1, 50), &Stage1Ledger::default()));
        assert_eq!(s.num_assemblers, 1);
        assert_eq!(s.assembler_rates[0], 50);
        assert_eq!(s.inserters_in_for(0, 1), 1);
        assert_eq!(s.inserters_out[0], 1);
        assert_eq!(s.objective_value, 50 - 9 - 2);
    }

    #[test]
    fn two_to_one_recipe_needs_two_inputs() {
        let s = solved(solve(&strip(2, 1, 50), &Stage1Ledger::default()));
        assert_eq!(s.consuming[0][0], 100);
        assert_eq!((s.inserters_in_for(0, 1), s.inserters_out[0]), (2, 1));
    }

    #[test]
    fn one_to_two_recipe_needs_two_outputs() {
        let s = solved(solve(&strip(1, 2, 100), &Stage1Ledger::default()));
        assert_eq!((s.inserters_in_for(0, 1), s.inserters_out[0]), (1, 2));
        assert_eq!(s.assembler_rates[0], 100);
    }

    #[test]
    fn no_assembly_needed() {
        let mut inst = strip(1, 1, 50);
        inst.out_item = 1;
        let s = solved(solve(&inst, &Stage1Ledger::default()));
        assert_eq!(s.num_assemblers, 0);
        assert_eq!(s.objective_value, 0);
    }

    #[test]
    fn ledger_excludes_previous_solution() {
        let inst = strip(1, 1, 50);
        let first = solved(solve(&inst, &Stage1Ledger::default()));
        let ledger = record_attempt(&Stage1Ledger::default(), &first).unwrap();
        assert_eq!(ledger.len(), 1);
        assert_eq!(record_attempt(&ledger, &first), Err(DuplicateAttempt));
        match solve(&inst, &ledger) {
            Stage1Outcome::Solved(second) => {
                assert!(
                    second.assembler_recipes != first.assembler_recipes
                        || second.inserter_totals() != first.inserter_totals()
                );
                assert!(second.objective_value <= first.objective_value);
            }
            Stage1Outcome::Infeasible => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repeated_solve_record_never_repeats() {
        let mut inst = strip(2, 1, 50);
        inst.width = 6;
        inst.height = 3;
        let mut ledger = Stage1Ledger::default();
        let mut seen = Vec::new();
        loop {
            match solve(&inst, &ledger) {
                Stage1Outcome::Solved(s) => {
                    let key = (s.assembler_recipes.clone(), s.inserter_totals());
                    assert!(!seen.contains(&key));
                    seen.push(key);
                    ledger = record_attempt(&ledger, &s).unwrap();
                }
                Stage1Outcome::Infeasible => break,
                other => panic!("{other:?}"),
            }
        }
        // Two slots, one recipe: totals per active slot are 2 (rate ≤ 25) or
        // 3 (rate 26..=50), sorted: {}, {2}, {3}, {2,2}, {2,3}, {3,3}.
        assert_eq!(seen.len(), 6);
    }
}
