//! Exhaustive stage-1 enumeration for instances with at most two assembler
//! slots, written without reference to the model.

use bpopt_core::domain::{derive_bounds, validate_instance, ItemId, ProblemInstance, Recipe};
use bpopt_core::stage1::{build_stage1_model, solve_stage1, Stage1Config, Stage1Ledger, Stage1Outcome};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::{instance, recipe};

/// One assembler as the enumeration sees it.
#[derive(Clone, Copy)]
pub struct Choice<'a> {
    pub recipe: &'a Recipe,
    pub rate: u32,
}

fn consumption(r: &Recipe, item: ItemId, rate: u32) -> u32 {
    r.ingredients.get(&item).map_or(0, |&q| q * rate / r.qty_produced)
}

fn inserters(o: Choice<'_>, ir: u32) -> u32 {
    let ins: u32 = o.recipe.ingredients.keys().map(|&j| consumption(o.recipe, j, o.rate).div_ceil(ir)).sum();
    ins + o.rate.div_ceil(ir)
}

/// Objective of a set of assemblers, or None if the set breaks a rule.
pub fn score(inst: &ProblemInstance, set: &[Choice<'_>], penalty: i64) -> Option<i64> {
    let ir = inst.inserter_rate;
    for o in set {
        if o.recipe.ingredients.keys().any(|&j| consumption(o.recipe, j, o.rate) == 0) {
            return None;
        }
        if inserters(*o, ir) > 12 {
            return None;
        }
    }
    for item in 1..=inst.num_items {
        let supply: i64 = inst.sources.iter().filter(|s| s.item == item).map(|s| s.rate as i64).sum();
        let used: i64 = set.iter().map(|o| consumption(o.recipe, item, o.rate) as i64).sum();
        let made: i64 = set.iter().filter(|o| o.recipe.product == item).map(|o| o.rate as i64).sum();
        if used - made > supply {
            return None;
        }
    }
    Some(
        set.iter()
            .map(|o| {
                let out = if o.recipe.product == inst.out_item { o.rate as i64 } else { 0 };
                out - penalty - inserters(*o, ir) as i64
            })
            .sum(),
    )
}

pub fn enumerate(inst: &ProblemInstance, penalty: i64) -> i64 {
    let slots = (inst.width / 3) * (inst.height / 3);
    let options: Vec<Choice<'_>> = inst
        .recipes
        .iter()
        .flat_map(|r| (1..=r.rate).map(move |rate| Choice { recipe: r, rate }))
        .collect();
    let mut best = 0;
    for (i, &a) in options.iter().enumerate() {
        if let Some(v) = score(inst, &[a], penalty) {
            best = best.max(v);
        }
        if slots >= 2 {
            for &b in &options[i..] {
                if let Some(v) = score(inst, &[a, b], penalty) {
                    best = best.max(v);
                }
            }
        }
    }
    best
}

pub fn random_instance(rng: &mut impl Rng) -> ProblemInstance {
    loop {
        let (w, h) = *[(3, 3), (3, 5), (4, 4), (5, 5), (6, 3), (3, 6), (6, 5), (5, 8)]
            .choose(rng)
            .unwrap();
        let num_items = rng.gen_range(1..=3u32);
        let mut products: Vec<ItemId> = (1..=num_items).collect();
        products.shuffle(rng);
        products.truncate(rng.gen_range(1..=num_items.min(2)) as usize);
        let recipes: Vec<Recipe> = products
            .iter()
            .filter_map(|&p| {
                let pool: Vec<ItemId> = (1..=num_items).filter(|&j| j != p).collect();
                if pool.is_empty() {
                    return None;
                }
                let k = rng.gen_range(1..=pool.len().min(2));
                let ingredients: Vec<(ItemId, u32)> =
                    pool.choose_multiple(rng, k).map(|&j| (j, rng.gen_range(1..=3))).collect();
                Some(recipe(p, rng.gen_range(1..=2), *[25, 50, 75, 100].choose(rng).unwrap(), &ingredients))
            })
            .collect();
        if recipes.is_empty() {
            continue;
        }
        let sources: Vec<(u32, u32, ItemId, u32)> = (1..=rng.gen_range(1..=2u32))
            .map(|k| (k, 1, rng.gen_range(1..=num_items), rng.gen_range(0..=8) * 25))
            .collect();
        let mut inst = instance((w, h), num_items, rng.gen_range(1..=num_items), &sources, (w, h), recipes);
        inst.inserter_rate = *[25, 50].choose(rng).unwrap();
        if validate_instance(&inst).is_empty() {
            return inst;
        }
    }
}

/// Solves `count` random instances with stage 1 and compares each objective
/// with [`enumerate`]. Returns how many instances build anything.
pub fn check_stage1(seed: u64, count: usize) -> Result<usize, String> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut positive = 0;
    for n in 0..count {
        let inst = random_instance(&mut rng);
        let penalty = *[0, 9, 30].choose(&mut rng).unwrap();
        let bounds = derive_bounds(&inst).map_err(|e| format!("case {n}: {e}"))?;
        if bounds.max_assemblers > 2 {
            return Err(format!("case {n}: {} assembler slots", bounds.max_assemblers));
        }
        let cfg = Stage1Config {
            assembler_penalty: penalty,
            ..Default::default()
        };
        let mut m = build_stage1_model(&inst, &bounds, &Stage1Ledger::default(), &cfg);
        let Stage1Outcome::Solved(sol) = solve_stage1(&mut m).0 else {
            return Err(format!("case {n}: stage 1 has no answer for {inst:?}"));
        };
        let expected = enumerate(&inst, penalty);
        if sol.objective_value != expected {
            return Err(format!("case {n}: model {} vs enumeration {expected} on {inst:?}", sol.objective_value));
        }
        // The reported assemblers score what the model claims.
        let set: Vec<Choice<'_>> = sol
            .active()
            .map(|a| Choice {
                recipe: inst.recipes.iter().find(|r| r.product == sol.assembler_recipes[a]).unwrap(),
                rate: sol.assembler_rates[a],
            })
            .collect();
        if score(&inst, &set, penalty) != Some(sol.objective_value) {
            return Err(format!("case {n}: reported assemblers do not score {}", sol.objective_value));
        }
        positive += usize::from(expected > 0);
    }
    Ok(positive)
}
