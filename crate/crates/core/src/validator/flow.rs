//! Steady-state flow: a monotone fixed point over exact rational rates.

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{derive_grids, Blueprint};
use crate::domain::{Grid, GridCoord, ProblemInstance};
use crate::stage3::{feed_graph, tile_kinds, TileKind};

pub type Rate = Ratio<i64>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowReport {
    /// Items per minute through each transport tile.
    pub tile_rates: Grid<Rate>,
    /// Per block (anchor): production rate and fraction of the recipe rate.
    pub production: Vec<(GridCoord, Rate)>,
    pub utilization: Vec<(GridCoord, Rate)>,
    pub delivered_rate: Rate,
    pub predicted_rate: u64,
    /// Inserters that move nothing at steady state.
    pub starved: Vec<GridCoord>,
    pub iterations: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("blueprint has a transport cycle at {0}")]
    Cyclic(GridCoord),
    #[error("rates did not settle after {0} iterations")]
    NonConvergence(usize),
}

enum Input {
    Nothing,
    Belt,
    Chain(usize),
    Block,
}

pub fn simulate_flow(bp: &Blueprint, inst: &ProblemInstance) -> Result<FlowReport, FlowError> {
    let (w, h) = (bp.width, bp.height);
    let n = (w * h) as usize;
    let derived = derive_grids(bp, inst);
    if let Some(&c) = derived.cyclic.first() {
        return Err(FlowError::Cyclic(c));
    }
    let (conv, ins) = bp.object_grids();
    let placements = bp.placements();
    let mut scratch = Vec::new();
    let kinds = tile_kinds(&conv, &ins, inst, &placements, &mut scratch);
    let (feeders, _) = feed_graph(&kinds, inst);
    let coord = |i: usize| GridCoord::from_index(i, w);
    let kind = |i: usize| kinds.cells()[i];
    let cap = Rate::from_integer(inst.conveyor_capacity as i64);
    let arm = Rate::from_integer(inst.inserter_rate as i64);

    // Pickers per belt, upstream first then row-major.
    let mut pickers: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut input: Vec<Input> = (0..n).map(|_| Input::Nothing).collect();
    let mut block_out: Vec<Vec<usize>> = vec![Vec::new(); placements.len()];
    let mut block_in: Vec<Vec<usize>> = vec![Vec::new(); placements.len()];
    for i in 0..n {
        let TileKind::Inserter(d) = kind(i) else { continue };
        let t = coord(i);
        if let Some(src) = t.step(d.opposite(), w, h) {
            let si = src.index(w);
            input[i] = match kind(si) {
                TileKind::Block(k) => {
                    block_out[k].push(i);
                    Input::Block
                }
                TileKind::Conveyor(_) if feeders[i].contains(&src) => {
                    pickers[si].push(i);
                    Input::Belt
                }
                TileKind::Inserter(_) if feeders[i].contains(&src) => Input::Chain(si),
                _ => Input::Nothing,
            };
        }
        if let Some(dst) = t.step(d, w, h) {
            if let TileKind::Block(k) = kind(dst.index(w)) {
                block_in[k].push(i);
            }
        }
    }
    for p in pickers.iter_mut() {
        p.sort_by_key(|&i| (*derived.routes.get(coord(i)), i));
    }

    let mut flow = vec![Rate::zero(); n];
    let mut prod = vec![Rate::zero(); placements.len()];
    let limit = 4 * (n + placements.len()) + 16;
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > limit {
            return Err(FlowError::NonConvergence(limit));
        }
        // Split of each belt between its pickers and what passes on.
        let mut give = vec![Rate::zero(); n];
        let mut pass = vec![Rate::zero(); n];
        for i in 0..n {
            if !matches!(kind(i), TileKind::Conveyor(_)) {
                continue;
            }
            let mut left = flow[i];
            for &p in &pickers[i] {
                let g = left.min(arm);
                give[p] = g;
                left -= g;
            }
            pass[i] = left;
        }
        let mut block_give = vec![Rate::zero(); n];
        for (k, outs) in block_out.iter().enumerate() {
            let mut left = prod[k];
            for &o in outs {
                let g = left.min(arm);
                block_give[o] = g;
                left -= g;
            }
        }

        let mut next = vec![Rate::zero(); n];
        for i in 0..n {
            let t = coord(i);
            match kind(i) {
                TileKind::Conveyor(_) => {
                    let mut inflow = Rate::from_integer(
                        inst.sources.iter().filter(|s| s.at == t).map(|s| s.rate as i64).sum(),
                    );
                    for &u in &feeders[i] {
                        let ui = u.index(w);
                        inflow += match kind(ui) {
                            TileKind::Conveyor(_) => pass[ui],
                            _ => flow[ui],
                        };
                    }
                    next[i] = inflow.min(cap);
                }
                TileKind::Inserter(_) => {
                    next[i] = match input[i] {
                        Input::Nothing => Rate::zero(),
                        Input::Belt => give[i],
                        Input::Chain(u) => flow[u].min(arm),
                        Input::Block => block_give[i],
                    };
                }
                _ => {}
            }
        }
        let mut next_prod = vec![Rate::zero(); placements.len()];
        for (k, p) in placements.iter().enumerate() {
            let Some(recipe) = inst.recipe_for(p.recipe) else { continue };
            let mut best = Rate::from_integer(recipe.rate as i64);
            for (&item, &qty) in &recipe.ingredients {
                let supply: Rate = block_in[k]
                    .iter()
                    .filter(|&&i| *derived.carrying.get(coord(i)) == item)
                    .map(|&i| flow[i])
                    .sum();
                best = best.min(supply * Rate::new(recipe.qty_produced as i64, qty as i64));
            }
            next_prod[k] = best;
        }
        if next == flow && next_prod == prod {
            break;
        }
        flow = next;
        prod = next_prod;
    }

    let mut tile_rates = Grid::filled(w, h, Rate::zero());
    for (i, f) in flow.iter().enumerate() {
        tile_rates.set(coord(i), *f);
    }
    let delivered_rate = match kind(inst.destination.index(w)) {
        TileKind::Conveyor(_) => flow[inst.destination.index(w)],
        _ => Rate::zero(),
    };
    let starved = (0..n)
        .filter(|&i| matches!(kind(i), TileKind::Inserter(_)) && flow[i].is_zero())
        .map(coord)
        .collect();
    let production: Vec<(GridCoord, Rate)> =
        placements.iter().zip(&prod).map(|(p, &r)| (p.anchor, r)).collect();
    let utilization = placements
        .iter()
        .zip(&prod)
        .map(|(p, &r)| {
            let full = inst.recipe_for(p.recipe).map_or(1, |r| r.rate.max(1)) as i64;
            (p.anchor, r / Rate::from_integer(full))
        })
        .collect();
    Ok(FlowReport {
        tile_rates,
        production,
        utilization,
        delivered_rate,
        predicted_rate: bp.predicted_rate,
        starved,
        iterations,
    })
}
