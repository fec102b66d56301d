//! Global pruning for the layout model: every transport object carrying
//! item `j` lies on a feed path from a start of `j` to a sink of `j`.
//! Paths run over (tile, state) pairs, so a tile cannot be entered as a
//! conveyor and left as an inserter.

use crate::fdsolver::{Domains, Propagator, Var, Wipeout};

/// A free tile with its candidate non-empty states.
#[derive(Clone, Debug)]
pub(super) struct ReachTile {
    pub state: Var,
    pub carry: Var,
    /// (state value, items it may start a route with, items it may end one with).
    pub values: Vec<(i32, u64, u64)>,
}

/// A feed indicator and the (from tile, from value, to tile, to value)
/// combinations that make it true.
pub(super) type Link = (Var, Vec<(usize, i32, usize, i32)>);

#[derive(Clone, Debug)]
pub(super) struct Reachability {
    num_items: u32,
    tiles: Vec<ReachTile>,
    /// Node = (tile, index into its values).
    node_tile: Vec<usize>,
    node_value: Vec<i32>,
    start: Vec<u64>,
    sink: Vec<u64>,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
    /// Feed indicator with the node pairs that realise it.
    feeds: Vec<(Var, Vec<(usize, usize)>)>,
}

impl Reachability {
    pub fn new(num_items: u32, tiles: Vec<ReachTile>, links: Vec<Link>) -> Self {
        let mut node_tile = Vec::new();
        let mut node_value = Vec::new();
        let mut start = Vec::new();
        let mut sink = Vec::new();
        let mut base = Vec::with_capacity(tiles.len());
        for (k, t) in tiles.iter().enumerate() {
            base.push(node_tile.len());
            for &(v, s, e) in &t.values {
                node_tile.push(k);
                node_value.push(v);
                start.push(s);
                sink.push(e);
            }
        }
        let node = |k: usize, v: i32| tiles[k].values.iter().position(|x| x.0 == v).map(|p| base[k] + p);
        let n = node_tile.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        let mut feeds = Vec::new();
        for (f, combos) in links {
            let mut pairs = Vec::new();
            for (u, a, t, b) in combos {
                let (Some(x), Some(y)) = (node(u, a), node(t, b)) else { continue };
                out[x].push(y);
                inc[y].push(x);
                pairs.push((x, y));
            }
            feeds.push((f, pairs));
        }
        Self {
            num_items,
            tiles,
            node_tile,
            node_value,
            start,
            sink,
            out,
            inc,
            feeds,
        }
    }

    /// Nodes on some start→sink path of `item`, given which nodes may
    /// currently carry it.
    fn alive(&self, item: u32, usable: &[bool]) -> Vec<bool> {
        let bit = 1u64 << item;
        let n = self.node_tile.len();
        let mut fwd = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&x| usable[x] && self.start[x] & bit != 0).collect();
        for &x in &stack {
            fwd[x] = true;
        }
        while let Some(x) = stack.pop() {
            for &y in &self.out[x] {
                if !fwd[y] && usable[y] {
                    fwd[y] = true;
                    stack.push(y);
                }
            }
        }
        let mut bwd = vec![false; n];
        for x in 0..n {
            if fwd[x] && self.sink[x] & bit != 0 {
                bwd[x] = true;
                stack.push(x);
            }
        }
        while let Some(y) = stack.pop() {
            for &x in &self.inc[y] {
                if !bwd[x] && fwd[x] {
                    bwd[x] = true;
                    stack.push(x);
                }
            }
        }
        bwd
    }

    /// Items each node can carry on a complete path.
    fn alive_masks(&self, state_has: impl Fn(usize, i32) -> bool, carry_has: impl Fn(usize, u32) -> bool) -> Vec<u64> {
        let n = self.node_tile.len();
        let present: Vec<bool> = (0..n).map(|x| state_has(self.node_tile[x], self.node_value[x])).collect();
        let mut masks = vec![0u64; n];
        for item in 1..=self.num_items {
            let usable: Vec<bool> = (0..n).map(|x| present[x] && carry_has(self.node_tile[x], item)).collect();
            for (x, a) in self.alive(item, &usable).into_iter().enumerate() {
                if a {
                    masks[x] |= 1 << item;
                }
            }
        }
        masks
    }
}

impl Propagator for Reachability {
    fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.tiles.iter().flat_map(|t| [t.state, t.carry]).collect();
        v.extend(self.feeds.iter().map(|f| f.0));
        v
    }

    fn propagate(&self, d: &mut Domains<'_>) -> Result<(), Wipeout> {
        let masks = {
            let dd = &*d;
            self.alive_masks(
                |k, v| dd.contains(self.tiles[k].state, v),
                |k, j| dd.contains(self.tiles[k].carry, j as i32),
            )
        };
        let mut tile_mask = vec![0u64; self.tiles.len()];
        for (x, &m) in masks.iter().enumerate() {
            let k = self.node_tile[x];
            tile_mask[k] |= m;
            if m == 0 {
                d.remove(self.tiles[k].state, self.node_value[x])?;
            }
        }
        for (k, t) in self.tiles.iter().enumerate() {
            for j in 1..=self.num_items {
                if tile_mask[k] & (1 << j) == 0 {
                    d.remove(t.carry, j as i32)?;
                }
            }
        }
        for (f, pairs) in &self.feeds {
            if !pairs.iter().any(|&(x, y)| masks[x] & masks[y] != 0) {
                d.remove(*f, 1)?;
            }
        }
        Ok(())
    }

    fn holds(&self, value: &dyn Fn(Var) -> i32) -> bool {
        let masks = self.alive_masks(
            |k, v| value(self.tiles[k].state) == v,
            |k, j| value(self.tiles[k].carry) == j as i32,
        );
        (0..self.node_tile.len()).all(|x| {
            let k = self.node_tile[x];
            value(self.tiles[k].state) != self.node_value[x] || masks[x] != 0
        })
    }
}
