use std::fmt;
use std::sync::Arc;

use super::store::{Conflict, PropResult, Store};
use super::Var;

/// Signals that propagation emptied a domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wipeout;

impl From<Conflict> for Wipeout {
    fn from(_: Conflict) -> Self {
        Wipeout
    }
}

/// Domain access for global propagators.
pub struct Domains<'a> {
    store: &'a mut Store,
}

impl Domains<'_> {
    pub fn contains(&self, v: Var, value: i32) -> bool {
        self.store.contains(v.0, value)
    }

    pub fn min(&self, v: Var) -> i32 {
        self.store.min(v.0)
    }

    pub fn max(&self, v: Var) -> i32 {
        self.store.max(v.0)
    }

    pub fn is_fixed(&self, v: Var) -> bool {
        self.store.is_fixed(v.0)
    }

    /// `Ok(true)` if the domain changed.
    pub fn remove(&mut self, v: Var, value: i32) -> Result<bool, Wipeout> {
        Ok(self.store.remove(v.0, value)?)
    }

    pub fn assign(&mut self, v: Var, value: i32) -> Result<bool, Wipeout> {
        Ok(self.store.assign(v.0, value)?)
    }

    pub fn set_min(&mut self, v: Var, value: i32) -> Result<bool, Wipeout> {
        Ok(self.store.set_min(v.0, value)?)
    }

    pub fn set_max(&mut self, v: Var, value: i32) -> Result<bool, Wipeout> {
        Ok(self.store.set_max(v.0, value)?)
    }
}

/// A problem-specific propagator. It runs after the built-in ones whenever
/// one of its variables changes, and must be monotone: pruning only values
/// that no solution extending the current domains can take.
pub trait Propagator: Send + Sync {
    fn vars(&self) -> Vec<Var>;
    fn propagate(&self, d: &mut Domains<'_>) -> Result<(), Wipeout>;
    /// Ground check on concrete values.
    fn holds(&self, value: &dyn Fn(Var) -> i32) -> bool;
}

/// Shared handle to a [`Propagator`]; equality is identity.
#[derive(Clone)]
pub struct Global(pub Arc<dyn Propagator>);

impl fmt::Debug for Global {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Global({} vars)", self.0.vars().len())
    }
}

impl PartialEq for Global {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// An atomic condition on one variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lit {
    Eq(Var, i32),
    Ne(Var, i32),
    Ge(Var, i32),
    Le(Var, i32),
}

impl Lit {
    /// `b = 1` for a 0/1 variable.
    pub fn is_true(b: Var) -> Lit {
        Lit::Eq(b, 1)
    }

    pub fn is_false(b: Var) -> Lit {
        Lit::Eq(b, 0)
    }

    pub fn var(self) -> Var {
        match self {
            Lit::Eq(v, _) | Lit::Ne(v, _) | Lit::Ge(v, _) | Lit::Le(v, _) => v,
        }
    }

    pub fn negate(self) -> Lit {
        match self {
            Lit::Eq(v, c) => Lit::Ne(v, c),
            Lit::Ne(v, c) => Lit::Eq(v, c),
            Lit::Ge(v, c) => Lit::Le(v, c - 1),
            Lit::Le(v, c) => Lit::Ge(v, c + 1),
        }
    }

    pub fn holds(self, value: i32) -> bool {
        match self {
            Lit::Eq(_, c) => value == c,
            Lit::Ne(_, c) => value != c,
            Lit::Ge(_, c) => value >= c,
            Lit::Le(_, c) => value <= c,
        }
    }

    pub(crate) fn entailed(self, s: &Store) -> bool {
        let v = self.var().0;
        match self {
            Lit::Eq(_, c) => s.is_fixed(v) && s.min(v) == c,
            Lit::Ne(_, c) => !s.contains(v, c),
            Lit::Ge(_, c) => s.min(v) >= c,
            Lit::Le(_, c) => s.max(v) <= c,
        }
    }

    pub(crate) fn disentailed(self, s: &Store) -> bool {
        self.negate().entailed(s)
    }

    pub(crate) fn enforce(self, s: &mut Store) -> Result<bool, Conflict> {
        let v = self.var().0;
        match self {
            Lit::Eq(_, c) => s.assign(v, c),
            Lit::Ne(_, c) => s.remove(v, c),
            Lit::Ge(_, c) => s.set_min(v, c),
            Lit::Le(_, c) => s.set_max(v, c),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

/// The constraint catalog.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// `Σ coef·var (cmp) rhs`
    Linear {
        terms: Vec<(i64, Var)>,
        cmp: Cmp,
        rhs: i64,
    },
    /// `cond → Σ coef·var (cmp) rhs`
    HalfLinear {
        cond: Lit,
        terms: Vec<(i64, Var)>,
        cmp: Cmp,
        rhs: i64,
    },
    /// `b ↔ x = value`
    ReifEq { b: Var, x: Var, value: i32 },
    /// `b ↔ x > value`
    ReifGt { b: Var, x: Var, value: i32 },
    /// `a → b`
    Implies(Lit, Lit),
    /// At least one literal holds.
    Clause(Vec<Lit>),
    /// `result = array[index]` over a constant array (0-based index).
    Element {
        index: Var,
        array: Vec<i32>,
        result: Var,
    },
    /// `xs <lex ys` (strict) or `xs ≤lex ys`.
    Lex {
        xs: Vec<Var>,
        ys: Vec<Var>,
        strict: bool,
    },
    /// Non-zero values pairwise distinct.
    AllDifferentExcept0(Vec<Var>),
    /// The tuple of values is one of `tuples`.
    Table { vars: Vec<Var>, tuples: Vec<Vec<i32>> },
    Global(Global),
}

impl Constraint {
    pub fn le(terms: Vec<(i64, Var)>, rhs: i64) -> Self {
        Constraint::Linear {
            terms,
            cmp: Cmp::Le,
            rhs,
        }
    }

    pub fn eq(terms: Vec<(i64, Var)>, rhs: i64) -> Self {
        Constraint::Linear {
            terms,
            cmp: Cmp::Eq,
            rhs,
        }
    }

    pub fn ge(terms: Vec<(i64, Var)>, rhs: i64) -> Self {
        Constraint::Linear {
            terms,
            cmp: Cmp::Ge,
            rhs,
        }
    }

    /// `x < y`
    pub fn less(x: Var, y: Var) -> Self {
        Constraint::le(vec![(1, x), (-1, y)], -1)
    }

    pub fn fix(x: Var, value: i32) -> Self {
        Constraint::Clause(vec![Lit::Eq(x, value)])
    }

    pub fn implies_le(cond: Lit, terms: Vec<(i64, Var)>, rhs: i64) -> Self {
        Constraint::HalfLinear {
            cond,
            terms,
            cmp: Cmp::Le,
            rhs,
        }
    }

    pub fn implies_eq(cond: Lit, terms: Vec<(i64, Var)>, rhs: i64) -> Self {
        Constraint::HalfLinear {
            cond,
            terms,
            cmp: Cmp::Eq,
            rhs,
        }
    }

    pub fn implies_ge(cond: Lit, terms: Vec<(i64, Var)>, rhs: i64) -> Self {
        Constraint::HalfLinear {
            cond,
            terms,
            cmp: Cmp::Ge,
            rhs,
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        match self {
            Constraint::Linear { terms, .. } => terms.iter().map(|t| t.1).collect(),
            Constraint::HalfLinear { cond, terms, .. } => {
                std::iter::once(cond.var()).chain(terms.iter().map(|t| t.1)).collect()
            }
            Constraint::ReifEq { b, x, .. } | Constraint::ReifGt { b, x, .. } => vec![*b, *x],
            Constraint::Implies(a, b) => vec![a.var(), b.var()],
            Constraint::Clause(lits) => lits.iter().map(|l| l.var()).collect(),
            Constraint::Element { index, result, .. } => vec![*index, *result],
            Constraint::Lex { xs, ys, .. } => xs.iter().chain(ys).copied().collect(),
            Constraint::AllDifferentExcept0(vs) | Constraint::Table { vars: vs, .. } => vs.clone(),
            Constraint::Global(g) => g.0.vars(),
        }
    }

    /// Ground check on concrete values, independent of propagation.
    pub fn holds(&self, value: impl Fn(Var) -> i32) -> bool {
        let sum = |terms: &[(i64, Var)]| terms.iter().map(|&(c, v)| c * value(v) as i64).sum::<i64>();
        let cmp_ok = |lhs: i64, cmp: Cmp, rhs: i64| match cmp {
            Cmp::Le => lhs <= rhs,
            Cmp::Eq => lhs == rhs,
            Cmp::Ge => lhs >= rhs,
        };
        let lit = |l: Lit| l.holds(value(l.var()));
        match self {
            Constraint::Linear { terms, cmp, rhs } => cmp_ok(sum(terms), *cmp, *rhs),
            Constraint::HalfLinear {
                cond,
                terms,
                cmp,
                rhs,
            } => !lit(*cond) || cmp_ok(sum(terms), *cmp, *rhs),
            Constraint::ReifEq { b, x, value: c } => (value(*b) == 1) == (value(*x) == *c),
            Constraint::ReifGt { b, x, value: c } => (value(*b) == 1) == (value(*x) > *c),
            Constraint::Implies(a, b) => !lit(*a) || lit(*b),
            Constraint::Clause(lits) => lits.iter().any(|&l| lit(l)),
            Constraint::Element {
                index,
                array,
                result,
            } => {
                let i = value(*index);
                i >= 0 && (i as usize) < array.len() && array[i as usize] == value(*result)
            }
            Constraint::Lex { xs, ys, strict } => {
                let a: Vec<i32> = xs.iter().map(|&v| value(v)).collect();
                let b: Vec<i32> = ys.iter().map(|&v| value(v)).collect();
                if *strict {
                    a < b
                } else {
                    a <= b
                }
            }
            Constraint::AllDifferentExcept0(vs) => {
                let mut seen: Vec<i32> = vs.iter().map(|&v| value(v)).filter(|&x| x != 0).collect();
                let n = seen.len();
                seen.sort_unstable();
                seen.dedup();
                seen.len() == n
            }
            Constraint::Table { vars, tuples } => {
                let row: Vec<i32> = vars.iter().map(|&v| value(v)).collect();
                tuples.contains(&row)
            }
            Constraint::Global(g) => g.0.holds(&value),
        }
    }
}

/// Lowered, propagation-ready form.
#[derive(Clone, Debug)]
pub(crate) enum Prop {
    /// Σ ≤ rhs
    Linear { terms: Vec<(i64, u32)>, rhs: i64 },
    /// cond → Σ ≤ rhs
    HalfLinear {
        cond: Lit,
        terms: Vec<(i64, u32)>,
        rhs: i64,
    },
    Clause(Vec<Lit>),
    Element {
        index: u32,
        array: Vec<i32>,
        result: u32,
    },
    Lex {
        xs: Vec<u32>,
        ys: Vec<u32>,
        strict: bool,
    },
    AllDiff0(Vec<u32>),
    Table {
        vars: Vec<u32>,
        tuples: Vec<i32>,
        arity: usize,
    },
    /// Branch-and-bound cut: Σ ≤ the solver's current bound.
    Objective { terms: Vec<(i64, u32)> },
    Global(Global),
}

impl Prop {
    pub(crate) fn vars(&self) -> Vec<u32> {
        match self {
            Prop::Linear { terms, .. } | Prop::Objective { terms } => terms.iter().map(|t| t.1).collect(),
            Prop::HalfLinear { cond, terms, .. } => std::iter::once(cond.var().0)
                .chain(terms.iter().map(|t| t.1))
                .collect(),
            Prop::Clause(lits) => lits.iter().map(|l| l.var().0).collect(),
            Prop::Element { index, result, .. } => vec![*index, *result],
            Prop::Lex { xs, ys, .. } => xs.iter().chain(ys).copied().collect(),
            Prop::AllDiff0(vs) | Prop::Table { vars: vs, .. } => vs.clone(),
            Prop::Global(g) => g.0.vars().into_iter().map(|v| v.0).collect(),
        }
    }
}

fn negate_terms(terms: &[(i64, Var)]) -> Vec<(i64, u32)> {
    terms.iter().map(|&(c, v)| (-c, v.0)).collect()
}

fn raw_terms(terms: &[(i64, Var)]) -> Vec<(i64, u32)> {
    terms.iter().map(|&(c, v)| (c, v.0)).collect()
}

/// Lowers a catalog constraint into propagators.
pub(crate) fn lower(c: &Constraint) -> Vec<Prop> {
    match c {
        Constraint::Linear { terms, cmp, rhs } => match cmp {
            Cmp::Le => vec![Prop::Linear {
                terms: raw_terms(terms),
                rhs: *rhs,
            }],
            Cmp::Ge => vec![Prop::Linear {
                terms: negate_terms(terms),
                rhs: -rhs,
            }],
            Cmp::Eq => vec![
                Prop::Linear {
                    terms: raw_terms(terms),
                    rhs: *rhs,
                },
                Prop::Linear {
                    terms: negate_terms(terms),
                    rhs: -rhs,
                },
            ],
        },
        Constraint::HalfLinear {
            cond,
            terms,
            cmp,
            rhs,
        } => {
            let le = || Prop::HalfLinear {
                cond: *cond,
                terms: raw_terms(terms),
                rhs: *rhs,
            };
            let ge = || Prop::HalfLinear {
                cond: *cond,
                terms: negate_terms(terms),
                rhs: -rhs,
            };
            match cmp {
                Cmp::Le => vec![le()],
                Cmp::Ge => vec![ge()],
                Cmp::Eq => vec![le(), ge()],
            }
        }
        Constraint::ReifEq { b, x, value } => vec![
            Prop::Clause(vec![Lit::is_false(*b), Lit::Eq(*x, *value)]),
            Prop::Clause(vec![Lit::is_true(*b), Lit::Ne(*x, *value)]),
            Prop::Clause(vec![Lit::Le(*b, 1)]),
            Prop::Clause(vec![Lit::Ge(*b, 0)]),
        ],
        Constraint::ReifGt { b, x, value } => vec![
            Prop::Clause(vec![Lit::is_false(*b), Lit::Ge(*x, value + 1)]),
            Prop::Clause(vec![Lit::is_true(*b), Lit::Le(*x, *value)]),
            Prop::Clause(vec![Lit::Le(*b, 1)]),
            Prop::Clause(vec![Lit::Ge(*b, 0)]),
        ],
        Constraint::Implies(a, b) => vec![Prop::Clause(vec![a.negate(), *b])],
        Constraint::Clause(lits) => vec![Prop::Clause(lits.clone())],
        Constraint::Element {
            index,
            array,
            result,
        } => vec![Prop::Element {
            index: index.0,
            array: array.clone(),
            result: result.0,
        }],
        Constraint::Lex { xs, ys, strict } => vec![Prop::Lex {
            xs: xs.iter().map(|v| v.0).collect(),
            ys: ys.iter().map(|v| v.0).collect(),
            strict: *strict,
        }],
        Constraint::AllDifferentExcept0(vs) => vec![Prop::AllDiff0(vs.iter().map(|v| v.0).collect())],
        Constraint::Table { vars, tuples } => vec![Prop::Table {
            vars: vars.iter().map(|v| v.0).collect(),
            tuples: tuples.iter().flatten().copied().collect(),
            arity: vars.len(),
        }],
        Constraint::Global(g) => vec![Prop::Global(g.clone())],
    }
}

#[inline]
fn term_min(s: &Store, c: i64, v: u32) -> i64 {
    if c >= 0 {
        c * s.min(v) as i64
    } else {
        c * s.max(v) as i64
    }
}

fn floor_div(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -floor_div(-a, b)
}

fn clamp_i32(x: i64) -> i32 {
    x.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// Bounds consistency for `Σ c·x ≤ rhs`. One pass suffices: tightening a
/// term never changes its own contribution to the minimum.
fn propagate_le(s: &mut Store, terms: &[(i64, u32)], rhs: i64) -> PropResult {
    let min_sum: i64 = terms.iter().map(|&(c, v)| term_min(s, c, v)).sum();
    if min_sum > rhs {
        return Err(Conflict);
    }
    for &(c, v) in terms {
        if c == 0 {
            continue;
        }
        let slack = rhs - (min_sum - term_min(s, c, v));
        if c > 0 {
            s.set_max(v, clamp_i32(floor_div(slack, c)))?;
        } else {
            s.set_min(v, clamp_i32(ceil_div(slack, c)))?;
        }
    }
    Ok(())
}

pub(crate) fn propagate(p: &Prop, s: &mut Store, objective_bound: i64) -> PropResult {
    match p {
        Prop::Linear { terms, rhs } => propagate_le(s, terms, *rhs),
        Prop::Objective { terms } => {
            if objective_bound == i64::MAX {
                Ok(())
            } else {
                propagate_le(s, terms, objective_bound)
            }
        }
        Prop::HalfLinear { cond, terms, rhs } => {
            if cond.entailed(s) {
                propagate_le(s, terms, *rhs)
            } else if cond.disentailed(s) {
                Ok(())
            } else {
                let min_sum: i64 = terms.iter().map(|&(c, v)| term_min(s, c, v)).sum();
                if min_sum > *rhs {
                    cond.negate().enforce(s)?;
                }
                Ok(())
            }
        }
        Prop::Clause(lits) => {
            let mut open = None;
            let mut open_count = 0;
            for &l in lits {
                if l.entailed(s) {
                    return Ok(());
                }
                if !l.disentailed(s) {
                    open_count += 1;
                    open = Some(l);
                    if open_count > 1 {
                        return Ok(());
                    }
                }
            }
            match open {
                None => Err(Conflict),
                Some(l) => l.enforce(s).map(|_| ()),
            }
        }
        Prop::Element {
            index,
            array,
            result,
        } => {
            let (idx, res) = (*index, *result);
            s.set_min(idx, 0)?;
            s.set_max(idx, array.len() as i32 - 1)?;
            let mut supported: Vec<i32> = Vec::new();
            for i in s.values(idx) {
                let val = array[i as usize];
                if s.contains(res, val) {
                    supported.push(val);
                } else {
                    s.remove(idx, i)?;
                }
            }
            supported.sort_unstable();
            for val in s.values(res) {
                if supported.binary_search(&val).is_err() {
                    s.remove(res, val)?;
                }
            }
            Ok(())
        }
        Prop::AllDiff0(vars) => {
            // Forward checking; repeat while new assignments appear.
            loop {
                let mut changed = false;
                for (i, &v) in vars.iter().enumerate() {
                    if !s.is_fixed(v) || s.min(v) == 0 {
                        continue;
                    }
                    let val = s.min(v);
                    for (j, &w) in vars.iter().enumerate() {
                        if i != j && s.remove(w, val)? && s.is_fixed(w) {
                            changed = true;
                        }
                    }
                }
                if !changed {
                    return Ok(());
                }
            }
        }
        Prop::Lex { xs, ys, strict } => propagate_lex(s, xs, ys, *strict),
        Prop::Global(g) => g.0.propagate(&mut Domains { store: s }).map_err(|_| Conflict),
        Prop::Table {
            vars,
            tuples,
            arity,
        } => propagate_table(s, vars, tuples, *arity),
    }
}

fn propagate_lex(s: &mut Store, xs: &[u32], ys: &[u32], strict: bool) -> PropResult {
    let n = xs.len().min(ys.len());
    let mut i = 0;
    loop {
        while i < n && s.is_fixed(xs[i]) && s.is_fixed(ys[i]) && s.min(xs[i]) == s.min(ys[i]) {
            i += 1;
        }
        if i == n {
            // Equal on the common prefix; a shorter xs is smaller.
            let less = xs.len() < ys.len();
            let greater = xs.len() > ys.len();
            return if greater || (strict && !less) {
                Err(Conflict)
            } else {
                Ok(())
            };
        }
        let (x, y) = (xs[i], ys[i]);
        if s.max(x) < s.min(y) {
            return Ok(());
        }
        // Last position of an equal-length strict comparison must be strict.
        let tight = strict && i + 1 == n && xs.len() == ys.len();
        if tight {
            s.set_max(x, s.max(y) - 1)?;
            s.set_min(y, s.min(x) + 1)?;
        } else {
            s.set_max(x, s.max(y))?;
            s.set_min(y, s.min(x))?;
        }
        if !(s.is_fixed(x) && s.is_fixed(y) && s.min(x) == s.min(y)) {
            return Ok(());
        }
    }
}

fn propagate_table(s: &mut Store, vars: &[u32], tuples: &[i32], arity: usize) -> PropResult {
    let mut supports: Vec<Vec<i32>> = vec![Vec::new(); arity];
    let mut any = false;
    for t in tuples.chunks(arity) {
        if t.iter().zip(vars).all(|(&val, &v)| s.contains(v, val)) {
            any = true;
            for (k, &val) in t.iter().enumerate() {
                supports[k].push(val);
            }
        }
    }
    if !any {
        return Err(Conflict);
    }
    for (k, &v) in vars.iter().enumerate() {
        let sup = &mut supports[k];
        sup.sort_unstable();
        sup.dedup();
        if sup.len() as u32 == s.size(v) {
            continue;
        }
        for val in s.values(v) {
            if sup.binary_search(&val).is_err() {
                s.remove(v, val)?;
            }
        }
    }
    Ok(())
}
