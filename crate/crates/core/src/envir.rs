//! Downward-closed feasibility environments.
//!
//! A realized set system is stored by its antichain of maximal feasible sets;
//! the feasible family is the downward closure. Symmetric systems (every set
//! of at most `k` slots) get a closed-form representation so that digital
//! goods and multi-unit instances scale to hundreds of agents.
//!
//! Slots and agents are 0-based throughout. In a permuted environment the
//! realized system is composed with a uniformly random bijection between
//! agents and slots; a [`Support`] is always expressed in agent coordinates.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::revcurve::Allocation;
use crate::seeds::{derive_seed, rng_from_seed};
use crate::Mode;

/// Largest slot count for which the feasible family is enumerated.
pub const MAX_ENUMERATED_SLOTS: usize = 20;
/// Largest slot count for which all permutations are enumerated exactly.
pub const MAX_PERMUTED_SLOTS: usize = 8;
const MAX_MATERIALIZED_SETS: u128 = 1 << 20;

/// Tie tolerance for comparing set weights built from `w`.
pub(crate) fn weight_tolerance(w: &[f64]) -> f64 {
    1e-9 * w.iter().fold(1.0_f64, |acc, x| acc + x.abs())
}

/// Zero the service probability of every slot whose weight is zero (within
/// the tie tolerance). Such slots tie with leaving them out, and a served
/// zero-weight agent lowers every other agent's threshold.
pub(crate) fn drop_null_weights(w: &[f64], x: &mut [f64]) {
    let tol = weight_tolerance(w);
    for (xi, wi) in x.iter_mut().zip(w) {
        if *wi <= tol {
            *xi = 0.0;
        }
    }
}

/// A realized downward-closed set system over `n` slots.
#[derive(Clone, Debug)]
pub struct SetSystemRealization {
    n: usize,
    repr: Repr,
}

#[derive(Clone, Debug)]
enum Repr {
    /// Every set of at most `k` slots.
    Uniform { k: usize },
    /// Antichain of maximal sets as bitmasks; the closure is cached on demand.
    Antichain {
        maximal: Vec<u64>,
        closure: OnceLock<Vec<u64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum RealizationKey {
    Uniform(usize),
    Sets(Vec<u64>),
}

impl PartialEq for SetSystemRealization {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.key() == other.key()
    }
}

impl SetSystemRealization {
    /// Build from a list of feasible sets; non-maximal and duplicate entries
    /// are dropped so the stored family is an antichain. An empty list means
    /// only the empty set is feasible.
    pub fn new(n: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("set system needs at least one slot"));
        }
        if n > 64 {
            return Err(Error::capacity(format!(
                "explicit set systems support at most 64 slots, got {n}"
            )));
        }
        let mut masks = Vec::with_capacity(sets.len().max(1));
        for set in &sets {
            masks.push(mask_of(n, set)?);
        }
        if masks.is_empty() {
            masks.push(0);
        }
        masks.sort_unstable();
        masks.dedup();
        let maximal: Vec<u64> = masks
            .iter()
            .copied()
            .filter(|&m| !masks.iter().any(|&o| o != m && o & m == m))
            .collect();
        let full = full_mask(n);
        if maximal == [full] {
            return Ok(Self::uniform(n, n));
        }
        Ok(Self {
            n,
            repr: Repr::Antichain {
                maximal,
                closure: OnceLock::new(),
            },
        })
    }

    /// The system in which every set of at most `k` slots is feasible.
    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            n,
            repr: Repr::Uniform { k: k.min(n) },
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Maximal feasible sets as sorted slot lists, in lexicographic mask order.
    pub fn maximal_sets(&self) -> Result<Vec<Vec<usize>>> {
        match &self.repr {
            Repr::Uniform { k } => {
                if binomial_u128(self.n, *k) > MAX_MATERIALIZED_SETS {
                    return Err(Error::capacity(format!(
                        "C({}, {}) maximal sets is too many to list",
                        self.n, k
                    )));
                }
                let mut out = Vec::new();
                let mut current = Vec::with_capacity(*k);
                combinations(self.n, *k, 0, &mut current, &mut out);
                Ok(out)
            }
            Repr::Antichain { maximal, .. } => Ok(maximal.iter().map(|&m| slots_of(m)).collect()),
        }
    }

    /// True iff `set` lies inside some maximal set.
    pub fn is_feasible(&self, set: &[usize]) -> Result<bool> {
        for &s in set {
            if s >= self.n {
                return Err(Error::input(format!(
                    "slot {s} out of range for a system over {} slots",
                    self.n
                )));
            }
        }
        match &self.repr {
            Repr::Uniform { k } => {
                let mut sorted = set.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                Ok(sorted.len() <= *k)
            }
            Repr::Antichain { maximal, .. } => {
                let m = mask_of(self.n, set)?;
                Ok(maximal.iter().any(|&x| x & m == m))
            }
        }
    }

    pub(crate) fn singleton_feasible(&self, slot: usize) -> bool {
        match &self.repr {
            Repr::Uniform { k } => *k >= 1,
            Repr::Antichain { maximal, .. } => maximal.iter().any(|&x| x >> slot & 1 == 1),
        }
    }

    /// Relabel slot `s` as `perm[s]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        debug_assert_eq!(perm.len(), self.n);
        match &self.repr {
            Repr::Uniform { .. } => self.clone(),
            Repr::Antichain { maximal, .. } => {
                let mut relabeled: Vec<u64> = maximal
                    .iter()
                    .map(|&m| {
                        let mut out = 0u64;
                        for (s, &to) in perm.iter().enumerate() {
                            if m >> s & 1 == 1 {
                                out |= 1 << to;
                            }
                        }
                        out
                    })
                    .collect();
                relabeled.sort_unstable();
                Self {
                    n: self.n,
                    repr: Repr::Antichain {
                        maximal: relabeled,
                        closure: OnceLock::new(),
                    },
                }
            }
        }
    }

    fn key(&self) -> RealizationKey {
        match &self.repr {
            Repr::Uniform { k } => RealizationKey::Uniform(*k),
            Repr::Antichain { maximal, .. } => RealizationKey::Sets(maximal.clone()),
        }
    }

    fn closure(&self) -> Result<&[u64]> {
        match &self.repr {
            Repr::Uniform { .. } => unreachable!("uniform systems use closed forms"),
            Repr::Antichain { maximal, closure } => {
                if self.n > MAX_ENUMERATED_SLOTS {
                    return Err(Error::capacity(format!(
                        "feasible-set enumeration limited to {MAX_ENUMERATED_SLOTS} slots, got {}",
                        self.n
                    )));
                }
                Ok(closure.get_or_init(|| {
                    let mut seen = vec![false; 1usize << self.n];
                    for &m in maximal {
                        let mut sub = m;
                        loop {
                            seen[sub as usize] = true;
                            if sub == 0 {
                                break;
                            }
                            sub = (sub - 1) & m;
                        }
                    }
                    seen.iter()
                        .enumerate()
                        .filter_map(|(m, &f)| f.then_some(m as u64))
                        .collect()
                }))
            }
        }
    }

    /// Probability that each slot is selected when a maximum-weight feasible
    /// set is drawn uniformly among all maximum-weight feasible sets.
    pub fn tie_allocation(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_weights(w)?;
        let tol = weight_tolerance(w);
        match &self.repr {
            Repr::Uniform { k } => Ok(uniform_tie_allocation(*k, w, tol)),
            Repr::Antichain { .. } => {
                let argmax = self.argmax_masks(w, tol)?;
                let mut x = vec![0.0; self.n];
                let share = 1.0 / argmax.len() as f64;
                for m in &argmax {
                    for (s, xs) in x.iter_mut().enumerate() {
                        if m >> s & 1 == 1 {
                            *xs += share;
                        }
                    }
                }
                Ok(x)
            }
        }
    }

    /// Draw one maximum-weight feasible set uniformly among all of them.
    pub(crate) fn maximize<R: Rng>(&self, w: &[f64], rng: &mut R) -> Result<Vec<usize>> {
        self.check_weights(w)?;
        let tol = weight_tolerance(w);
        match &self.repr {
            Repr::Uniform { k } => Ok(uniform_sample(*k, w, tol, rng)),
            Repr::Antichain { .. } => {
                let argmax = self.argmax_masks(w, tol)?;
                let pick = argmax[rng.gen_range(0..argmax.len())];
                Ok(slots_of(pick))
            }
        }
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.n {
            return Err(Error::input(format!(
                "{} weights for a system over {} slots",
                w.len(),
                self.n
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("weights must be finite"));
        }
        Ok(())
    }

    fn argmax_masks(&self, w: &[f64], tol: f64) -> Result<Vec<u64>> {
        let family = self.closure()?;
        let weight = |m: u64| {
            let mut total = 0.0;
            let mut bits = m;
            while bits != 0 {
                let s = bits.trailing_zeros() as usize;
                total += w[s];
                bits &= bits - 1;
            }
            total
        };
        let weights: Vec<f64> = family.iter().map(|&m| weight(m)).collect();
        let best = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(family
            .iter()
            .zip(&weights)
            .filter(|(_, &wt)| wt >= best - tol)
            .map(|(&m, _)| m)
            .collect())
    }
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn mask_of(n: usize, set: &[usize]) -> Result<u64> {
    let mut m = 0u64;
    for &s in set {
        if s >= n {
            return Err(Error::input(format!(
                "slot {s} out of range for a system over {n} slots"
            )));
        }
        m |= 1 << s;
    }
    Ok(m)
}

fn slots_of(m: u64) -> Vec<usize> {
    (0..64).filter(|s| m >> s & 1 == 1).collect()
}

fn combinations(
    n: usize,
    k: usize,
    start: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for s in start..n {
        if n - s < k - current.len() {
            break;
        }
        current.push(s);
        combinations(n, k, s + 1, current, out);
        current.pop();
    }
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > MAX_MATERIALIZED_SETS * 4 {
            return acc;
        }
    }
    acc
}

/// Split slots by weight sign under tolerance.
fn classify(w: &[f64], tol: f64) -> (Vec<usize>, Vec<usize>) {
    let mut positive: Vec<usize> = (0..w.len()).filter(|&s| w[s] > tol).collect();
    positive.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let zero = (0..w.len()).filter(|&s| w[s].abs() <= tol).collect();
    (positive, zero)
}

/// Log-weights `ln C(z, s)` for `s = 0..=limit`.
fn log_binomials(z: usize, limit: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(limit + 1);
    let mut acc = 0.0;
    out.push(acc);
    for s in 1..=limit {
        acc += ((z - s + 1) as f64).ln() - (s as f64).ln();
        out.push(acc);
    }
    out
}

/// When `p` positives fit under capacity `k`, argmax sets are the positives
/// plus any subset of the `z` zero-weight slots of size at most `k - p`.
/// Returns the (unnormalized, log-scaled) distribution of that subset's size.
fn zero_fill_size_weights(z: usize, limit: usize) -> Vec<f64> {
    let logs = log_binomials(z, limit);
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.iter().map(|l| (l - top).exp()).collect()
}

fn uniform_tie_allocation(k: usize, w: &[f64], tol: f64) -> Vec<f64> {
    let mut x = vec![0.0; w.len()];
    if k == 0 {
        return x;
    }
    let (positive, zero) = classify(w, tol);
    if positive.len() <= k {
        for &s in &positive {
            x[s] = 1.0;
        }
        let limit = zero.len().min(k - positive.len());
        if limit > 0 {
            // inclusion probability of one zero slot = E[size] / z
            let weights = zero_fill_size_weights(zero.len(), limit);
            let total: f64 = weights.iter().sum();
            let mean: f64 = weights
                .iter()
                .enumerate()
                .map(|(s, q)| s as f64 * q)
                .sum::<f64>()
                / total;
            let each = mean / zero.len() as f64;
            for &s in &zero {
                x[s] = each;
            }
        }
    } else {
        let threshold = w[positive[k - 1]];
        let above: Vec<usize> = positive
            .iter()
            .copied()
            .filter(|&s| w[s] > threshold + tol)
            .collect();
        let tied: Vec<usize> = positive
            .iter()
            .copied()
            .filter(|&s| (w[s] - threshold).abs() <= tol)
            .collect();
        for &s in &above {
            x[s] = 1.0;
        }
        let each = (k - above.len()) as f64 / tied.len() as f64;
        for &s in &tied {
            x[s] = each;
        }
    }
    x
}

fn uniform_sample<R: Rng>(k: usize, w: &[f64], tol: f64, rng: &mut R) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let (positive, mut zero) = classify(w, tol);
    let mut chosen;
    if positive.len() <= k {
        chosen = positive.clone();
        let limit = zero.len().min(k - positive.len());
        if limit > 0 {
            let weights = zero_fill_size_weights(zero.len(), limit);
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut size = limit;
            for (s, q) in weights.iter().enumerate() {
                if u < *q {
                    size = s;
                    break;
                }
                u -= q;
            }
            let (picked, _) = zero.partial_shuffle(rng, size);
            chosen.extend_from_slice(picked);
        }
    } else {
        let threshold = w[positive[k - 1]];
        chosen = positive
            .iter()
            .copied()
            .filter(|&s| w[s] > threshold + tol)
            .collect();
        let mut tied: Vec<usize> = positive
            .iter()
            .copied()
            .filter(|&s| (w[s] - threshold).abs() <= tol)
            .collect();
        let need = k - chosen.len();
        let (picked, _) = tied.partial_shuffle(rng, need);
        chosen.extend_from_slice(picked);
    }
    chosen.sort_unstable();
    chosen
}

/// Feasibility environment family.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvironmentKind {
    /// No constraint: every subset of the `n` agents is feasible.
    DigitalGoods { n: usize },
    /// At most `k` of the `n` agents may be served.
    KUnit { n: usize, k: usize },
    /// Agents are left vertices; right vertex `r` can absorb `capacities[r]`
    /// agents; `edges[i]` lists the right vertices agent `i` may use. Without
    /// `edges` the bipartite graph is complete.
    BipartiteMatching {
        n: usize,
        capacities: Vec<usize>,
        edges: Option<Vec<Vec<usize>>>,
    },
    /// A finite mixture of explicit set systems.
    Explicit {
        components: Vec<(f64, SetSystemRealization)>,
    },
}

/// A (possibly randomized, possibly permutation-symmetrized) downward-closed
/// environment.
#[derive(Debug)]
pub struct Environment {
    kind: EnvironmentKind,
    permuted: bool,
    base: Vec<(f64, SetSystemRealization)>,
    exact: OnceLock<Support>,
}

impl Clone for Environment {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind.clone(),
            permuted: self.permuted,
            base: self.base.clone(),
            exact: self.exact.clone(),
        }
    }
}

impl PartialEq for Environment {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.permuted == other.permuted
    }
}

impl Environment {
    pub fn new(kind: EnvironmentKind, permuted: bool) -> Result<Self> {
        let base = match &kind {
            EnvironmentKind::DigitalGoods { n } => {
                check_n(*n)?;
                vec![(1.0, SetSystemRealization::uniform(*n, *n))]
            }
            EnvironmentKind::KUnit { n, k } => {
                check_n(*n)?;
                vec![(1.0, SetSystemRealization::uniform(*n, *k))]
            }
            EnvironmentKind::BipartiteMatching {
                n,
                capacities,
                edges,
            } => {
                check_n(*n)?;
                vec![(1.0, matching_system(*n, capacities, edges.as_deref())?)]
            }
            EnvironmentKind::Explicit { components } => {
                if components.is_empty() {
                    return Err(Error::input("explicit environment needs a component"));
                }
                let n = components[0].1.n();
                let mut total = 0.0;
                for (w, sys) in components {
                    if sys.n() != n {
                        return Err(Error::input("mixture components disagree on slot count"));
                    }
                    if !(w.is_finite() && *w >= 0.0) {
                        return Err(Error::input("mixture weights must be nonnegative"));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::input(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
                components.clone()
            }
        };
        Ok(Self {
            kind,
            permuted,
            base,
            exact: OnceLock::new(),
        })
    }

    pub fn digital_goods(n: usize) -> Result<Self> {
        Self::new(EnvironmentKind::DigitalGoods { n }, false)
    }

    pub fn k_unit(n: usize, k: usize) -> Result<Self> {
        Self::new(EnvironmentKind::KUnit { n, k }, false)
    }

    pub fn explicit(components: Vec<(f64, SetSystemRealization)>, permuted: bool) -> Result<Self> {
        Self::new(EnvironmentKind::Explicit { components }, permuted)
    }

    /// A single deterministic system.
    pub fn single(system: SetSystemRealization, permuted: bool) -> Result<Self> {
        Self::explicit(vec![(1.0, system)], permuted)
    }

    pub fn kind(&self) -> &EnvironmentKind {
        &self.kind
    }

    pub fn permuted(&self) -> bool {
        self.permuted
    }

    pub fn n(&self) -> usize {
        self.base[0].1.n()
    }

    /// True when every realization is a closed-form uniform system, so exact
    /// evaluation scales to large `n`.
    pub fn is_symmetric_closed_form(&self) -> bool {
        self.base
            .iter()
            .all(|(_, s)| matches!(s.repr, Repr::Uniform { .. }))
    }

    /// Draw a realization (in agent coordinates) deterministically from `seed`.
    pub fn sample_realization(&self, seed: u64) -> SetSystemRealization {
        let mut rng = rng_from_seed(seed);
        self.sample_with(&mut rng)
    }

    fn sample_with<R: Rng>(&self, rng: &mut R) -> SetSystemRealization {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = &self.base[self.base.len() - 1].1;
        for (w, sys) in &self.base {
            acc += w;
            if u < acc {
                chosen = sys;
                break;
            }
        }
        if self.permuted && !matches!(chosen.repr, Repr::Uniform { .. }) {
            let mut perm: Vec<usize> = (0..chosen.n()).collect();
            perm.shuffle(rng);
            chosen.relabel(&perm)
        } else {
            chosen.clone()
        }
    }

    /// The distribution over realized systems used for expectations: exact
    /// (cached) enumeration, or an empirical distribution of sampled draws.
    pub fn support(&self, mode: Mode) -> Result<Support> {
        match mode {
            Mode::Exact => self.exact_support(),
            Mode::MonteCarlo { trials, seed } => {
                if trials == 0 {
                    return Err(Error::input("Monte-Carlo support needs at least one trial"));
                }
                let mut acc = SupportBuilder::new(self.n());
                let share = 1.0 / trials as f64;
                for t in 0..trials {
                    let sys = self.sample_realization(derive_seed(seed, t as u64));
                    acc.add(share, sys);
                }
                Ok(acc.finish())
            }
        }
    }

    /// Exact distribution over realized systems in agent coordinates.
    pub fn exact_support(&self) -> Result<Support> {
        if let Some(s) = self.exact.get() {
            return Ok(s.clone());
        }
        let n = self.n();
        let mut acc = SupportBuilder::new(n);
        for (w, sys) in &self.base {
            if *w == 0.0 {
                continue;
            }
            if !self.permuted || matches!(sys.repr, Repr::Uniform { .. }) {
                acc.add(*w, sys.clone());
                continue;
            }
            if n > MAX_PERMUTED_SLOTS {
                return Err(Error::capacity(format!(
                    "exact permutation enumeration limited to {MAX_PERMUTED_SLOTS} slots, got {n}"
                )));
            }
            let count = (1..=n).product::<usize>() as f64;
            let mut perm: Vec<usize> = (0..n).collect();
            loop {
                acc.add(w / count, sys.relabel(&perm));
                if !next_permutation(&mut perm) {
                    break;
                }
            }
        }
        let support = acc.finish();
        let _ = self.exact.set(support.clone());
        Ok(support)
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::input("environment needs at least one agent slot"))
    } else {
        Ok(())
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Maximal matchable agent sets of a capacitated bipartite graph. The family
/// is a transversal matroid, so the maximal sets are exactly the bases.
fn matching_system(
    n: usize,
    capacities: &[usize],
    edges: Option<&[Vec<usize>]>,
) -> Result<SetSystemRealization> {
    if n > MAX_ENUMERATED_SLOTS {
        return Err(Error::capacity(format!(
            "matching environments are enumerated; at most {MAX_ENUMERATED_SLOTS} agents"
        )));
    }
    if let Some(e) = edges {
        if e.len() != n {
            return Err(Error::input("edge list must have one entry per agent"));
        }
        if e.iter().flatten().any(|&r| r >= capacities.len()) {
            return Err(Error::input("edge refers to a missing right vertex"));
        }
    }
    // unit copies of each right vertex
    let copies: Vec<usize> = capacities
        .iter()
        .enumerate()
        .flat_map(|(r, &c)| std::iter::repeat_n(r, c))
        .collect();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..copies.len())
                .filter(|&c| edges.is_none_or(|e| e[i].contains(&copies[c])))
                .collect()
        })
        .collect();
    let matching_size = |mask: u64| -> usize {
        let mut owner: Vec<Option<usize>> = vec![None; copies.len()];
        let mut size = 0;
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            let mut seen = vec![false; copies.len()];
            if augment(i, &adj, &mut owner, &mut seen) {
                size += 1;
            }
        }
        size
    };
    let rank = matching_size(full_mask(n));
    let bases: Vec<Vec<usize>> = (0..1u64 << n)
        .filter(|&m| m.count_ones() as usize == rank && matching_size(m) == rank)
        .map(slots_of)
        .collect();
    SetSystemRealization::new(n, bases)
}

fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &c in &adj[i] {
        if seen[c] {
            continue;
        }
        seen[c] = true;
        if owner[c].is_none_or(|o| augment(o, adj, owner, seen)) {
            owner[c] = Some(i);
            return true;
        }
    }
    false
}

struct SupportBuilder {
    n: usize,
    index: HashMap<RealizationKey, usize>,
    atoms: Vec<(f64, SetSystemRealization)>,
}

impl SupportBuilder {
    fn new(n: usize) -> Self {
        Self {
            n,
            index: HashMap::new(),
            atoms: Vec::new(),
        }
    }

    fn add(&mut self, prob: f64, sys: SetSystemRealization) {
        let key = sys.key();
        match self.index.get(&key) {
            Some(&i) => self.atoms[i].0 += prob,
            None => {
                self.index.insert(key, self.atoms.len());
                self.atoms.push((prob, sys));
            }
        }
    }

    fn finish(self) -> Support {
        Support {
            n: self.n,
            atoms: Arc::new(self.atoms),
        }
    }
}

/// A finite distribution over realized set systems, in agent coordinates.
#[derive(Clone, Debug)]
pub struct Support {
    n: usize,
    atoms: Arc<Vec<(f64, SetSystemRealization)>>,
}

impl Support {
    /// The point mass on one realized system.
    pub fn single(system: SetSystemRealization) -> Self {
        Self {
            n: system.n(),
            atoms: Arc::new(vec![(1.0, system)]),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn atoms(&self) -> &[(f64, SetSystemRealization)] {
        &self.atoms
    }

    /// Per-agent service probability for the tie-uniform weight maximizer.
    pub fn allocation(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.n];
        for (prob, sys) in self.atoms.iter() {
            let part = sys.tie_allocation(w)?;
            for (xi, pi) in x.iter_mut().zip(part) {
                *xi += prob * pi;
            }
        }
        Ok(x)
    }

    /// Probability that `agent` alone is a feasible set.
    pub fn singleton_probability(&self, agent: usize) -> f64 {
        self.atoms
            .iter()
            .filter(|(_, s)| s.singleton_feasible(agent))
            .map(|(p, _)| p)
            .sum()
    }
}

/// Weights indexed by rank, non-increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("weights must be finite"));
        }
        let tol = weight_tolerance(&w);
        if w.windows(2).any(|p| p[0] < p[1] - tol) {
            return Err(Error::input("weights must be non-increasing by rank"));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Feasibility test for a realized system.
pub fn is_feasible(sys: &SetSystemRealization, set: &[usize]) -> Result<bool> {
    sys.is_feasible(set)
}

/// Draw a realization from the environment's mixture (and permutation).
pub fn sample_realization(env: &Environment, seed: u64) -> SetSystemRealization {
    env.sample_realization(seed)
}

/// A maximum-weight feasible set drawn uniformly among all maximizers.
pub fn maximize_weights(
    sys: &SetSystemRealization,
    w: &WeightVector,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = rng_from_seed(seed);
    sys.maximize(w.as_slice(), &mut rng)
}

/// `x_i` = probability that the rank-`i` slot is selected by the maximizer,
/// in expectation over realization, permutation and tie-breaking.
pub fn allocation_by_rank(env: &Environment, w: &WeightVector, mode: Mode) -> Result<Allocation> {
    if w.as_slice().len() != env.n() {
        return Err(Error::input(
            "weight vector length differs from environment size",
        ));
    }
    match mode {
        Mode::Exact => Allocation::new(env.exact_support()?.allocation(w.as_slice())?),
        Mode::MonteCarlo { trials, seed } => {
            if trials == 0 {
                return Err(Error::input(
                    "Monte-Carlo allocation needs at least one trial",
                ));
            }
            let n = env.n();
            let draws = crate::par::map_indices(trials, crate::par::Parallelism::default(), |t| {
                let mut rng = rng_from_seed(derive_seed(seed, t as u64));
                let sys = env.sample_with(&mut rng);
                sys.maximize(w.as_slice(), &mut rng)
            });
            let mut x = vec![0.0; n];
            for set in draws {
                for s in set? {
                    x[s] += 1.0;
                }
            }
            for xi in &mut x {
                *xi /= trials as f64;
            }
            Allocation::new(x)
        }
    }
}

/// Serializable form of an [`Environment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDoc {
    pub kind: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub permuted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacities: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub weight: f64,
    pub maximal_sets: Vec<Vec<usize>>,
}

impl TryFrom<&EnvironmentDoc> for Environment {
    type Error = Error;

    fn try_from(doc: &EnvironmentDoc) -> Result<Self> {
        let kind = match doc.kind.as_str() {
            "digital_goods" => EnvironmentKind::DigitalGoods { n: doc.n },
            "k_unit" => EnvironmentKind::KUnit {
                n: doc.n,
                k: doc
                    .k
                    .ok_or_else(|| Error::config("k_unit environment needs `k`"))?,
            },
            "bipartite_matching" => EnvironmentKind::BipartiteMatching {
                n: doc.n,
                capacities: doc
                    .capacities
                    .clone()
                    .ok_or_else(|| Error::config("bipartite_matching needs `capacities`"))?,
                edges: doc.edges.clone(),
            },
            "explicit" => {
                let mut components = Vec::with_capacity(doc.components.len());
                for c in &doc.components {
                    components.push((
                        c.weight,
                        SetSystemRealization::new(doc.n, c.maximal_sets.clone())?,
                    ));
                }
                EnvironmentKind::Explicit { components }
            }
            other => return Err(Error::config(format!("unknown environment kind `{other}`"))),
        };
        Environment::new(kind, doc.permuted)
    }
}

impl Environment {
    pub fn to_doc(&self) -> Result<EnvironmentDoc> {
        let mut doc = EnvironmentDoc {
            kind: String::new(),
            n: self.n(),
            k: None,
            permuted: self.permuted,
            capacities: None,
            edges: None,
            components: Vec::new(),
        };
        match &self.kind {
            EnvironmentKind::DigitalGoods { .. } => doc.kind = "digital_goods".into(),
            EnvironmentKind::KUnit { k, .. } => {
                doc.kind = "k_unit".into();
                doc.k = Some(*k);
            }
            EnvironmentKind::BipartiteMatching {
                capacities, edges, ..
            } => {
                doc.kind = "bipartite_matching".into();
                doc.capacities = Some(capacities.clone());
                doc.edges = edges.clone();
            }
            EnvironmentKind::Explicit { components } => {
                doc.kind = "explicit".into();
                for (w, sys) in components {
                    doc.components.push(ComponentDoc {
                        weight: *w,
                        maximal_sets: sys.maximal_sets()?,
                    });
                }
            }
        }
        Ok(doc)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_doc()?).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: EnvironmentDoc = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Environment::try_from(&doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(n: usize, sets: &[&[usize]]) -> SetSystemRealization {
        SetSystemRealization::new(n, sets.iter().map(|s| s.to_vec()).collect()).unwrap()
    }

    /// Brute-force oracle: every subset, feasibility by definition, uniform over argmax.
    fn oracle_allocation(s: &SetSystemRealization, w: &[f64]) -> Vec<f64> {
        let n = s.n();
        let tol = weight_tolerance(w);
        let mut feasible = Vec::new();
        for m in 0..1u64 << n {
            let set = slots_of(m);
            if s.is_feasible(&set).unwrap() {
                feasible.push((set.iter().map(|&i| w[i]).sum::<f64>(), set));
            }
        }
        let best = feasible
            .iter()
            .map(|f| f.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let argmax: Vec<_> = feasible.iter().filter(|f| f.0 >= best - tol).collect();
        let mut x = vec![0.0; n];
        for (_, set) in &argmax {
            for &i in set {
                x[i] += 1.0 / argmax.len() as f64;
            }
        }
        x
    }

    #[test]
    fn feasibility_examples() {
        let dg = SetSystemRealization::uniform(3, 3);
        assert!(dg.is_feasible(&[0, 1, 2]).unwrap());
        let ku = SetSystemRealization::uniform(3, 1);
        assert!(!ku.is_feasible(&[0, 1]).unwrap());
        let s = sys(3, &[&[0, 1]]);
        assert!(s.is_feasible(&[1]).unwrap());
        assert!(s.is_feasible(&[]).unwrap());
        assert!(matches!(s.is_feasible(&[3]), Err(Error::Input(_))));
    }

    #[test]
    fn antichain_is_normalized() {
        let s = sys(4, &[&[0, 1], &[0], &[2, 3], &[0, 1]]);
        assert_eq!(s.maximal_sets().unwrap(), vec![vec![0, 1], vec![2, 3]]);
        let empty = SetSystemRealization::new(2, vec![]).unwrap();
        assert_eq!(empty.maximal_sets().unwrap(), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn digital_goods_realization_is_full_set() {
        let env = Environment::digital_goods(4).unwrap();
        for seed in 0..5 {
            assert_eq!(
                env.sample_realization(seed).maximal_sets().unwrap(),
                vec![vec![0, 1, 2, 3]]
            );
        }
    }

    #[test]
    fn permuted_symmetric_system_is_unchanged() {
        let env = Environment::new(EnvironmentKind::KUnit { n: 3, k: 1 }, true).unwrap();
        for seed in 0..5 {
            assert_eq!(
                env.sample_realization(seed),
                SetSystemRealization::uniform(3, 1)
            );
        }
    }

    #[test]
    fn mixture_frequencies() {
        let a = sys(2, &[&[0]]);
        let b = sys(2, &[&[1]]);
        let env = Environment::explicit(vec![(0.5, a.clone()), (0.5, b)], false).unwrap();
        let hits = (0..10_000u64)
            .filter(|&s| env.sample_realization(s) == a)
            .count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn mixture_weights_validated() {
        let a = sys(2, &[&[0]]);
        assert!(Environment::explicit(vec![(0.7, a.clone()), (0.7, a.clone())], false).is_err());
        assert!(Environment::explicit(vec![(-0.5, a.clone()), (1.5, a)], false).is_err());
    }

    #[test]
    fn maximize_digital_goods_zero_weight_tie() {
        let dg = SetSystemRealization::uniform(3, 3);
        let w = WeightVector::new(vec![2.0, 1.0, 0.0]).unwrap();
        let mut with_third = 0;
        for seed in 0..4000 {
            let s = maximize_weights(&dg, &w, seed).unwrap();
            assert!(s == vec![0, 1] || s == vec![0, 1, 2]);
            if s.len() == 3 {
                with_third += 1;
            }
        }
        let freq = with_third as f64 / 4000.0;
        assert!((freq - 0.5).abs() < 0.03, "{freq}");
    }

    #[test]
    fn maximize_k_unit_unique() {
        let ku = SetSystemRealization::uniform(3, 1);
        let w = WeightVector::new(vec![3.0, 1.0, 0.0]).unwrap();
        assert_eq!(maximize_weights(&ku, &w, 7).unwrap(), vec![0]);
    }

    #[test]
    fn zero_weights_uniform_over_feasible_sets() {
        let s = sys(3, &[&[0, 1], &[2]]);
        // feasible: {}, {0}, {1}, {0,1}, {2}
        let x = s.tie_allocation(&[0.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-12);
        assert!((x[1] - 0.4).abs() < 1e-12);
        assert!((x[2] - 0.2).abs() < 1e-12);
        assert_eq!(x, oracle_allocation(&s, &[0.0, 0.0, 0.0]));
    }

    #[test]
    fn allocation_by_rank_examples() {
        let dg = Environment::digital_goods(2).unwrap();
        let x = allocation_by_rank(
            &dg,
            &WeightVector::new(vec![1.0, 1.0]).unwrap(),
            Mode::Exact,
        )
        .unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);

        let ku = Environment::k_unit(2, 1).unwrap();
        let x = allocation_by_rank(
            &ku,
            &WeightVector::new(vec![1.0, 1.0]).unwrap(),
            Mode::Exact,
        )
        .unwrap();
        assert_eq!(x.as_slice(), &[0.5, 0.5]);

        // one feasible slot out of two, permuted
        let env = Environment::single(sys(2, &[&[0]]), true).unwrap();
        let x = allocation_by_rank(
            &env,
            &WeightVector::new(vec![1.0, 0.0]).unwrap(),
            Mode::Exact,
        )
        .unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
        assert!((x[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_enumeration() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(1..=7);
            let k = rng.gen_range(0..=n);
            let w: Vec<f64> = (0..n)
                .map(|_| match rng.gen_range(0..4) {
                    0 => 0.0,
                    1 => 1.0,
                    2 => -1.0,
                    _ => rng.gen_range(0..3) as f64 * 0.5,
                })
                .collect();
            let closed = SetSystemRealization::uniform(n, k)
                .tie_allocation(&w)
                .unwrap();
            let mut sets = Vec::new();
            combinations(n, k, 0, &mut Vec::new(), &mut sets);
            let explicit = SetSystemRealization {
                n,
                repr: Repr::Antichain {
                    maximal: sets.iter().map(|s| mask_of(n, s).unwrap()).collect(),
                    closure: OnceLock::new(),
                },
            };
            let enumerated = explicit.tie_allocation(&w).unwrap();
            for i in 0..n {
                assert!(
                    (closed[i] - enumerated[i]).abs() < 1e-9,
                    "n={n} k={k} w={w:?}: {closed:?} vs {enumerated:?}"
                );
            }
        }
    }

    #[test]
    fn bipartite_matching_bases() {
        // agents 0,1 share right vertex 0 (capacity 1); agent 2 uses vertex 1
        let env = Environment::new(
            EnvironmentKind::BipartiteMatching {
                n: 3,
                capacities: vec![1, 1],
                edges: Some(vec![vec![0], vec![0], vec![1]]),
            },
            false,
        )
        .unwrap();
        let s = env.sample_realization(0);
        assert_eq!(s.maximal_sets().unwrap(), vec![vec![0, 2], vec![1, 2]]);
        // complete graph with total capacity 2 is 2-unit
        let env = Environment::new(
            EnvironmentKind::BipartiteMatching {
                n: 3,
                capacities: vec![1, 1],
                edges: None,
            },
            false,
        )
        .unwrap();
        assert_eq!(
            env.sample_realization(0).maximal_sets().unwrap(),
            SetSystemRealization::uniform(3, 2).maximal_sets().unwrap()
        );
    }

    #[test]
    fn environment_doc_round_trip() {
        let env = Environment::explicit(
            vec![(0.25, sys(3, &[&[0, 1], &[2]])), (0.75, sys(3, &[&[0]]))],
            true,
        )
        .unwrap();
        let text = env.to_toml().unwrap();
        assert_eq!(Environment::from_toml(&text).unwrap(), env);
        assert!(matches!(
            Environment::from_toml("kind = \"matroid\"\nn = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn permuted_support_has_symmetric_ties() {
        let env = Environment::single(sys(4, &[&[0, 1], &[2]]), true).unwrap();
        let x = allocation_by_rank(
            &env,
            &WeightVector::new(vec![2.0, 1.0, 1.0, 0.5]).unwrap(),
            Mode::Exact,
        )
        .unwrap();
        assert!((x[1] - x[2]).abs() < 1e-12);
        let total: f64 = env
            .exact_support()
            .unwrap()
            .atoms()
            .iter()
            .map(|a| a.0)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_allocation_converges() {
        let env = Environment::explicit(
            vec![
                (0.5, sys(4, &[&[0, 1], &[2, 3]])),
                (0.5, sys(4, &[&[0], &[1, 2, 3]])),
            ],
            true,
        )
        .unwrap();
        let w = WeightVector::new(vec![3.0, 2.0, 2.0, 0.0]).unwrap();
        let exact = allocation_by_rank(&env, &w, Mode::Exact).unwrap();
        let trials = 4000;
        let mc = allocation_by_rank(&env, &w, Mode::MonteCarlo { trials, seed: 5 }).unwrap();
        let bound = 3.0 * (1.0 / trials as f64).sqrt();
        for i in 0..4 {
            assert!(
                (mc[i] - exact[i]).abs() <= bound,
                "{i}: {} vs {}",
                mc[i],
                exact[i]
            );
        }
    }

    #[test]
    fn exact_permutation_capacity() {
        let env = Environment::single(sys(9, &[&[0, 1]]), true).unwrap();
        assert!(matches!(env.exact_support(), Err(Error::Capacity(_))));
        assert!(env
            .support(Mode::MonteCarlo {
                trials: 10,
                seed: 1
            })
            .is_ok());
    }
}
