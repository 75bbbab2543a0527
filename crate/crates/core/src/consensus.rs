//! Consensus estimates of revenue curves.
//!
//! Counts `n_j(v) = |{i : v_i ≥ α^j}|` are rounded down onto the randomly
//! shifted grid `{c^(σ+d)}`, rounded up to integers, filtered by the minimum
//! support `m`, and assembled into an estimated revenue curve and the
//! smallest valuation profile generating it. Cross-checking computes every
//! leave-two-out estimate and keeps the agents whose estimates all agree.
//!
//! All statistics are integers in `0..=n`, so every estimate is constant on
//! the cells between the points `frac(log_c k)`, `k = 1..=n`. The
//! `*_probability` functions integrate over those cells exactly.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::revcurve::{envelope_vertices, RevenueCurve};
use crate::seeds::rng_from_seed;

const GRID_TOL: f64 = 1e-12;

/// Parameters of the consensus estimator and the mixing probability of the
/// final mechanism.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsensusParams {
    /// Grid ratio of the consensus function, `c > 1`.
    pub c: f64,
    /// Value scale ratio, `α > 1`.
    pub alpha: f64,
    /// Minimum support for a count estimate to be kept.
    pub m: usize,
    /// Probability of running Pseudo-Vickrey.
    pub p: f64,
}

impl ConsensusParams {
    pub fn new(c: f64, alpha: f64, m: usize, p: f64) -> Result<Self> {
        if !(c.is_finite() && c > 1.0) {
            return Err(Error::input(format!("c must exceed 1, got {c}")));
        }
        if !(alpha.is_finite() && alpha > 1.0) {
            return Err(Error::input(format!("alpha must exceed 1, got {alpha}")));
        }
        if m == 0 {
            return Err(Error::input("minimum support m must be positive"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::input(format!(
                "mixing probability must lie in [0, 1], got {p}"
            )));
        }
        Ok(Self { c, alpha, m, p })
    }

    /// Reference parameters `p = 0.627, c = 1.666, α = 2.734, m = 12`, for which
    /// `β ≤ 30.4`.
    pub fn reference() -> Self {
        Self {
            c: 1.666,
            alpha: 2.734,
            m: 12,
            p: 0.627,
        }
    }

    /// `m' = ⌊m·c⌋`.
    pub fn truncation_index(&self) -> usize {
        (self.m as f64 * self.c).floor() as usize
    }

    /// `c·α`, the pointwise ratio between the truncated and estimated curves.
    pub fn curve_ratio(&self) -> f64 {
        self.c * self.alpha
    }

    /// `1 + log_c(1 − tα/(m(α−1)))`; `-∞` when the logarithm's argument is
    /// not positive.
    pub fn agreement_bound(&self, t: usize) -> f64 {
        let arg = 1.0 - t as f64 * self.alpha / (self.m as f64 * (self.alpha - 1.0));
        if arg <= 0.0 {
            f64::NEG_INFINITY
        } else {
            1.0 + arg.ln() / self.c.ln()
        }
    }

    /// `β' = cα / (1 + log_c(1 − 2α/(m(α−1))))`, infinite when the agreement
    /// bound is not positive.
    pub fn beta_prime(&self) -> f64 {
        let q = self.agreement_bound(2);
        if q <= 0.0 {
            f64::INFINITY
        } else {
            self.curve_ratio() / q
        }
    }

    /// `β = max(⌊mc⌋/p, β'/(1−p))`.
    pub fn beta(&self) -> f64 {
        let top = if self.p > 0.0 {
            self.truncation_index() as f64 / self.p
        } else {
            f64::INFINITY
        };
        let rest = if self.p < 1.0 {
            self.beta_prime() / (1.0 - self.p)
        } else {
            f64::INFINITY
        };
        top.max(rest)
    }
}

/// Shared randomness of one mechanism run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharedRandomness {
    pub sigma: f64,
    pub tie_seed: u64,
    pub perm_seed: u64,
    pub mix_seed: u64,
}

impl SharedRandomness {
    pub fn new(sigma: f64, tie_seed: u64, perm_seed: u64, mix_seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::input(format!(
                "sigma must lie in [0, 1), got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            tie_seed,
            perm_seed,
            mix_seed,
        })
    }

    /// Draw σ and the three seeds from one master seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Self {
            sigma: rng.gen(),
            tie_seed: rng.gen(),
            perm_seed: rng.gen(),
            mix_seed: rng.gen(),
        }
    }
}

/// `s` rounded down to the grid `{c^(σ+d) : d ∈ ℤ}`; zero when `s = 0`.
pub fn consensus_round(sigma: f64, s: f64, c: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let grid = |d: f64| c.powf(sigma + d);
    let limit = s * (1.0 + GRID_TOL);
    let mut d = (s.ln() / c.ln() - sigma).floor();
    while grid(d + 1.0) <= limit {
        d += 1.0;
    }
    while grid(d) > limit {
        d -= 1.0;
    }
    grid(d)
}

/// `⌈consensus_round(σ, s)⌉` for an integer statistic; never exceeds `s`.
pub fn estimate_count(sigma: f64, s: usize, c: f64) -> usize {
    if s == 0 {
        return 0;
    }
    let rounded = consensus_round(sigma, s as f64, c);
    ((rounded * (1.0 - GRID_TOL)).ceil() as usize).min(s)
}

/// Fraction of σ-draws on which the consensus function is constant on
/// `[s/β, s]`.
pub fn consensus_constancy_rate(c: f64, beta: f64, trials: usize, seed: u64) -> Result<f64> {
    if c.is_nan() || c <= 1.0 {
        return Err(Error::input("c must exceed 1"));
    }
    if beta.is_nan() || beta < 1.0 || beta > c {
        return Err(Error::input(format!(
            "need c ≥ β ≥ 1, got c = {c}, β = {beta}"
        )));
    }
    if trials == 0 {
        return Err(Error::input("need at least one trial"));
    }
    let s = 1.0;
    let mut rng = rng_from_seed(seed);
    let hits = (0..trials)
        .filter(|_| {
            let sigma: f64 = rng.gen();
            consensus_round(sigma, s / beta, c) == consensus_round(sigma, s, c)
        })
        .count();
    Ok(hits as f64 / trials as f64)
}

/// `|{i : v_i ≥ α^j}|`.
pub fn count_above(v: &[f64], alpha: f64, j: i32) -> usize {
    let threshold = alpha.powi(j);
    v.iter().filter(|&&x| x >= threshold).count()
}

/// Largest `j` with `v ≥ α^j`, or `None` for `v ≤ 0`.
pub fn level(v: f64, alpha: f64) -> Option<i32> {
    if v.is_nan() || v <= 0.0 {
        return None;
    }
    let mut j = (v.ln() / alpha.ln()).floor() as i32;
    while alpha.powi(j + 1) <= v {
        j += 1;
    }
    while alpha.powi(j) > v {
        j -= 1;
    }
    Some(j)
}

/// Count statistics keyed by scale index `j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountStatistics(pub BTreeMap<i32, usize>);

impl CountStatistics {
    pub fn get(&self, j: i32) -> Option<usize> {
        self.0.get(&j).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, usize)> + '_ {
        self.0.iter().map(|(&j, &n)| (j, n))
    }
}

/// Number of agents at each scale level (positive values only).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct LevelHistogram(BTreeMap<i32, usize>);

impl LevelHistogram {
    fn of(v: &[f64], alpha: f64) -> Self {
        let mut h = BTreeMap::new();
        for &x in v {
            if let Some(j) = level(x, alpha) {
                *h.entry(j).or_insert(0) += 1;
            }
        }
        Self(h)
    }

    fn remove(&mut self, j: Option<i32>) {
        if let Some(j) = j {
            let e = self
                .0
                .get_mut(&j)
                .expect("removing an agent that is present");
            *e -= 1;
            if *e == 0 {
                self.0.remove(&j);
            }
        }
    }

    /// `(j, n_j)` for every `j` between the lowest and highest occupied level.
    fn counts(&self) -> Vec<(i32, usize)> {
        let (Some((&lo, _)), Some((&hi, _))) = (self.0.first_key_value(), self.0.last_key_value())
        else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity((hi - lo + 1) as usize);
        let mut running = 0;
        for j in (lo..=hi).rev() {
            running += self.0.get(&j).copied().unwrap_or(0);
            out.push((j, running));
        }
        out.reverse();
        out
    }

    fn kept(&self, sigma: f64, params: &ConsensusParams) -> Vec<(i32, usize)> {
        self.counts()
            .into_iter()
            .map(|(j, n)| (j, estimate_count(sigma, n, params.c)))
            .filter(|&(_, e)| e >= params.m)
            .collect()
    }
}

/// Raw statistics `n_j(v)` over the supported index range.
pub fn count_statistics(v: &[f64], alpha: f64) -> CountStatistics {
    CountStatistics(LevelHistogram::of(v, alpha).counts().into_iter().collect())
}

/// Kept estimates `ñ_j = ⌈C(σ, n_j)⌉ ≥ m`.
pub fn estimate_counts(sigma: f64, v: &[f64], params: &ConsensusParams) -> CountStatistics {
    CountStatistics(
        LevelHistogram::of(v, params.alpha)
            .kept(sigma, params)
            .into_iter()
            .collect(),
    )
}

/// A kept estimate and its point `Q_j = (ñ_j, α^j·ñ_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeptPoint {
    pub j: i32,
    pub count: usize,
    pub revenue: f64,
}

/// Estimated revenue curve and the smallest profile generating it.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatedProfile {
    values: Vec<f64>,
    curve: RevenueCurve,
    kept: Vec<KeptPoint>,
    blocks: Vec<(i32, usize)>,
}

impl EstimatedProfile {
    fn from_kept(kept: Vec<(i32, usize)>, n: usize, alpha: f64) -> Self {
        let kept: Vec<KeptPoint> = kept
            .into_iter()
            .map(|(j, count)| KeptPoint {
                j,
                count,
                revenue: alpha.powi(j) * count as f64,
            })
            .collect();
        let points: Vec<(usize, f64)> = kept.iter().map(|q| (q.count, q.revenue)).collect();
        let on_curve = envelope_vertices(&points);
        let vertices: Vec<(usize, f64)> = on_curve.iter().map(|&i| points[i]).collect();
        let curve = RevenueCurve::from_vertices(&vertices, n);
        let mut blocks = Vec::with_capacity(on_curve.len());
        let mut values = Vec::with_capacity(n);
        let mut filled = 0;
        for &i in &on_curve {
            let q = &kept[i];
            blocks.push((q.j, q.count - filled));
            values.extend(std::iter::repeat_n(alpha.powi(q.j), q.count - filled));
            filled = q.count;
        }
        values.resize(n.max(filled), 0.0);
        Self {
            values,
            curve,
            kept,
            blocks,
        }
    }

    /// The all-zero estimate over `n` agents.
    pub fn zero(n: usize) -> Self {
        Self::from_kept(Vec::new(), n, 2.0)
    }

    /// `ṽ`, non-increasing and zero-padded.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `R̃` sampled at `1..=n`.
    pub fn curve(&self) -> &RevenueCurve {
        &self.curve
    }

    pub fn kept_points(&self) -> &[KeptPoint] {
        &self.kept
    }

    /// `(j, multiplicity)` of each positive value `α^j` in `ṽ`, highest first.
    /// Two estimates are the same statistic iff their blocks agree.
    pub fn blocks(&self) -> &[(i32, usize)] {
        &self.blocks
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.is_empty()
    }

    /// The same estimate over `n` agents.
    pub fn padded(&self, n: usize, alpha: f64) -> Self {
        let kept = self.kept.iter().map(|q| (q.j, q.count)).collect();
        Self::from_kept(kept, n, alpha)
    }
}

/// Build `R̃(σ, v)` and `ṽ(σ, v)` (length `|v|`).
pub fn build_estimated_profile(
    sigma: f64,
    v: &[f64],
    params: &ConsensusParams,
) -> EstimatedProfile {
    let hist = LevelHistogram::of(v, params.alpha);
    EstimatedProfile::from_kept(hist.kept(sigma, params), v.len(), params.alpha)
}

/// True iff removing any `t` agents leaves `ñ_j` unchanged.
pub fn t_consensus_check(
    sigma: f64,
    v: &[f64],
    params: &ConsensusParams,
    t: usize,
    j: i32,
) -> Result<bool> {
    if t >= v.len() {
        return Err(Error::input(format!(
            "t = {t} must be smaller than the number of agents {}",
            v.len()
        )));
    }
    let n_j = count_above(v, params.alpha, j);
    let base = estimate_count(sigma, n_j, params.c);
    Ok((1..=t.min(n_j)).all(|r| estimate_count(sigma, n_j - r, params.c) == base))
}

/// Result of cross-checking: the common estimate and the agreeing agents.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCheck {
    /// Common estimate of the agreeing agents, padded to `n`; all zero when
    /// nobody agrees.
    pub estimate: EstimatedProfile,
    /// Agents whose leave-two-out estimates agree with every partner.
    pub agreeing: Vec<usize>,
}

/// Agents grouped by scale level: agents in one class are interchangeable
/// for every count statistic.
struct LevelClasses {
    hist: LevelHistogram,
    keys: Vec<Option<i32>>,
    members: Vec<Vec<usize>>,
}

impl LevelClasses {
    fn of(v: &[f64], alpha: f64) -> Self {
        let mut index: HashMap<Option<i32>, usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, &x) in v.iter().enumerate() {
            let key = level(x, alpha);
            let c = *index.entry(key).or_insert_with(|| {
                keys.push(key);
                members.push(Vec::new());
                keys.len() - 1
            });
            members[c].push(i);
        }
        Self {
            hist: LevelHistogram::of(v, alpha),
            keys,
            members,
        }
    }

    fn without(&self, removed: &[usize]) -> LevelHistogram {
        let mut h = self.hist.clone();
        for &c in removed {
            h.remove(self.keys[c]);
        }
        h
    }
}

/// Cross-checked consensus estimate over all unordered leave-two-out pairs.
pub fn cross_checked_estimate(
    sigma: f64,
    v: &[f64],
    params: &ConsensusParams,
) -> Result<CrossCheck> {
    let n = v.len();
    if n < 3 {
        return Err(Error::input("cross-checking needs at least three agents"));
    }
    let classes = LevelClasses::of(v, params.alpha);
    let k = classes.keys.len();
    let mut pair_blocks: HashMap<(usize, usize), Vec<(i32, usize)>> = HashMap::new();
    let mut estimate_for = |a: usize, b: usize| -> Vec<(i32, usize)> {
        let key = (a.min(b), a.max(b));
        pair_blocks
            .entry(key)
            .or_insert_with(|| {
                let kept = classes.without(&[a, b]).kept(sigma, params);
                EstimatedProfile::from_kept(kept, n - 2, params.alpha).blocks
            })
            .clone()
    };
    let mut agreeing = Vec::new();
    let mut common: Option<Vec<(i32, usize)>> = None;
    for a in 0..k {
        let partners: Vec<usize> = (0..k)
            .filter(|&b| {
                if b == a {
                    classes.members[a].len() >= 2
                } else {
                    true
                }
            })
            .collect();
        let first = estimate_for(a, partners[0]);
        if partners[1..].iter().all(|&b| estimate_for(a, b) == first) {
            agreeing.extend_from_slice(&classes.members[a]);
            common.get_or_insert(first);
        }
    }
    agreeing.sort_unstable();
    let estimate = match common {
        Some(blocks) => profile_from_blocks(&blocks, n, params),
        None => EstimatedProfile::zero(n),
    };
    Ok(CrossCheck { estimate, agreeing })
}

/// Rebuild a padded estimate from agreed blocks. The kept points of the
/// agreed estimate are those of a representative leave-two-out profile; only
/// on-curve points matter, so the blocks determine the curve and `ṽ`.
fn profile_from_blocks(
    blocks: &[(i32, usize)],
    n: usize,
    params: &ConsensusParams,
) -> EstimatedProfile {
    let mut filled = 0;
    let kept: Vec<(i32, usize)> = blocks
        .iter()
        .map(|&(j, c)| {
            filled += c;
            (j, filled)
        })
        .collect();
    EstimatedProfile::from_kept(kept, n, params.alpha)
}

/// True iff removing any set of at most `t` agents leaves the estimated
/// profile unchanged.
pub fn leave_out_agreement(sigma: f64, v: &[f64], params: &ConsensusParams, t: usize) -> bool {
    let classes = LevelClasses::of(v, params.alpha);
    let n = v.len();
    let base =
        EstimatedProfile::from_kept(classes.hist.kept(sigma, params), n, params.alpha).blocks;
    let sizes: Vec<usize> = classes.members.iter().map(Vec::len).collect();
    let mut removed = Vec::new();
    agrees_under_removals(&classes, &sizes, 0, t, &mut removed, &base, sigma, params)
}

#[allow(clippy::too_many_arguments)]
fn agrees_under_removals(
    classes: &LevelClasses,
    sizes: &[usize],
    from: usize,
    budget: usize,
    removed: &mut Vec<usize>,
    base: &[(i32, usize)],
    sigma: f64,
    params: &ConsensusParams,
) -> bool {
    if !removed.is_empty() {
        let n = sizes.iter().sum::<usize>() - removed.len();
        let blocks = EstimatedProfile::from_kept(
            classes.without(removed).kept(sigma, params),
            n,
            params.alpha,
        )
        .blocks;
        if blocks != base {
            return false;
        }
    }
    if budget == 0 {
        return true;
    }
    for c in from..sizes.len() {
        let used = removed.iter().filter(|&&r| r == c).count();
        if used >= sizes[c] {
            continue;
        }
        removed.push(c);
        let ok = agrees_under_removals(classes, sizes, c, budget - 1, removed, base, sigma, params);
        removed.pop();
        if !ok {
            return false;
        }
    }
    true
}

/// Cells of `[0, 1)` on which every estimate of an integer statistic in
/// `0..=max_count` is constant, as `(midpoint, width)`.
pub fn sigma_cells(c: f64, max_count: usize) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = (1..=max_count.max(1))
        .map(|k| {
            let x = (k as f64).ln() / c.ln();
            x - x.floor()
        })
        .collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0]))
        .collect()
}

/// `Pr_σ[pred(σ)]` for a predicate that only depends on estimates of integer
/// statistics bounded by `max_count`.
pub fn exact_sigma_probability<F>(c: f64, max_count: usize, mut pred: F) -> f64
where
    F: FnMut(f64) -> bool,
{
    sigma_cells(c, max_count)
        .into_iter()
        .filter(|&(mid, _)| pred(mid))
        .map(|(_, w)| w)
        .sum()
}

/// `1 + log_c(1 − t/n_j)`.
pub fn single_consensus_bound(t: usize, n_j: usize, c: f64) -> f64 {
    let arg = 1.0 - t as f64 / n_j as f64;
    if arg <= 0.0 {
        f64::NEG_INFINITY
    } else {
        1.0 + arg.ln() / c.ln()
    }
}

/// Exact `Pr_σ[statistic j has a t-consensus on v]`.
pub fn t_consensus_probability(
    v: &[f64],
    params: &ConsensusParams,
    t: usize,
    j: i32,
) -> Result<f64> {
    if t >= v.len() {
        return Err(Error::input("t must be smaller than the number of agents"));
    }
    Ok(exact_sigma_probability(params.c, v.len(), |s| {
        t_consensus_check(s, v, params, t, j).expect("t checked above")
    }))
}

/// Exact `Pr_σ[removing any ≤ t agents leaves the estimated profile unchanged]`.
pub fn leave_out_agreement_probability(v: &[f64], params: &ConsensusParams, t: usize) -> f64 {
    exact_sigma_probability(params.c, v.len(), |s| leave_out_agreement(s, v, params, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: f64, alpha: f64, m: usize) -> ConsensusParams {
        ConsensusParams::new(c, alpha, m, 0.5).unwrap()
    }

    fn repeat(parts: &[(f64, usize)]) -> Vec<f64> {
        parts
            .iter()
            .flat_map(|&(v, k)| std::iter::repeat_n(v, k))
            .collect()
    }

    /// Enumeration oracle: scan d over a wide window.
    fn round_oracle(sigma: f64, s: f64, c: f64) -> f64 {
        (-400..400)
            .map(|d| c.powf(sigma + d as f64))
            .filter(|&g| g <= s * (1.0 + 1e-12))
            .fold(0.0, f64::max)
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(consensus_round(0.0, 5.0, 2.0), 4.0);
        assert_eq!(consensus_round(0.0, 8.0, 2.0), 8.0);
        assert!((consensus_round(0.5, 5.0, 2.0) - 2f64.powf(1.5)).abs() < 1e-12);
        assert_eq!(consensus_round(0.3, 0.0, 2.0), 0.0);
    }

    #[test]
    fn rounding_matches_enumeration() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let c = rng.gen_range(1.05..5.0);
            let sigma: f64 = rng.gen();
            let s = if rng.gen_bool(0.5) {
                rng.gen_range(1..200) as f64
            } else {
                rng.gen_range(0.01..1000.0)
            };
            let got = consensus_round(sigma, s, c);
            let want = round_oracle(sigma, s, c);
            assert!(
                (got - want).abs() <= 1e-9 * want,
                "σ={sigma} s={s} c={c}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn estimate_count_never_exceeds_statistic() {
        for c in [1.1, 1.666, 2.0, 3.7] {
            for s in 0..300 {
                for k in 0..20 {
                    let sigma = k as f64 / 20.0;
                    let e = estimate_count(sigma, s, c);
                    assert!(e <= s);
                    if s > 0 {
                        assert!(e as f64 >= s as f64 / c - 1e-9);
                    }
                }
            }
        }
        // grid points land exactly
        assert_eq!(estimate_count(0.0, 8, 2.0), 8);
    }

    #[test]
    fn constancy_rate_examples() {
        let r = consensus_constancy_rate(4.0, 2.0, 100_000, 1).unwrap();
        assert!((r - 0.5).abs() <= 0.01, "{r}");
        let r = consensus_constancy_rate(3.0, 3.0, 100_000, 2).unwrap();
        assert!(r.abs() <= 0.01, "{r}");
        assert_eq!(consensus_constancy_rate(2.0, 1.0, 1000, 3).unwrap(), 1.0);
        assert!(matches!(
            consensus_constancy_rate(2.0, 3.0, 10, 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn count_examples() {
        let v = [5.0, 3.0, 1.0];
        assert_eq!(count_above(&v, 2.0, 1), 2);
        assert_eq!(count_above(&v, 2.0, 0), 3);
        assert_eq!(count_above(&v, 2.0, 3), 0);
        assert_eq!(level(4.0, 2.0), Some(2));
        assert_eq!(level(3.999, 2.0), Some(1));
        assert_eq!(level(0.0, 2.0), None);
        assert_eq!(level(0.3, 2.0), Some(-2));
    }

    #[test]
    fn estimate_counts_examples() {
        let p = params(2.0, 2.0, 2);
        let e = estimate_counts(0.0, &[4.0, 4.0, 4.0, 4.0, 1.0], &p);
        assert_eq!(e.0, BTreeMap::from([(0, 4), (1, 4), (2, 4)]));
        let e = estimate_counts(0.0, &[4.0, 1.0, 0.0], &params(2.0, 2.0, 3));
        assert!(e.is_empty());
    }

    #[test]
    fn estimated_profile_examples() {
        let p = params(2.0, 2.0, 1);
        let v = repeat(&[(4.0, 8), (1.0, 8)]);
        let e = build_estimated_profile(0.0, &v, &p);
        assert_eq!(e.values(), repeat(&[(4.0, 8), (0.0, 8)]).as_slice());
        let want: Vec<f64> = (1..=16)
            .map(|i| if i <= 8 { 4.0 * i as f64 } else { 32.0 })
            .collect();
        assert_eq!(e.curve().values(), want.as_slice());

        let e = build_estimated_profile(0.0, &[4.0, 4.0, 1.0, 1.0], &p);
        assert_eq!(e.values(), &[4.0, 4.0, 0.0, 0.0]);
        assert_eq!(e.curve().values(), &[4.0, 8.0, 8.0, 8.0]);
        assert_eq!(e.kept_points().len(), 3);

        let e = build_estimated_profile(0.0, &[1.0, 1.0, 1.0], &params(2.0, 2.0, 5));
        assert!(e.is_zero());
        assert_eq!(e.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(e.curve().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn collinear_points_are_not_vertices() {
        // Q_1 = (4, 8) lies on the segment from the origin to Q_2... no: Q_2 = (2, 8)
        // and Q_1 = (4, 8) lies on the flat tail, so ṽ uses only Q_2.
        let p = params(2.0, 2.0, 1);
        let e = build_estimated_profile(0.0, &[4.0, 4.0, 2.0, 2.0], &p);
        assert_eq!(e.blocks(), &[(2, 2)]);
        assert_eq!(e.values(), &[4.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn t_consensus_examples() {
        let p = params(2.0, 2.0, 1);
        let v = repeat(&[(4.0, 8), (1.0, 8)]);
        assert!(t_consensus_check(0.3, &v, &p, 0, 2).unwrap());
        assert!(!t_consensus_check(0.0, &v, &p, 2, 2).unwrap());
        assert!(t_consensus_check(0.5, &v, &p, 2, 2).unwrap());
        assert!(matches!(
            t_consensus_check(0.5, &v, &p, 16, 2),
            Err(Error::Input(_))
        ));
    }

    fn naive_cross_check(
        sigma: f64,
        v: &[f64],
        p: &ConsensusParams,
    ) -> (Vec<usize>, Vec<(i32, usize)>) {
        let n = v.len();
        let est = |i: usize, j: usize| {
            let rest: Vec<f64> = (0..n).filter(|&k| k != i && k != j).map(|k| v[k]).collect();
            build_estimated_profile(sigma, &rest, p).blocks().to_vec()
        };
        let mut agreeing = Vec::new();
        let mut common = Vec::new();
        for i in 0..n {
            let partners: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let first = est(i, partners[0]);
            if partners.iter().all(|&j| est(i, j) == first) {
                agreeing.push(i);
                common = first;
            }
        }
        (agreeing, common)
    }

    #[test]
    fn cross_check_examples() {
        let p = params(2.0, 2.0, 1);
        let v = vec![1.0; 16];
        let cc = cross_checked_estimate(0.0, &v, &p).unwrap();
        assert_eq!(cc.agreeing, (0..16).collect::<Vec<_>>());
        assert_eq!(
            cc.estimate.values(),
            repeat(&[(1.0, 8), (0.0, 8)]).as_slice()
        );

        let cc = cross_checked_estimate(0.0, &[4.0, 4.0, 1.0], &p).unwrap();
        assert_eq!(cc.agreeing, vec![2]);
        assert_eq!(cc.estimate.values(), &[4.0, 0.0, 0.0]);

        assert!(matches!(
            cross_checked_estimate(0.0, &[1.0, 1.0], &p),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cross_check_matches_all_pairs_oracle() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let n = rng.gen_range(3..=14);
            let p = params(
                rng.gen_range(1.3..3.0),
                rng.gen_range(1.5..4.0),
                rng.gen_range(1..=4),
            );
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        0.0
                    } else {
                        rng.gen_range(0.5..40.0f64).floor()
                    }
                })
                .collect();
            let sigma: f64 = rng.gen();
            let cc = cross_checked_estimate(sigma, &v, &p).unwrap();
            let (agreeing, common) = naive_cross_check(sigma, &v, &p);
            assert_eq!(cc.agreeing, agreeing, "{v:?} σ={sigma}");
            if !agreeing.is_empty() {
                assert_eq!(cc.estimate.blocks(), common.as_slice());
            }
            assert_eq!(cc.estimate.values().len(), n);
        }
    }

    #[test]
    fn sigma_cells_cover_unit_interval() {
        let cells = sigma_cells(1.666, 40);
        let total: f64 = cells.iter().map(|c| c.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // estimates are constant within each cell
        for &(mid, w) in &cells {
            for s in 1..=40 {
                let a = estimate_count(mid - 0.49 * w, s, 1.666);
                let b = estimate_count(mid + 0.49 * w, s, 1.666);
                assert_eq!(a, b, "cell at {mid} width {w}, s = {s}");
            }
        }
    }

    #[test]
    fn exact_t_consensus_probability_agrees_with_sampling() {
        let p = params(2.0, 2.0, 1);
        let v = repeat(&[(4.0, 8), (1.0, 8)]);
        let exact = t_consensus_probability(&v, &p, 2, 2).unwrap();
        let mut rng = rng_from_seed(9);
        let hits = (0..20_000)
            .filter(|_| t_consensus_check(rng.gen(), &v, &p, 2, 2).unwrap())
            .count();
        assert!((exact - hits as f64 / 20_000.0).abs() < 0.02);
        assert!(exact >= single_consensus_bound(2, 8, 2.0) - 1e-12);
    }

    #[test]
    fn reference_constants() {
        let p = ConsensusParams::reference();
        assert_eq!(p.truncation_index(), 19);
        assert!((p.beta_prime() - 11.3).abs() < 0.05, "{}", p.beta_prime());
        assert!(p.beta() <= 30.4, "{}", p.beta());
        assert!(ConsensusParams::new(1.0, 2.0, 1, 0.5).is_err());
        assert!(ConsensusParams::new(2.0, 2.0, 0, 0.5).is_err());
        assert!(ConsensusParams::new(2.0, 2.0, 1, 1.5).is_err());
        assert!(SharedRandomness::new(1.0, 0, 0, 0).is_err());
    }
}
