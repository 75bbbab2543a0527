//! Pseudo-Vickrey, the cross-checked consensus-estimate profit extractor
//! (`CCEPE'`) and their convex combination (`CCEPE`).
//!
//! Expected outcomes are taken over a [`Support`] (realized systems in agent
//! coordinates) and uniform tie-breaking, at a fixed σ. Expected revenue over
//! σ is integrated exactly over the cells on which every consensus estimate is
//! constant, or estimated by Monte Carlo over full realized runs.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{cross_checked_estimate, sigma_cells, ConsensusParams, SharedRandomness};
use crate::envir::{Environment, SetSystemRealization, Support};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::profitextract::ProfitExtractor;
use crate::revcurve::Outcome;
use crate::seeds::{derive_seed, rng_from_seed};
use crate::Mode;

/// Draws used to build an empirical support when exact enumeration is out of
/// reach and payments still need expected allocations.
pub const FALLBACK_SUPPORT_DRAWS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    PseudoVickrey,
    CcepePrime,
    Ccepe,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 3] = [Self::PseudoVickrey, Self::CcepePrime, Self::Ccepe];

    pub fn name(self) -> &'static str {
        match self {
            Self::PseudoVickrey => "pseudo_vickrey",
            Self::CcepePrime => "ccepe_prime",
            Self::Ccepe => "ccepe",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mechanism `{s}`")))
    }
}

/// Which sub-mechanism produced a realized run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Vickrey,
    CcepePrime,
}

/// One realized run.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismResult {
    pub kind: MechanismKind,
    /// Realized allocation (0/1) and payments.
    pub outcome: Outcome,
    pub served: Vec<usize>,
    pub arm: Arm,
    /// Agreeing agents of the cross-check (empty on the Vickrey arm).
    pub agreeing: Vec<usize>,
    /// The cross-checked target profile (empty on the Vickrey arm).
    pub estimate: Vec<f64>,
    pub randomness: SharedRandomness,
}

/// Flat, serializable form of a [`MechanismResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismRecord {
    pub mechanism: MechanismKind,
    pub arm: Arm,
    pub served: Vec<usize>,
    pub payments: Vec<f64>,
    pub revenue: f64,
    pub agreeing: Vec<usize>,
    pub estimate: Vec<f64>,
    pub sigma: f64,
    pub tie_seed: u64,
    pub perm_seed: u64,
    pub mix_seed: u64,
}

impl MechanismResult {
    pub fn record(&self) -> MechanismRecord {
        MechanismRecord {
            mechanism: self.kind,
            arm: self.arm,
            served: self.served.clone(),
            payments: self.outcome.payments.clone(),
            revenue: self.outcome.revenue,
            agreeing: self.agreeing.clone(),
            estimate: self.estimate.clone(),
            sigma: self.randomness.sigma,
            tie_seed: self.randomness.tie_seed,
            perm_seed: self.randomness.perm_seed,
            mix_seed: self.randomness.mix_seed,
        }
    }
}

/// Expected outcome of `CCEPE'` at a fixed σ, with the cross-check diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedSigma {
    pub outcome: Outcome,
    pub agreeing: Vec<usize>,
    pub estimate: Vec<f64>,
}

/// Revenue estimate with its 95% normal-approximation half-width (0 in exact
/// mode).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevenueEstimate {
    pub mean: f64,
    pub half_width: f64,
}

fn check_bids(bids: &[f64], support: &Support, min_n: usize) -> Result<()> {
    if bids.len() < min_n {
        return Err(Error::input(format!(
            "the mechanism needs at least {min_n} agents"
        )));
    }
    if bids.len() != support.n() {
        return Err(Error::input("bid count differs from environment size"));
    }
    if bids.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::input("bids must be finite and nonnegative"));
    }
    Ok(())
}

/// Agents holding the highest bid, and the second order statistic.
fn top_and_second(bids: &[f64]) -> (Vec<usize>, f64) {
    let top = bids.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tops: Vec<usize> = (0..bids.len()).filter(|&i| bids[i] == top).collect();
    let mut sorted = bids.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    (tops, sorted[1])
}

/// Expected outcome of Pseudo-Vickrey: a uniformly chosen highest bidder is
/// served at the second-highest bid when its singleton is feasible.
pub fn pseudo_vickrey(bids: &[f64], support: &Support) -> Result<Outcome> {
    check_bids(bids, support, 2)?;
    let (tops, second) = top_and_second(bids);
    let share = 1.0 / tops.len() as f64;
    let mut x = vec![0.0; bids.len()];
    let mut p = vec![0.0; bids.len()];
    for &a in &tops {
        x[a] = share * support.singleton_probability(a);
        p[a] = second * x[a];
    }
    Ok(Outcome::new(bids, x, p))
}

type Extracted = Arc<(ProfitExtractor, Outcome)>;

/// Agreeing set, estimate and (when someone agrees) the extractor outcome.
type CrossChecked = (Vec<usize>, Vec<f64>, Option<Extracted>);

/// Agreeing set, estimate, served agents and payments of a realized run.
type Realized = (Vec<usize>, Vec<f64>, Vec<usize>, Vec<f64>);

/// Evaluates `CCEPE'` on fixed bids, memoizing profit-extractor outcomes by
/// target so σ-cells and trials sharing an estimate reuse one computation.
struct PrimeEvaluator<'a> {
    bids: &'a [f64],
    support: &'a Support,
    params: &'a ConsensusParams,
    memo: Mutex<HashMap<Vec<(i32, usize)>, Extracted>>,
}

impl<'a> PrimeEvaluator<'a> {
    fn new(bids: &'a [f64], support: &'a Support, params: &'a ConsensusParams) -> Result<Self> {
        check_bids(bids, support, 3)?;
        Ok(Self {
            bids,
            support,
            params,
            memo: Mutex::new(HashMap::new()),
        })
    }

    /// Cross-check at σ; `None` when nobody agrees.
    fn at(&self, sigma: f64) -> Result<CrossChecked> {
        let cc = cross_checked_estimate(sigma, self.bids, self.params)?;
        let target = cc.estimate.values().to_vec();
        if cc.agreeing.is_empty() {
            return Ok((cc.agreeing, target, None));
        }
        let key = cc.estimate.blocks().to_vec();
        let cached = self.memo.lock().expect("memo lock").get(&key).cloned();
        let entry = match cached {
            Some(e) => e,
            None => {
                let pe = ProfitExtractor::new(&target)?;
                let out = pe.outcome(self.bids, self.support)?;
                let e = Arc::new((pe, out));
                self.memo.lock().expect("memo lock").insert(key, e.clone());
                e
            }
        };
        Ok((cc.agreeing, target, Some(entry)))
    }

    fn expected_at(&self, sigma: f64) -> Result<FixedSigma> {
        let n = self.bids.len();
        let (agreeing, estimate, entry) = self.at(sigma)?;
        let outcome = match entry {
            None => Outcome::new(self.bids, vec![0.0; n], vec![0.0; n]),
            Some(e) => {
                let pe_out = &e.1;
                let mut x = vec![0.0; n];
                let mut p = vec![0.0; n];
                for &a in &agreeing {
                    x[a] = pe_out.allocation[a];
                    p[a] = pe_out.payments[a];
                }
                Outcome::new(self.bids, x, p)
            }
        };
        Ok(FixedSigma {
            outcome,
            agreeing,
            estimate,
        })
    }

    fn revenue_at(&self, sigma: f64) -> Result<f64> {
        let (agreeing, _, entry) = self.at(sigma)?;
        Ok(match entry {
            None => 0.0,
            Some(e) => agreeing.iter().map(|&a| e.1.payments[a]).sum(),
        })
    }

    /// `E_σ[revenue]` by exact integration over the σ-cells.
    fn exact_revenue(&self, par_mode: Parallelism) -> Result<f64> {
        let cells = sigma_cells(self.params.c, self.bids.len());
        let parts = par::map_slice(&cells, par_mode, |&(mid, width)| {
            Ok::<_, Error>(width * self.revenue_at(mid)?)
        });
        let mut total = 0.0;
        for part in parts {
            total += part?;
        }
        Ok(total)
    }

    /// A realized run at σ on a realized system.
    fn realized<R: Rng>(
        &self,
        sigma: f64,
        sys: &SetSystemRealization,
        rng: &mut R,
    ) -> Result<Realized> {
        let n = self.bids.len();
        let (agreeing, estimate, entry) = self.at(sigma)?;
        let mut served = Vec::new();
        let mut pay = vec![0.0; n];
        if let Some(e) = entry {
            let (pe, out) = &*e;
            let chosen = pe.served_with(self.bids, sys, rng)?;
            for a in chosen {
                if agreeing.binary_search(&a).is_ok() {
                    served.push(a);
                    // unbiased: E[1{served}·p/x] = p
                    if out.allocation[a] > 0.0 {
                        pay[a] = out.payments[a] / out.allocation[a];
                    }
                }
            }
        }
        Ok((served, pay, agreeing, estimate))
    }
}

/// Expected outcome of `CCEPE'` at σ: cross-check, run the profit extractor
/// on the agreed target, and keep only agreeing agents.
pub fn ccepe_prime(
    bids: &[f64],
    support: &Support,
    params: &ConsensusParams,
    sigma: f64,
) -> Result<FixedSigma> {
    PrimeEvaluator::new(bids, support, params)?.expected_at(sigma)
}

/// Expected outcome of `CCEPE` at σ: the `p`-mixture of Pseudo-Vickrey and
/// `CCEPE'`.
pub fn ccepe(
    bids: &[f64],
    support: &Support,
    params: &ConsensusParams,
    sigma: f64,
) -> Result<Outcome> {
    let pv = pseudo_vickrey(bids, support)?;
    let prime = ccepe_prime(bids, support, params, sigma)?.outcome;
    Ok(mix(bids, params.p, &pv, &prime))
}

fn mix(bids: &[f64], p: f64, a: &Outcome, b: &Outcome) -> Outcome {
    let x = a
        .allocation
        .iter()
        .zip(&b.allocation)
        .map(|(u, w)| p * u + (1.0 - p) * w)
        .collect();
    let pay = a
        .payments
        .iter()
        .zip(&b.payments)
        .map(|(u, w)| p * u + (1.0 - p) * w)
        .collect();
    Outcome::new(bids, x, pay)
}

/// Expected outcome of `kind` at σ (σ is ignored by Pseudo-Vickrey).
pub fn expected_outcome_at(
    kind: MechanismKind,
    bids: &[f64],
    support: &Support,
    params: &ConsensusParams,
    sigma: f64,
) -> Result<Outcome> {
    match kind {
        MechanismKind::PseudoVickrey => pseudo_vickrey(bids, support),
        MechanismKind::CcepePrime => Ok(ccepe_prime(bids, support, params, sigma)?.outcome),
        MechanismKind::Ccepe => ccepe(bids, support, params, sigma),
    }
}

/// The exact support when it can be enumerated, otherwise an empirical one.
pub fn payment_support(env: &Environment, seed: u64) -> Result<Support> {
    match env.exact_support() {
        Ok(s) => Ok(s),
        Err(Error::Capacity(_)) => env.support(Mode::MonteCarlo {
            trials: FALLBACK_SUPPORT_DRAWS,
            seed,
        }),
        Err(e) => Err(e),
    }
}

fn sample_atom<R: Rng>(support: &Support, rng: &mut R) -> SetSystemRealization {
    let atoms = support.atoms();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (p, sys) in atoms {
        acc += p;
        if u < acc {
            return sys.clone();
        }
    }
    atoms[atoms.len() - 1].1.clone()
}

fn realized_vickrey<R: Rng>(
    bids: &[f64],
    sys: &SetSystemRealization,
    rng: &mut R,
) -> (Vec<usize>, Vec<f64>) {
    let (tops, second) = top_and_second(bids);
    let a = tops[rng.gen_range(0..tops.len())];
    let mut pay = vec![0.0; bids.len()];
    if sys.singleton_feasible(a) {
        pay[a] = second;
        (vec![a], pay)
    } else {
        (Vec::new(), pay)
    }
}

/// One realized run of `kind` under the given shared randomness. The
/// realization is drawn from `support`; served agents of the profit extractor
/// are charged their expected payment divided by their service probability.
pub fn simulate_on(
    kind: MechanismKind,
    bids: &[f64],
    support: &Support,
    params: &ConsensusParams,
    randomness: SharedRandomness,
) -> Result<MechanismResult> {
    let eval = match kind {
        MechanismKind::PseudoVickrey => {
            check_bids(bids, support, 2)?;
            None
        }
        _ => Some(PrimeEvaluator::new(bids, support, params)?),
    };
    simulate_with(kind, bids, support, params, eval.as_ref(), randomness)
}

fn simulate_with(
    kind: MechanismKind,
    bids: &[f64],
    support: &Support,
    params: &ConsensusParams,
    eval: Option<&PrimeEvaluator<'_>>,
    randomness: SharedRandomness,
) -> Result<MechanismResult> {
    let arm = match kind {
        MechanismKind::PseudoVickrey => Arm::Vickrey,
        MechanismKind::CcepePrime => Arm::CcepePrime,
        MechanismKind::Ccepe => {
            let u: f64 = rng_from_seed(randomness.mix_seed).gen();
            if u < params.p {
                Arm::Vickrey
            } else {
                Arm::CcepePrime
            }
        }
    };
    let sys = sample_atom(support, &mut rng_from_seed(randomness.perm_seed));
    let mut ties = rng_from_seed(randomness.tie_seed);
    let (served, payments, agreeing, estimate) = match arm {
        Arm::Vickrey => {
            let (s, p) = realized_vickrey(bids, &sys, &mut ties);
            (s, p, Vec::new(), Vec::new())
        }
        Arm::CcepePrime => eval
            .expect("evaluator exists for the profit-extractor arm")
            .realized(randomness.sigma, &sys, &mut ties)?,
    };
    let mut x = vec![0.0; bids.len()];
    for &a in &served {
        x[a] = 1.0;
    }
    Ok(MechanismResult {
        kind,
        outcome: Outcome::new(bids, x, payments),
        served,
        arm,
        agreeing,
        estimate,
        randomness,
    })
}

/// One realized run on `env`.
pub fn simulate(
    kind: MechanismKind,
    bids: &[f64],
    env: &Environment,
    params: &ConsensusParams,
    randomness: SharedRandomness,
) -> Result<MechanismResult> {
    let support = payment_support(env, randomness.perm_seed)?;
    simulate_on(kind, bids, &support, params, randomness)
}

/// Expected revenue of `kind` over σ, realizations and ties.
pub fn expected_revenue(
    kind: MechanismKind,
    bids: &[f64],
    env: &Environment,
    params: &ConsensusParams,
    mode: Mode,
) -> Result<RevenueEstimate> {
    expected_revenue_with(kind, bids, env, params, mode, Parallelism::default())
}

pub fn expected_revenue_with(
    kind: MechanismKind,
    bids: &[f64],
    env: &Environment,
    params: &ConsensusParams,
    mode: Mode,
    par_mode: Parallelism,
) -> Result<RevenueEstimate> {
    match mode {
        Mode::Exact => {
            let support = env.exact_support()?;
            Ok(RevenueEstimate {
                mean: exact_revenue_on(kind, bids, &support, params, par_mode)?,
                half_width: 0.0,
            })
        }
        Mode::MonteCarlo { trials, seed } => {
            let support = payment_support(env, derive_seed(seed, u64::MAX))?;
            monte_carlo_revenue_on(kind, bids, &support, params, trials, seed, par_mode)
        }
    }
}

/// Exact `E[revenue]` against a fixed support.
pub fn exact_revenue_on(
    kind: MechanismKind,
    bids: &[f64],
    support: &Support,
    params: &ConsensusParams,
    par_mode: Parallelism,
) -> Result<f64> {
    let pv = || pseudo_vickrey(bids, support).map(|o| o.revenue);
    let prime = || PrimeEvaluator::new(bids, support, params)?.exact_revenue(par_mode);
    Ok(match kind {
        MechanismKind::PseudoVickrey => pv()?,
        MechanismKind::CcepePrime => prime()?,
        MechanismKind::Ccepe => params.p * pv()? + (1.0 - params.p) * prime()?,
    })
}

/// Monte-Carlo mean of realized revenue over `trials` runs seeded from `seed`.
pub fn monte_carlo_revenue_on(
    kind: MechanismKind,
    bids: &[f64],
    support: &Support,
    params: &ConsensusParams,
    trials: usize,
    seed: u64,
    par_mode: Parallelism,
) -> Result<RevenueEstimate> {
    if trials == 0 {
        return Err(Error::input(
            "Monte-Carlo estimation needs at least one trial",
        ));
    }
    let eval = match kind {
        MechanismKind::PseudoVickrey => {
            check_bids(bids, support, 2)?;
            None
        }
        _ => Some(PrimeEvaluator::new(bids, support, params)?),
    };
    let draws = par::map_indices(trials, par_mode, |t| {
        let r = SharedRandomness::from_seed(derive_seed(seed, t as u64));
        simulate_with(kind, bids, support, params, eval.as_ref(), r).map(|m| m.outcome.revenue)
    });
    let mut xs = Vec::with_capacity(trials);
    for d in draws {
        xs.push(d?);
    }
    let mean = xs.iter().sum::<f64>() / trials as f64;
    let half_width = if trials < 2 {
        0.0
    } else {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        1.96 * (var / trials as f64).sqrt()
    };
    Ok(RevenueEstimate { mean, half_width })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revcurve::{ef_payments_raw, efo_on, truncate_profile};

    fn dg(n: usize) -> Support {
        Environment::digital_goods(n)
            .unwrap()
            .exact_support()
            .unwrap()
    }

    fn p(c: f64, alpha: f64, m: usize, mix: f64) -> ConsensusParams {
        ConsensusParams::new(c, alpha, m, mix).unwrap()
    }

    #[test]
    fn vickrey_examples() {
        assert_eq!(pseudo_vickrey(&[3.0, 2.0], &dg(2)).unwrap().revenue, 2.0);
        let empty = Support::single(SetSystemRealization::new(2, vec![]).unwrap());
        assert_eq!(pseudo_vickrey(&[3.0, 2.0], &empty).unwrap().revenue, 0.0);
        let one = SetSystemRealization::new(3, vec![vec![0]]).unwrap();
        let env = Environment::single(one, true).unwrap();
        let r = expected_revenue(
            MechanismKind::PseudoVickrey,
            &[3.0, 2.0, 1.0],
            &env,
            &ConsensusParams::reference(),
            Mode::Exact,
        )
        .unwrap();
        assert!((r.mean - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.half_width, 0.0);
    }

    #[test]
    fn vickrey_ties_split_the_top() {
        let out = pseudo_vickrey(&[2.0, 2.0, 1.0], &dg(3)).unwrap();
        assert_eq!(out.allocation, vec![0.5, 0.5, 0.0]);
        assert_eq!(out.revenue, 2.0);
        assert!(out.utilities.iter().all(|&u| u.abs() < 1e-12));
    }

    #[test]
    fn prime_example_serves_only_the_low_agent_for_free() {
        let res = ccepe_prime(&[4.0, 4.0, 1.0], &dg(3), &p(2.0, 2.0, 1, 0.5), 0.0).unwrap();
        assert_eq!(res.agreeing, vec![2]);
        assert_eq!(res.estimate, vec![4.0, 0.0, 0.0]);
        assert_eq!(res.outcome.revenue, 0.0);
        assert_eq!(res.outcome.allocation[0], 0.0);
        assert_eq!(res.outcome.allocation[2], 0.0);
    }

    #[test]
    fn prime_with_everyone_agreeing_is_the_extractor() {
        let v = vec![1.0; 16];
        let support = dg(16);
        let params = p(2.0, 2.0, 1, 0.5);
        let res = ccepe_prime(&v, &support, &params, 0.0).unwrap();
        assert_eq!(res.agreeing.len(), 16);
        let pe = ProfitExtractor::new(&res.estimate)
            .unwrap()
            .outcome(&v, &support)
            .unwrap();
        assert_eq!(res.outcome, pe);
        assert!(res.outcome.payments[..8]
            .iter()
            .all(|&x| (x - 1.0).abs() < 1e-12));
        assert!((res.outcome.revenue - 8.0).abs() < 1e-9);
    }

    #[test]
    fn mixture_endpoints_and_linearity() {
        let v = [5.0, 4.0, 4.0, 2.0, 1.0];
        let env = Environment::k_unit(5, 2).unwrap();
        let support = env.exact_support().unwrap();
        for sigma in [0.1, 0.6] {
            let base = p(2.0, 2.0, 1, 1.0);
            assert_eq!(
                ccepe(&v, &support, &base, sigma).unwrap(),
                pseudo_vickrey(&v, &support).unwrap()
            );
            let zero = p(2.0, 2.0, 1, 0.0);
            assert_eq!(
                ccepe(&v, &support, &zero, sigma).unwrap(),
                ccepe_prime(&v, &support, &zero, sigma).unwrap().outcome
            );
        }
        let params = p(2.0, 2.0, 1, 0.3);
        let rev = |k| {
            expected_revenue(k, &v, &env, &params, Mode::Exact)
                .unwrap()
                .mean
        };
        let want = 0.3 * rev(MechanismKind::PseudoVickrey) + 0.7 * rev(MechanismKind::CcepePrime);
        assert!((rev(MechanismKind::Ccepe) - want).abs() < 1e-12);
    }

    #[test]
    fn vickrey_beats_top_envy_free_payment() {
        for v in [
            [3.0, 2.0, 1.0, 1.0],
            [5.0, 5.0, 5.0, 0.0],
            [9.0, 1.0, 1.0, 1.0],
        ] {
            for k in 1..=4 {
                let support = Environment::k_unit(4, k).unwrap().exact_support().unwrap();
                let t = truncate_profile(&v, 2).unwrap();
                let (_, x) = efo_on(&t, &support).unwrap();
                let ef = ef_payments_raw(&x, &t).unwrap();
                assert!(pseudo_vickrey(&v, &support).unwrap().revenue >= ef[0] - 1e-9);
            }
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_and_matches_exact() {
        let v = [6.0, 5.0, 3.0, 3.0, 2.0, 1.0];
        let env = Environment::digital_goods(6).unwrap();
        let params = p(1.5, 1.5, 1, 0.5);
        let mc = Mode::MonteCarlo {
            trials: 4000,
            seed: 11,
        };
        let a = expected_revenue(MechanismKind::Ccepe, &v, &env, &params, mc).unwrap();
        let b = expected_revenue_with(
            MechanismKind::Ccepe,
            &v,
            &env,
            &params,
            mc,
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(a, b);
        let exact = expected_revenue(MechanismKind::Ccepe, &v, &env, &params, Mode::Exact).unwrap();
        assert!(
            (a.mean - exact.mean).abs() <= 1.5 * a.half_width + 1e-9,
            "{a:?} vs {exact:?}"
        );
    }

    #[test]
    fn realized_runs_are_feasible_and_charge_only_served() {
        let v = [4.0, 3.0, 2.0, 2.0, 1.0];
        let sys = SetSystemRealization::new(5, vec![vec![0, 1], vec![2, 3, 4]]).unwrap();
        let env = Environment::single(sys, true).unwrap();
        let params = p(2.0, 2.0, 1, 0.5);
        for s in 0..50 {
            let r = simulate(
                MechanismKind::Ccepe,
                &v,
                &env,
                &params,
                SharedRandomness::from_seed(s),
            )
            .unwrap();
            for (i, &pay) in r.outcome.payments.iter().enumerate() {
                if !r.served.contains(&i) {
                    assert_eq!(pay, 0.0);
                }
            }
            let rec = r.record();
            assert_eq!(rec.revenue, r.outcome.revenue);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MechanismKind::ALL {
            assert_eq!(k.name().parse::<MechanismKind>().unwrap(), k);
        }
        assert!(matches!(
            "vcg".parse::<MechanismKind>(),
            Err(Error::Config(_))
        ));
    }
}
