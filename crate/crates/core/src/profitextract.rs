//! The profit extractor `PE_ṽ`: reject everyone unless the sorted bids
//! dominate the target profile, otherwise serve a maximum-weight feasible set
//! under the target's virtual values assigned by bid rank. Agents assigned a
//! zero weight are dropped from the chosen set, as in the optimal envy-free
//! allocation of the target. Payments follow from the payment identity,
//! integrated exactly over the finitely many reports at which the allocation
//! can change.

use rand::Rng;

use crate::envir::{
    drop_null_weights, weight_tolerance, Environment, SetSystemRealization, Support,
};
use crate::error::{Error, Result};
use crate::revcurve::{curve_of_values, ic_payment_from_rule, Outcome, StepRule};
use crate::seeds::rng_from_seed;
use crate::Mode;

const GUARD_TOL: f64 = 1e-12;

/// `PE_ṽ` for a fixed target `ṽ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfitExtractor {
    target: Vec<f64>,
    weights: Vec<f64>,
}

impl ProfitExtractor {
    pub fn new(target: &[f64]) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::input("the target profile is empty"));
        }
        if target.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::input("target values must be finite and nonnegative"));
        }
        if target.windows(2).any(|p| p[0] < p[1]) {
            return Err(Error::input("the target profile must be non-increasing"));
        }
        let weights = curve_of_values(target).virtual_values().to_vec();
        Ok(Self {
            target: target.to_vec(),
            weights,
        })
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// `φ̃` by rank.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    fn check_bids(&self, bids: &[f64]) -> Result<()> {
        if bids.len() != self.n() {
            return Err(Error::input(format!(
                "{} bids for a target over {} agents",
                bids.len(),
                self.n()
            )));
        }
        if bids.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::input("bids must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Agent indices by bid, highest first, ties by index.
    fn ranking(bids: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..bids.len()).collect();
        order.sort_by(|&a, &b| bids[b].total_cmp(&bids[a]).then(a.cmp(&b)));
        order
    }

    /// Per-agent weights, or `None` when some rank falls short of the target.
    pub fn agent_weights(&self, bids: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_bids(bids)?;
        let order = Self::ranking(bids);
        if order
            .iter()
            .zip(&self.target)
            .any(|(&a, &t)| t > bids[a] + GUARD_TOL)
        {
            return Ok(None);
        }
        let mut w = vec![0.0; bids.len()];
        for (rank, &a) in order.iter().enumerate() {
            w[a] = self.weights[rank];
        }
        Ok(Some(w))
    }

    /// The realized served set under one system and tie-break seed.
    pub fn served_set(
        &self,
        bids: &[f64],
        sys: &SetSystemRealization,
        tie_seed: u64,
    ) -> Result<Vec<usize>> {
        let mut rng = rng_from_seed(tie_seed);
        self.served_with(bids, sys, &mut rng)
    }

    pub(crate) fn served_with<R: Rng>(
        &self,
        bids: &[f64],
        sys: &SetSystemRealization,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if sys.n() != self.n() {
            return Err(Error::input("set system size differs from the target"));
        }
        match self.agent_weights(bids)? {
            None => Ok(Vec::new()),
            Some(w) => {
                let tol = weight_tolerance(&w);
                let mut set = sys.maximize(&w, rng)?;
                set.retain(|&a| w[a] > tol);
                Ok(set)
            }
        }
    }

    /// Expected service probability of every agent.
    pub fn allocation(&self, bids: &[f64], support: &Support) -> Result<Vec<f64>> {
        if support.n() != self.n() {
            return Err(Error::input("support size differs from the target"));
        }
        match self.agent_weights(bids)? {
            None => Ok(vec![0.0; bids.len()]),
            Some(w) => {
                let mut x = support.allocation(&w)?;
                drop_null_weights(&w, &mut x);
                Ok(x)
            }
        }
    }

    /// `x_agent(z, bids_{−agent})`.
    pub fn allocation_at(
        &self,
        bids: &[f64],
        agent: usize,
        z: f64,
        support: &Support,
    ) -> Result<f64> {
        if agent >= bids.len() {
            return Err(Error::input(format!("agent {agent} out of range")));
        }
        let mut b = bids.to_vec();
        b[agent] = z;
        Ok(self.allocation(&b, support)?[agent])
    }

    /// The allocation rule of `agent` as a function of its own report, cut
    /// at its bid. `at_bid` is the agent's allocation at its bid.
    pub fn rule(
        &self,
        bids: &[f64],
        agent: usize,
        at_bid: f64,
        support: &Support,
    ) -> Result<StepRule> {
        let breaks: Vec<f64> = self
            .target
            .iter()
            .copied()
            .chain(
                bids.iter()
                    .enumerate()
                    .filter(|&(b, _)| b != agent)
                    .map(|(_, &x)| x),
            )
            .collect();
        StepRule::probe(&breaks, bids[agent], at_bid, |z| {
            self.allocation_at(bids, agent, z, support)
        })
    }

    /// Expected allocation and exact incentive-compatible payments.
    pub fn outcome(&self, bids: &[f64], support: &Support) -> Result<Outcome> {
        let x = self.allocation(bids, support)?;
        if x.iter().all(|&xi| xi == 0.0) {
            return Ok(Outcome::new(bids, x, vec![0.0; bids.len()]));
        }
        let mut p = Vec::with_capacity(bids.len());
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                p.push(0.0);
                continue;
            }
            let rule = self.rule(bids, a, xa, support)?;
            p.push(ic_payment_from_rule(&rule, bids[a])?);
        }
        Ok(Outcome::new(bids, x, p))
    }
}

/// Served set of `PE_ṽ` on bids `v` under one realized system.
pub fn pe_served_set(
    target: &[f64],
    v: &[f64],
    sys: &SetSystemRealization,
    tie_seed: u64,
) -> Result<Vec<usize>> {
    ProfitExtractor::new(target)?.served_set(v, sys, tie_seed)
}

/// `x_agent(z, v_{−agent})` in expectation over the environment.
pub fn pe_allocation_at(
    target: &[f64],
    v: &[f64],
    agent: usize,
    z: f64,
    env: &Environment,
    mode: Mode,
) -> Result<f64> {
    let support = env.support(mode)?;
    ProfitExtractor::new(target)?.allocation_at(v, agent, z, &support)
}

/// Expected outcome of `PE_ṽ` on bids `v`.
pub fn pe_outcome(target: &[f64], v: &[f64], env: &Environment, mode: Mode) -> Result<Outcome> {
    if v.len() != env.n() {
        return Err(Error::input("bid count differs from environment size"));
    }
    let support = env.support(mode)?;
    ProfitExtractor::new(target)?.outcome(v, &support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revcurve::{ef_payments_raw, efo_on};

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    fn dg(n: usize) -> Environment {
        Environment::digital_goods(n).unwrap()
    }

    #[test]
    fn guard_rejects_everyone() {
        let sys = SetSystemRealization::uniform(2, 2);
        assert!(pe_served_set(&[4.0, 0.0], &[3.0, 2.0], &sys, 1)
            .unwrap()
            .is_empty());
        let out = pe_outcome(&[4.0, 0.0], &[3.0, 2.0], &dg(2), Mode::Exact).unwrap();
        assert_eq!(out.revenue, 0.0);
        assert!(out.allocation.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn positive_weights_serve_both() {
        let sys = SetSystemRealization::uniform(2, 2);
        let mut s = pe_served_set(&[2.0, 2.0], &[3.0, 2.0], &sys, 7).unwrap();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1]);
        let out = pe_outcome(&[2.0, 2.0], &[3.0, 2.0], &dg(2), Mode::Exact).unwrap();
        assert!(close(&out.payments, &[2.0, 2.0]));
        assert!((out.revenue - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_serve_nobody() {
        let out = pe_outcome(&[0.0, 0.0], &[1.0, 1.0], &dg(2), Mode::Exact).unwrap();
        assert!(close(&out.allocation, &[0.0, 0.0]));
        let sys = SetSystemRealization::uniform(2, 2);
        assert!(pe_served_set(&[0.0, 0.0], &[1.0, 1.0], &sys, 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn allocation_sweep() {
        let env = dg(2);
        let at =
            |z: f64| pe_allocation_at(&[2.0, 1.0], &[3.0, 0.0], 1, z, &env, Mode::Exact).unwrap();
        // guard fails below 1; rank two carries weight 0 up to 3
        assert_eq!(at(0.5), 0.0);
        assert_eq!(at(1.0), 0.0);
        assert_eq!(at(2.9), 0.0);
        assert_eq!(at(3.0), 0.0);
        assert_eq!(at(3.5), 1.0);
        let other =
            |z: f64| pe_allocation_at(&[2.0, 2.0], &[3.0, 0.0], 1, z, &env, Mode::Exact).unwrap();
        assert_eq!(other(1.9), 0.0);
        assert_eq!(other(2.0), 1.0);
        let mut prev = 0.0;
        for k in 0..200 {
            let x = at(k as f64 * 0.025);
            assert!(x >= prev - 1e-12);
            prev = x;
        }
    }

    #[test]
    fn zero_weight_rank_is_not_served() {
        let out = pe_outcome(&[2.0, 1.0], &[3.0, 2.0], &dg(2), Mode::Exact).unwrap();
        assert!(close(&out.allocation, &[1.0, 0.0]));
        assert!(close(&out.payments, &[2.0, 0.0]));
        let support = dg(2).exact_support().unwrap();
        let (efo, x) = efo_on(&[2.0, 1.0], &support).unwrap();
        assert!((out.revenue - efo).abs() < 1e-12);
        assert!(close(
            &ef_payments_raw(&x, &[2.0, 1.0]).unwrap(),
            &[2.0, 0.0]
        ));
    }

    #[test]
    fn payments_are_not_envy_free_payments() {
        let v = [3.0, 2.0, 1.0];
        let out = pe_outcome(&v, &v, &dg(3), Mode::Exact).unwrap();
        assert!(close(&out.allocation, &[1.0, 1.0, 0.0]));
        assert!(close(&out.payments, &[3.0, 2.0, 0.0]));
        let ef = ef_payments_raw(&out.allocation, &v).unwrap();
        assert!(close(&ef, &[2.0, 2.0, 0.0]));
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(pe_outcome(&[1.0], &[1.0, 1.0], &dg(2), Mode::Exact).is_err());
        assert!(ProfitExtractor::new(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn dominates_envy_free_payments_of_target() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let n = rng.gen_range(2..=5);
            let env = if trial % 2 == 0 {
                dg(n)
            } else {
                Environment::k_unit(n, rng.gen_range(1..=n)).unwrap()
            };
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            let t: Vec<f64> = v
                .iter()
                .map(|&x| (x * rng.gen_range(0.0..=1.0_f64)).floor())
                .collect();
            let mut t = t;
            t.sort_by(|a, b| b.total_cmp(a));
            for (ti, vi) in t.iter_mut().zip(&v) {
                *ti = ti.min(*vi);
            }
            let support = env.exact_support().unwrap();
            let out = ProfitExtractor::new(&t)
                .unwrap()
                .outcome(&v, &support)
                .unwrap();
            let (_, x) = efo_on(&t, &support).unwrap();
            let ef = ef_payments_raw(&x, &t).unwrap();
            for i in 0..n {
                assert!(
                    out.payments[i] >= ef[i] - 1e-9,
                    "v={v:?} t={t:?} p={:?} ef={ef:?}",
                    out.payments
                );
            }
        }
    }

    #[test]
    fn truthful_reporting_is_optimal() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..60 {
            let n = rng.gen_range(2..=4);
            let env = Environment::k_unit(n, rng.gen_range(1..=n)).unwrap();
            let support = env.exact_support().unwrap();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
            let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(0..3) as f64).collect();
            t.sort_by(|a, b| b.total_cmp(a));
            let pe = ProfitExtractor::new(&t).unwrap();
            let truth = pe.outcome(&v, &support).unwrap();
            for a in 0..n {
                for k in 0..=12 {
                    let z = k as f64 * 0.5;
                    let mut b = v.clone();
                    b[a] = z;
                    let dev = pe.outcome(&b, &support).unwrap();
                    let u = v[a] * dev.allocation[a] - dev.payments[a];
                    assert!(truth.utilities[a] >= u - 1e-9);
                }
            }
        }
    }
}
