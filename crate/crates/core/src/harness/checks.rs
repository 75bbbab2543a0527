//! Executable property checks. Each returns `Ok(None)` when the property
//! holds, `Ok(Some(reason))` on a violation, and `Err` when the instance
//! itself cannot be evaluated.

use crate::consensus::{
    build_estimated_profile, consensus_round, count_above, cross_checked_estimate,
    leave_out_agreement_probability, level, single_consensus_bound, t_consensus_probability,
    ConsensusParams,
};
use crate::envir::Support;
use crate::error::Result;
use crate::mechanisms::{ccepe, ccepe_prime, exact_revenue_on, pseudo_vickrey, MechanismKind};
use crate::par::Parallelism;
use crate::profitextract::ProfitExtractor;
use crate::revcurve::{
    curve_of_values, ef_payments_raw, efo_on, ic_payment_from_rule, truncate_profile, StepRule,
};

pub type Verdict = Result<Option<String>>;

pub const TOL: f64 = 1e-9;

fn fail(msg: String) -> Verdict {
    Ok(Some(msg))
}

/// Smallest nondecreasing concave majorant of `{(i, i·v_i)} ∪ {(0,0)}` by
/// brute force over chords of the running maximum.
pub fn envelope_oracle(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut y = vec![0.0_f64; n + 1];
    for i in 1..=n {
        y[i] = y[i - 1].max(i as f64 * v[i - 1]);
    }
    (1..=n)
        .map(|i| {
            let mut best = y[i];
            for a in 0..i {
                for b in i + 1..=n {
                    let t = (i - a) as f64 / (b - a) as f64;
                    best = best.max(y[a] + t * (y[b] - y[a]));
                }
            }
            best
        })
        .collect()
}

/// `curve` is the revenue curve of `v`: nondecreasing, concave, above every
/// point and no larger than the brute-force envelope.
pub fn envelope(v: &[f64], curve: &[f64]) -> Verdict {
    let n = v.len();
    if curve.len() != n {
        return fail(format!("curve has {} entries for {n} agents", curve.len()));
    }
    let scale = 1.0 + curve.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let tol = TOL * scale;
    let mut prev = (0.0, f64::INFINITY);
    for (i, &r) in curve.iter().enumerate() {
        let slope = r - prev.0;
        if slope < -tol {
            return fail(format!("curve decreases at index {}", i + 1));
        }
        if slope > prev.1 + tol {
            return fail(format!("curve is not concave at index {}", i + 1));
        }
        if r < (i + 1) as f64 * v[i] - tol {
            return fail(format!(
                "curve {r} lies below point {} at index {}",
                (i + 1) as f64 * v[i],
                i + 1
            ));
        }
        prev = (r, slope);
    }
    let oracle = envelope_oracle(v);
    for (i, (&r, &o)) in curve.iter().zip(&oracle).enumerate() {
        if (r - o).abs() > tol {
            return fail(format!(
                "curve {r} differs from envelope {o} at index {}",
                i + 1
            ));
        }
    }
    Ok(None)
}

/// Envy-free payments of the optimal allocation add up to its revenue and
/// leave nobody envious.
pub fn envy_free_payments(v: &[f64], support: &Support) -> Verdict {
    let (efo, x) = efo_on(v, support)?;
    let ef = ef_payments_raw(&x, v)?;
    let total: f64 = ef.iter().sum();
    if (total - efo).abs() > TOL * (1.0 + efo) {
        return fail(format!(
            "envy-free payments sum to {total} but the optimum is {efo}"
        ));
    }
    for i in 0..v.len() {
        let own = v[i] * x[i] - ef[i];
        for j in 0..v.len() {
            let other = v[i] * x[j] - ef[j];
            if other > own + TOL * (1.0 + v[i]) {
                return fail(format!("agent {i} envies agent {j}: {other} > {own}"));
            }
        }
    }
    Ok(None)
}

/// Payments from the payment identity on a step rule make truth optimal
/// among all reports on the refined grid, and match a direct area sum.
pub fn step_rule_payments(rule: &StepRule, value: f64) -> Verdict {
    let p = ic_payment_from_rule(rule, value)?;
    let u = value * rule.level_at(value) - p;
    let grid = refine(
        rule.breakpoints()
            .iter()
            .copied()
            .chain([0.0, value, 2.0 * value + 1.0])
            .collect(),
    );
    for z in grid {
        let pz = ic_payment_from_rule(rule, z)?;
        let uz = value * rule.level_at(z) - pz;
        if uz > u + TOL * (1.0 + value) {
            return fail(format!("reporting {z} instead of {value} gains {}", uz - u));
        }
    }
    let mut area = 0.0;
    let mut lo = 0.0;
    let mut level = rule.level_at(0.0);
    for &b in rule.breakpoints().iter().filter(|&&b| b < value) {
        area += (b - lo) * level;
        lo = b;
        level = rule.level_at(b);
    }
    area += (value - lo) * level;
    let direct = value * rule.level_at(value) - area;
    if (direct - p).abs() > TOL * (1.0 + value) {
        return fail(format!("payment {p} differs from area formula {direct}"));
    }
    Ok(None)
}

/// Sorted unique points plus midpoints between consecutive ones.
pub fn refine(mut pts: Vec<f64>) -> Vec<f64> {
    pts.retain(|x| x.is_finite() && *x >= 0.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut out = Vec::with_capacity(2 * pts.len());
    for w in pts.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    if let Some(&last) = pts.last() {
        out.push(last);
    }
    out
}

/// Consensus rounding agrees with direct enumeration of grid points.
pub fn rounding(sigma: f64, s: f64, c: f64) -> Verdict {
    let got = consensus_round(sigma, s, c);
    let span = (s.ln() / c.ln()).abs().ceil() as i64 + 3;
    let want = (-span..=span)
        .map(|d| c.powf(sigma + d as f64))
        .filter(|&g| g <= s * (1.0 + 1e-12))
        .fold(0.0, f64::max);
    if (got - want).abs() > 1e-9 * want.max(1e-300) {
        return fail(format!(
            "round(σ={sigma}, s={s}, c={c}) = {got}, enumeration gives {want}"
        ));
    }
    Ok(None)
}

/// `ṽ ≤ v` and `R̃ ≥ R^(m')/(cα)` pointwise.
pub fn estimate_bounds(sigma: f64, v: &[f64], params: &ConsensusParams) -> Verdict {
    let est = build_estimated_profile(sigma, v, params);
    for (i, (&e, &x)) in est.values().iter().zip(v).enumerate() {
        if e > x * (1.0 + 1e-12) {
            return fail(format!("estimate {e} exceeds value {x} at rank {}", i + 1));
        }
    }
    let trunc = truncate_profile(v, params.truncation_index())?;
    let r = curve_of_values(&trunc);
    let ratio = params.curve_ratio();
    for (i, (&rt, &rm)) in est.curve().values().iter().zip(r.values()).enumerate() {
        if rt < rm / ratio - TOL * (1.0 + rm) {
            return fail(format!(
                "estimated curve {rt} < {rm}/{ratio} at index {}",
                i + 1
            ));
        }
    }
    Ok(None)
}

/// Exact single-statistic consensus probability is at least its bound, for
/// every level with more than `t` agents above it.
pub fn single_consensus(v: &[f64], params: &ConsensusParams, t: usize) -> Verdict {
    let (Some(top), Some(bottom)) = (
        level(v[0], params.alpha),
        v.iter().rev().find_map(|&x| level(x, params.alpha)),
    ) else {
        return Ok(None);
    };
    for j in bottom..=top {
        let n_j = count_above(v, params.alpha, j);
        if n_j <= t || t >= v.len() {
            continue;
        }
        let prob = t_consensus_probability(v, params, t, j)?;
        let bound = single_consensus_bound(t, n_j, params.c);
        if prob < bound - TOL {
            return fail(format!("Pr[{t}-consensus at j={j}] = {prob} < {bound}"));
        }
    }
    Ok(None)
}

/// Exact probability that no removal of at most two agents changes the
/// estimated profile, against the agreement bound.
pub fn total_agreement(v: &[f64], params: &ConsensusParams, slack: f64) -> Verdict {
    let prob = leave_out_agreement_probability(v, params, 2);
    let bound = params.agreement_bound(2);
    if prob < bound - slack {
        return fail(format!("agreement probability {prob} < bound {bound}"));
    }
    Ok(None)
}

/// Leave-two-out estimates by brute force over all unordered pairs.
pub fn naive_cross_check(
    sigma: f64,
    v: &[f64],
    params: &ConsensusParams,
) -> (Vec<usize>, Vec<(i32, usize)>) {
    let n = v.len();
    let without = |a: usize, b: usize| -> Vec<(i32, usize)> {
        let rest: Vec<f64> = (0..n).filter(|&k| k != a && k != b).map(|k| v[k]).collect();
        build_estimated_profile(sigma, &rest, params)
            .blocks()
            .to_vec()
    };
    let mut agreeing = Vec::new();
    let mut common = Vec::new();
    for i in 0..n {
        let partners: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let first = without(i, partners[0]);
        if partners[1..].iter().all(|&j| without(i, j) == first) {
            if agreeing.is_empty() {
                common = first;
            }
            agreeing.push(i);
        }
    }
    (agreeing, common)
}

/// Cross-checking matches the brute-force definition, and an agreeing agent
/// can change its value without changing the agreeing set or the estimate.
pub fn cross_check(sigma: f64, v: &[f64], params: &ConsensusParams, probes: &[f64]) -> Verdict {
    let cc = cross_checked_estimate(sigma, v, params)?;
    let (agreeing, common) = naive_cross_check(sigma, v, params);
    if cc.agreeing != agreeing {
        return fail(format!(
            "agreeing set {:?}, brute force {agreeing:?}",
            cc.agreeing
        ));
    }
    if !agreeing.is_empty() && cc.estimate.blocks() != common.as_slice() {
        return fail(format!(
            "estimate {:?}, brute force {common:?}",
            cc.estimate.blocks()
        ));
    }
    for i in 0..v.len() {
        for &z in probes {
            let mut w = v.to_vec();
            w[i] = z;
            let after = cross_checked_estimate(sigma, &w, params)?;
            let before_in = cc.agreeing.contains(&i);
            let after_in = after.agreeing.contains(&i);
            if before_in != after_in {
                return fail(format!(
                    "agent {i} membership flips when its value moves to {z}"
                ));
            }
            if before_in && after.estimate.blocks() != cc.estimate.blocks() {
                return fail(format!(
                    "estimate seen by agreeing agent {i} changes when its value moves to {z}"
                ));
            }
        }
    }
    Ok(None)
}

/// Every agent's profit-extractor payment is at least its envy-free payment
/// in the optimal envy-free outcome of the target. Vacuous unless the
/// target lies below `v` rank by rank.
pub fn extractor_dominance(target: &[f64], v: &[f64], support: &Support) -> Verdict {
    if target.iter().zip(v).any(|(t, x)| t > x) {
        return Ok(None);
    }
    let out = ProfitExtractor::new(target)?.outcome(v, support)?;
    let (_, x) = efo_on(target, support)?;
    let ef = ef_payments_raw(&x, target)?;
    for (i, (&paid, &owed)) in out.payments.iter().zip(&ef).enumerate() {
        if paid < owed - TOL {
            return fail(format!(
                "payment {} of rank {} below envy-free payment {}",
                paid,
                i + 1,
                owed
            ));
        }
    }
    Ok(None)
}

/// The profit extractor on the estimated profile earns at least
/// `EFO(v^(m'))/(cα)`.
pub fn extractor_revenue(
    sigma: f64,
    v: &[f64],
    support: &Support,
    params: &ConsensusParams,
) -> Verdict {
    let est = build_estimated_profile(sigma, v, params);
    let rev = ProfitExtractor::new(est.values())?
        .outcome(v, support)?
        .revenue;
    let (bench, _) = efo_on(&truncate_profile(v, params.truncation_index())?, support)?;
    let bound = bench / params.curve_ratio();
    if rev < bound - TOL {
        return fail(format!("extractor revenue {rev} < {bound}"));
    }
    Ok(None)
}

/// Deviation grid for `agent`: other bids, the given thresholds, zero, a high
/// report, and midpoints.
pub fn deviation_grid(v: &[f64], agent: usize, thresholds: &[f64]) -> Vec<f64> {
    let top = v.iter().chain(thresholds).fold(0.0_f64, |m, x| m.max(*x));
    let pts: Vec<f64> = v
        .iter()
        .enumerate()
        .filter(|&(b, _)| b != agent)
        .map(|(_, &x)| x)
        .chain(thresholds.iter().copied())
        .chain([0.0, v[agent], 1.5 * top + 1.0])
        .collect();
    refine(pts)
}

/// Powers of α spanning the values, the scales consensus estimates can take.
pub fn scale_points(v: &[f64], alpha: f64) -> Vec<f64> {
    let levels: Vec<i32> = v.iter().filter_map(|&x| level(x, alpha)).collect();
    match (levels.iter().min(), levels.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo - 1..=hi + 1).map(|j| alpha.powi(j)).collect(),
        _ => Vec::new(),
    }
}

/// Truthful reporting maximizes expected utility against every deviation on
/// the grid, with `outcome` the expected outcome on a bid vector.
pub fn truthful<F>(v: &[f64], thresholds: &[f64], mut outcome: F) -> Verdict
where
    F: FnMut(&[f64]) -> Result<crate::revcurve::Outcome>,
{
    let truth = outcome(v)?;
    for a in 0..v.len() {
        let u = v[a] * truth.allocation[a] - truth.payments[a];
        let mut prev_x = f64::NEG_INFINITY;
        for z in deviation_grid(v, a, thresholds) {
            let mut b = v.to_vec();
            b[a] = z;
            let dev = outcome(&b)?;
            let uz = v[a] * dev.allocation[a] - dev.payments[a];
            if uz > u + TOL * (1.0 + v[a]) {
                return fail(format!(
                    "agent {a} with value {} gains {} by reporting {z}",
                    v[a],
                    uz - u
                ));
            }
            if dev.allocation[a] < prev_x - TOL {
                return fail(format!(
                    "allocation of agent {a} drops when its report rises to {z}"
                ));
            }
            prev_x = dev.allocation[a];
        }
    }
    Ok(None)
}

/// The profit extractor is truthful and monotone.
pub fn extractor_truthful(target: &[f64], v: &[f64], support: &Support) -> Verdict {
    let pe = ProfitExtractor::new(target)?;
    truthful(v, target, |b| pe.outcome(b, support))
}

/// `CCEPE'` and `CCEPE` at a fixed σ are truthful and monotone.
pub fn composition_truthful(
    sigma: f64,
    v: &[f64],
    support: &Support,
    params: &ConsensusParams,
) -> Verdict {
    let thresholds = scale_points(v, params.alpha);
    if let Some(msg) = truthful(v, &thresholds, |b| {
        Ok(ccepe_prime(b, support, params, sigma)?.outcome)
    })? {
        return fail(format!("ccepe_prime: {msg}"));
    }
    if let Some(msg) = truthful(v, &thresholds, |b| ccepe(b, support, params, sigma))? {
        return fail(format!("ccepe: {msg}"));
    }
    Ok(None)
}

/// Pseudo-Vickrey earns at least the top agent's envy-free payment in the
/// optimal envy-free outcome of `v^(2)`.
pub fn vickrey_top_payment(v: &[f64], support: &Support) -> Verdict {
    let rev = pseudo_vickrey(v, support)?.revenue;
    let t = truncate_profile(v, 2)?;
    let (_, x) = efo_on(&t, support)?;
    let ef1 = ef_payments_raw(&x, &t)?[0];
    if rev < ef1 - TOL {
        return fail(format!(
            "Pseudo-Vickrey revenue {rev} < top envy-free payment {ef1}"
        ));
    }
    Ok(None)
}

/// `EFO(v^(2)) ≤ m'·Rev(Vickrey) + EFO(v^(m'))`.
pub fn decomposition(v: &[f64], support: &Support, m_prime: usize) -> Verdict {
    let rev = pseudo_vickrey(v, support)?.revenue;
    let (b2, _) = efo_on(&truncate_profile(v, 2)?, support)?;
    let (bm, _) = efo_on(&truncate_profile(v, m_prime)?, support)?;
    let rhs = m_prime as f64 * rev + bm;
    if b2 > rhs + 1e-9 * (1.0 + b2) {
        return fail(format!("EFO(v^(2)) = {b2} > {m_prime}·{rev} + {bm}"));
    }
    Ok(None)
}

/// `E[Rev(CCEPE')] ≥ EFO(v^(m'))/β'`, exact over σ.
pub fn composition_revenue(v: &[f64], support: &Support, params: &ConsensusParams) -> Verdict {
    let beta = params.beta_prime();
    if !beta.is_finite() {
        return Ok(None);
    }
    let rev = exact_revenue_on(
        MechanismKind::CcepePrime,
        v,
        support,
        params,
        Parallelism::default(),
    )?;
    let (bm, _) = efo_on(&truncate_profile(v, params.truncation_index())?, support)?;
    if rev < bm / beta - TOL * (1.0 + bm) {
        return fail(format!("E[ccepe_prime] = {rev} < {bm}/{beta}"));
    }
    Ok(None)
}

/// `E[Rev(CCEPE)]·bound ≥ EFO(v^(2))(1 − 1e−6)`, exact over σ. Returns the
/// revenue and benchmark alongside the verdict.
pub fn end_to_end(
    v: &[f64],
    support: &Support,
    params: &ConsensusParams,
    bound: f64,
) -> Result<(f64, f64, Option<String>)> {
    let rev = exact_revenue_on(
        MechanismKind::Ccepe,
        v,
        support,
        params,
        Parallelism::default(),
    )?;
    let (b2, _) = efo_on(&truncate_profile(v, 2)?, support)?;
    let verdict = if rev * bound < b2 - 1e-6 * b2 {
        Some(format!(
            "E[ccepe]·{bound} = {} < EFO(v^(2)) = {b2}",
            rev * bound
        ))
    } else {
        None
    };
    Ok((rev, b2, verdict))
}
