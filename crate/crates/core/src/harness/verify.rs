//! Verification suites: each runs its properties on a stored regression
//! corpus and then on `budget` random cases, stopping at the first violation
//! and shrinking it to a small reproducing instance.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use super::checks::{self, Verdict};
use super::instances::{fuzz_environment, fuzz_profile, FuzzFamily};
use crate::consensus::{count_above, level, ConsensusParams};
use crate::envir::{Environment, EnvironmentDoc, EnvironmentKind, SetSystemRealization};
use crate::error::{Error, Result};
use crate::revcurve::{curve_of_values, StepRule};
use crate::seeds::{derive_seed, rng_from_seed};

pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Payments,
    Envelope,
    Consensus,
    Crosscheck,
    Pe,
    Mechanisms,
    Endtoend,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Self::Payments,
        Self::Envelope,
        Self::Consensus,
        Self::Crosscheck,
        Self::Pe,
        Self::Mechanisms,
        Self::Endtoend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Payments => "payments",
            Self::Envelope => "envelope",
            Self::Consensus => "consensus",
            Self::Crosscheck => "crosscheck",
            Self::Pe => "pe",
            Self::Mechanisms => "mechanisms",
            Self::Endtoend => "endtoend",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!(
                    "unknown suite `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Deliberate defects used as negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Replace the revenue curve under test by the raw points `i·v_i`.
    CorruptEnvelope,
}

impl FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrupt-envelope" => Ok(Self::CorruptEnvelope),
            other => Err(Error::config(format!("unknown mutation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyOptions {
    pub budget: usize,
    pub seed: u64,
    pub mutation: Option<Mutation>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            budget: 100,
            seed: DEFAULT_SEED,
            mutation: None,
        }
    }
}

/// One instance a suite evaluates.
#[derive(Clone, Debug)]
pub struct Case {
    pub v: Vec<f64>,
    pub env: Environment,
    pub sigma: f64,
    pub params: ConsensusParams,
    /// Target profile for profit-extractor properties (may be empty).
    pub target: Vec<f64>,
}

/// Serializable form of a [`Case`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseDoc {
    pub values: Vec<f64>,
    pub environment: EnvironmentDoc,
    pub sigma: f64,
    pub c: f64,
    pub alpha: f64,
    pub m: usize,
    pub p: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub target: Vec<f64>,
}

impl Case {
    pub fn doc(&self) -> Result<CaseDoc> {
        Ok(CaseDoc {
            values: self.v.clone(),
            environment: self.env.to_doc()?,
            sigma: self.sigma,
            c: self.params.c,
            alpha: self.params.alpha,
            m: self.params.m,
            p: self.params.p,
            target: self.target.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Counterexample {
    pub property: String,
    pub reason: String,
    pub instance: CaseDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub regression_cases: usize,
    pub random_cases: usize,
    pub checks: usize,
    pub counterexample: Option<Counterexample>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

type Property = fn(&Case, Option<Mutation>) -> Verdict;

fn properties(suite: Suite) -> &'static [(&'static str, Property)] {
    match suite {
        Suite::Payments => &[
            ("envy_free_payments", p_envy_free),
            ("payment_identity", p_step_rule),
        ],
        Suite::Envelope => &[("revenue_curve", p_envelope)],
        Suite::Consensus => &[
            ("rounding", p_rounding),
            ("estimate_bounds", p_estimate_bounds),
            ("single_consensus", p_single_consensus),
            ("total_agreement", p_total_agreement),
        ],
        Suite::Crosscheck => &[("cross_check", p_cross_check)],
        Suite::Pe => &[
            ("extractor_dominance", p_dominance),
            ("extractor_truthful", p_pe_truthful),
            ("extractor_revenue", p_pe_revenue),
        ],
        Suite::Mechanisms => &[
            ("vickrey_top_payment", p_vickrey),
            ("decomposition", p_decomposition),
            ("composition_revenue", p_composition_revenue),
            ("composition_truthful", p_composition_truthful),
        ],
        Suite::Endtoend => &[
            ("end_to_end", p_end_to_end),
            ("decomposition", p_decomposition),
        ],
    }
}

fn p_envy_free(c: &Case, _: Option<Mutation>) -> Verdict {
    checks::envy_free_payments(&c.v, &c.env.exact_support()?)
}

fn p_step_rule(c: &Case, _: Option<Mutation>) -> Verdict {
    let mut breaks: Vec<f64> = c.v.iter().copied().filter(|&x| x > 0.0).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let k = breaks.len();
    let levels: Vec<f64> = (0..=k).map(|i| i as f64 / (k.max(1)) as f64).collect();
    let rule = StepRule::new(breaks, levels)?;
    let value = c.sigma * (c.v[0] + 1.0);
    checks::step_rule_payments(&rule, value)
}

fn p_envelope(c: &Case, m: Option<Mutation>) -> Verdict {
    let curve = match m {
        Some(Mutation::CorruptEnvelope) => {
            c.v.iter()
                .enumerate()
                .map(|(i, &x)| (i + 1) as f64 * x)
                .collect()
        }
        None => curve_of_values(&c.v).values().to_vec(),
    };
    checks::envelope(&c.v, &curve)
}

fn p_rounding(c: &Case, _: Option<Mutation>) -> Verdict {
    for &s in &c.v {
        if s > 0.0 {
            if let Some(r) = checks::rounding(c.sigma, s, c.params.c)? {
                return Ok(Some(r));
            }
        }
    }
    Ok(None)
}

fn p_estimate_bounds(c: &Case, _: Option<Mutation>) -> Verdict {
    checks::estimate_bounds(c.sigma, &c.v, &c.params)
}

fn p_single_consensus(c: &Case, _: Option<Mutation>) -> Verdict {
    for t in 1..=2.min(c.v.len() - 1) {
        if let Some(r) = checks::single_consensus(&c.v, &c.params, t)? {
            return Ok(Some(r));
        }
    }
    Ok(None)
}

/// Agents at the highest scale level.
pub fn top_level_count(v: &[f64], alpha: f64) -> usize {
    match level(v[0], alpha) {
        Some(j) => count_above(v, alpha, j),
        None => 0,
    }
}

/// Instances where the agreement bound is asserted.
pub const AGREEMENT_MIN_TOP: usize = 40;

fn p_total_agreement(c: &Case, _: Option<Mutation>) -> Verdict {
    if top_level_count(&c.v, c.params.alpha) < AGREEMENT_MIN_TOP {
        return Ok(None);
    }
    checks::total_agreement(&c.v, &c.params, 0.02)
}

fn p_cross_check(c: &Case, _: Option<Mutation>) -> Verdict {
    let mut probes = checks::scale_points(&c.v, c.params.alpha);
    probes.extend([0.0, 2.0 * c.v[0] + 1.0]);
    checks::cross_check(c.sigma, &c.v, &c.params, &probes)
}

fn p_dominance(c: &Case, _: Option<Mutation>) -> Verdict {
    checks::extractor_dominance(&c.target, &c.v, &c.env.exact_support()?)
}

fn p_pe_truthful(c: &Case, _: Option<Mutation>) -> Verdict {
    checks::extractor_truthful(&c.target, &c.v, &c.env.exact_support()?)
}

fn p_pe_revenue(c: &Case, _: Option<Mutation>) -> Verdict {
    checks::extractor_revenue(c.sigma, &c.v, &c.env.exact_support()?, &c.params)
}

fn p_vickrey(c: &Case, _: Option<Mutation>) -> Verdict {
    checks::vickrey_top_payment(&c.v, &c.env.exact_support()?)
}

fn p_decomposition(c: &Case, _: Option<Mutation>) -> Verdict {
    checks::decomposition(&c.v, &c.env.exact_support()?, c.params.truncation_index())
}

fn p_composition_revenue(c: &Case, _: Option<Mutation>) -> Verdict {
    if c.v.len() < 3 {
        return Ok(None);
    }
    checks::composition_revenue(&c.v, &c.env.exact_support()?, &c.params)
}

fn p_composition_truthful(c: &Case, _: Option<Mutation>) -> Verdict {
    if c.v.len() < 3 || c.v.len() > 6 {
        return Ok(None);
    }
    checks::composition_truthful(c.sigma, &c.v, &c.env.exact_support()?, &c.params)
}

fn p_end_to_end(c: &Case, _: Option<Mutation>) -> Verdict {
    if c.v.len() < 3 {
        return Ok(None);
    }
    let (_, _, verdict) =
        checks::end_to_end(&c.v, &c.env.exact_support()?, &c.params, c.params.beta())?;
    Ok(verdict)
}

fn params(c: f64, alpha: f64, m: usize) -> ConsensusParams {
    ConsensusParams::new(c, alpha, m, 0.5).expect("valid regression parameters")
}

fn case(v: &[f64], env: Environment, sigma: f64, params: ConsensusParams, target: &[f64]) -> Case {
    Case {
        v: v.to_vec(),
        env,
        sigma,
        params,
        target: target.to_vec(),
    }
}

fn dg(n: usize) -> Environment {
    Environment::digital_goods(n).expect("valid size")
}

/// Stored instances, built from the documented module examples.
pub fn regression_corpus(suite: Suite) -> Vec<Case> {
    let p2 = params(2.0, 2.0, 1);
    let cor = ConsensusParams::reference();
    let eights: Vec<f64> = [4.0; 8].iter().chain([1.0; 8].iter()).copied().collect();
    let one_slot = Environment::single(
        SetSystemRealization::new(3, vec![vec![0]]).expect("valid"),
        true,
    )
    .expect("valid");
    match suite {
        Suite::Payments | Suite::Envelope => vec![
            case(&[3.0, 2.0, 1.0], dg(3), 0.5, p2, &[]),
            case(&[4.0, 4.0, 1.0, 1.0], dg(4), 0.25, p2, &[]),
            case(&[1.0, 1.0], dg(2), 0.5, p2, &[]),
            case(
                &[10.0, 1.0],
                Environment::k_unit(2, 1).expect("valid"),
                0.7,
                p2,
                &[],
            ),
            case(&[5.0, 0.0, 0.0], dg(3), 0.1, p2, &[]),
            case(&eights, dg(16), 0.3, p2, &[]),
            case(&[3.0, 2.0, 1.0], one_slot, 0.9, p2, &[]),
        ],
        Suite::Consensus | Suite::Crosscheck => vec![
            case(&eights, dg(16), 0.0, p2, &[]),
            case(&eights, dg(16), 0.5, p2, &[]),
            case(
                &[4.0, 4.0, 4.0, 4.0, 1.0],
                dg(5),
                0.0,
                params(2.0, 2.0, 2),
                &[],
            ),
            case(&[4.0, 4.0, 1.0, 1.0], dg(4), 0.0, p2, &[]),
            case(&[1.0; 16], dg(16), 0.0, p2, &[]),
            case(&[4.0, 4.0, 1.0], dg(3), 0.0, p2, &[]),
            case(&[5.0, 3.0, 1.0], dg(3), 0.4, p2, &[]),
            case(&[1.0; 60], dg(60), 0.2, cor, &[]),
        ],
        Suite::Pe => vec![
            case(&[3.0, 2.0], dg(2), 0.0, p2, &[4.0, 0.0]),
            case(&[3.0, 2.0], dg(2), 0.0, p2, &[2.0, 2.0]),
            case(&[3.0, 2.0], dg(2), 0.0, p2, &[2.0, 1.0]),
            case(&[1.0, 1.0], dg(2), 0.0, p2, &[0.0, 0.0]),
            case(&[3.0, 2.0, 1.0], dg(3), 0.0, p2, &[3.0, 2.0, 1.0]),
            case(&[3.0, 2.0, 1.0], one_slot, 0.0, p2, &[2.0, 1.0, 1.0]),
            case(
                &[1.0; 16],
                dg(16),
                0.0,
                p2,
                &[
                    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                ],
            ),
        ],
        Suite::Mechanisms | Suite::Endtoend => vec![
            case(
                &[3.0, 2.0, 1.0],
                dg(3),
                0.0,
                if suite == Suite::Endtoend { cor } else { p2 },
                &[],
            ),
            case(
                &[3.0, 2.0, 1.0],
                one_slot,
                0.3,
                if suite == Suite::Endtoend { cor } else { p2 },
                &[],
            ),
            case(
                &[4.0, 4.0, 1.0],
                dg(3),
                0.0,
                if suite == Suite::Endtoend { cor } else { p2 },
                &[],
            ),
            case(
                &[1.0; 16],
                dg(16),
                0.0,
                if suite == Suite::Endtoend {
                    cor
                } else {
                    params(4.0, 4.0, 8)
                },
                &[],
            ),
            case(&[1.0; 40], dg(40), 0.6, cor, &[]),
            case(
                &[10.0, 1.0, 1.0, 1.0],
                Environment::k_unit(4, 2).expect("valid"),
                0.5,
                cor,
                &[],
            ),
        ],
    }
}

fn random_params<R: Rng>(rng: &mut R) -> ConsensusParams {
    ConsensusParams::new(
        rng.gen_range(1.2..3.0),
        rng.gen_range(1.2..3.0),
        rng.gen_range(1..=3),
        rng.gen_range(0.1..0.9),
    )
    .expect("sampled inside the valid range")
}

/// Parameters with a finite composition bound.
fn bounded_params<R: Rng>(rng: &mut R) -> ConsensusParams {
    loop {
        let p = ConsensusParams::new(
            rng.gen_range(1.5..4.0),
            rng.gen_range(1.5..4.0),
            rng.gen_range(4..=12),
            rng.gen_range(0.1..0.9),
        )
        .expect("sampled inside the valid range");
        if p.beta_prime().is_finite() {
            return p;
        }
    }
}

fn random_target<R: Rng>(v: &[f64], rng: &mut R) -> Vec<f64> {
    let mut t: Vec<f64> = v
        .iter()
        .map(|&x| match rng.gen_range(0..3) {
            0 => x,
            1 => 0.0,
            _ => x * rng.gen_range(0.0..1.0),
        })
        .collect();
    t.sort_by(|a, b| b.total_cmp(a));
    for (ti, vi) in t.iter_mut().zip(v) {
        *ti = ti.min(*vi);
    }
    t
}

/// A random case for `suite`; `index` picks among sub-families.
pub fn random_case<R: Rng>(suite: Suite, index: usize, rng: &mut R) -> Result<Case> {
    let family = FuzzFamily::ALL[index % FuzzFamily::ALL.len()];
    let small = |rng: &mut R, max: usize| rng.gen_range(3..=max);
    let (n, family, params) = match suite {
        Suite::Payments | Suite::Envelope => (small(rng, 6), family, random_params(rng)),
        Suite::Consensus | Suite::Crosscheck => (
            rng.gen_range(3..=24),
            FuzzFamily::DigitalGoods,
            random_params(rng),
        ),
        Suite::Pe => (small(rng, 5), family, random_params(rng)),
        Suite::Mechanisms => {
            if index % 5 == 4 {
                (
                    rng.gen_range(20..=60),
                    FuzzFamily::DigitalGoods,
                    bounded_params(rng),
                )
            } else {
                (small(rng, 5), family, random_params(rng))
            }
        }
        Suite::Endtoend => {
            if index % 10 == 9 {
                (
                    rng.gen_range(20..=80),
                    FuzzFamily::DigitalGoods,
                    ConsensusParams::reference(),
                )
            } else {
                (small(rng, 6), family, ConsensusParams::reference())
            }
        }
    };
    let env = fuzz_environment(family, n, rng)?;
    let v = fuzz_profile(n, rng);
    let target = if suite == Suite::Pe {
        random_target(&v, rng)
    } else {
        Vec::new()
    };
    Ok(Case {
        v,
        env,
        sigma: rng.gen(),
        params,
        target,
    })
}

/// Smaller variants of a case that keep its preconditions.
fn shrink_candidates(c: &Case) -> Vec<Case> {
    let mut out = Vec::new();
    let n = c.v.len();
    let resized = |m: usize| -> Option<Environment> {
        match c.env.kind() {
            EnvironmentKind::DigitalGoods { .. } => Environment::digital_goods(m).ok(),
            EnvironmentKind::KUnit { k, .. } => Environment::k_unit(m, (*k).min(m)).ok(),
            _ => None,
        }
    };
    if n > 3 && c.target.is_empty() {
        if let Some(env) = resized(n - 1) {
            for drop in 0..n {
                let mut v = c.v.clone();
                v.remove(drop);
                out.push(Case {
                    v,
                    env: env.clone(),
                    ..c.clone()
                });
            }
        }
    }
    let simpler = [|x: f64| x.floor(), |x: f64| (x * 10.0).round() / 10.0];
    for f in simpler {
        let mut v: Vec<f64> = c.v.iter().map(|&x| f(x)).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let dominated = c.target.iter().zip(&v).all(|(t, x)| t <= x);
        if v != c.v && dominated {
            out.push(Case { v, ..c.clone() });
        }
    }
    out
}

fn shrink(mut c: Case, prop: Property, mutation: Option<Mutation>) -> (Case, String) {
    let mut reason = prop(&c, mutation).ok().flatten().unwrap_or_default();
    'outer: for _ in 0..64 {
        for cand in shrink_candidates(&c) {
            if let Ok(Some(r)) = prop(&cand, mutation) {
                c = cand;
                reason = r;
                continue 'outer;
            }
        }
        break;
    }
    (c, reason)
}

/// Run `suite` by name with the default seed.
pub fn verify_suite(name: &str, budget: usize) -> Result<SuiteReport> {
    run_suite(
        name.parse()?,
        &VerifyOptions {
            budget,
            ..VerifyOptions::default()
        },
    )
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    let corpus = regression_corpus(suite);
    let mut report = SuiteReport {
        suite,
        regression_cases: corpus.len(),
        random_cases: 0,
        checks: 0,
        counterexample: None,
    };
    let props = properties(suite);
    let evaluate = |c: &Case, report: &mut SuiteReport| -> Result<bool> {
        for &(name, prop) in props {
            report.checks += 1;
            if prop(c, opts.mutation)?.is_some() {
                let (small, reason) = shrink(c.clone(), prop, opts.mutation);
                report.counterexample = Some(Counterexample {
                    property: name.to_string(),
                    reason,
                    instance: small.doc()?,
                });
                return Ok(false);
            }
        }
        Ok(true)
    };
    for c in &corpus {
        if !evaluate(c, &mut report)? {
            return Ok(report);
        }
    }
    for i in 0..opts.budget {
        let mut rng = rng_from_seed(derive_seed(opts.seed, i as u64));
        let c = random_case(suite, i, &mut rng)?;
        report.random_cases += 1;
        if !evaluate(&c, &mut report)? {
            return Ok(report);
        }
    }
    Ok(report)
}
