//! Revenue curves, virtual values, envy-free payments and the optimal
//! envy-free revenue benchmarks, plus exact payment-identity integration for
//! piecewise-constant allocation rules.

use std::ops::Deref;

use crate::envir::{allocation_by_rank, drop_null_weights, Environment, Support, WeightVector};
use crate::error::{Error, Result};
use crate::Mode;

const MONOTONE_TOL: f64 = 1e-9;

/// Agent values indexed in non-increasing order.
#[derive(Clone, Debug, PartialEq)]
pub struct ValuationProfile(Vec<f64>);

impl ValuationProfile {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::input(
                "a valuation profile needs at least two agents",
            ));
        }
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::input("values must be finite and nonnegative"));
        }
        if v.windows(2).any(|p| p[0] < p[1]) {
            return Err(Error::input("values must be non-increasing"));
        }
        Ok(Self(v))
    }

    /// Sort `v` non-increasingly, then validate.
    pub fn from_unsorted(mut v: Vec<f64>) -> Result<Self> {
        v.sort_by(|a, b| b.total_cmp(a));
        Self::new(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ValuationProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-rank service probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation(Vec<f64>);

impl Allocation {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.iter()
            .any(|p| !p.is_finite() || *p < -MONOTONE_TOL || *p > 1.0 + MONOTONE_TOL)
        {
            return Err(Error::input("allocation probabilities must lie in [0, 1]"));
        }
        Ok(Self(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_monotone(&self) -> bool {
        self.0.windows(2).all(|p| p[0] >= p[1] - MONOTONE_TOL)
    }
}

impl Deref for Allocation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Allocation, payments, revenue and utilities of one mechanism run (or its
/// expectation).
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub allocation: Vec<f64>,
    pub payments: Vec<f64>,
    pub revenue: f64,
    pub utilities: Vec<f64>,
}

impl Outcome {
    pub fn new(values: &[f64], allocation: Vec<f64>, payments: Vec<f64>) -> Self {
        let revenue = payments.iter().sum();
        let utilities = values
            .iter()
            .zip(&allocation)
            .zip(&payments)
            .map(|((v, x), p)| v * x - p)
            .collect();
        Self {
            allocation,
            payments,
            revenue,
            utilities,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            allocation: vec![0.0; n],
            payments: vec![0.0; n],
            revenue: 0.0,
            utilities: vec![0.0; n],
        }
    }
}

/// The smallest concave nondecreasing function through the origin that
/// upper-bounds a point set, sampled at `1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct RevenueCurve {
    r: Vec<f64>,
    phi: Vec<f64>,
}

impl RevenueCurve {
    /// Validate an explicit curve (`R_1..R_n`, implicit `R_0 = 0`).
    pub fn from_values(r: Vec<f64>) -> Result<Self> {
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("curve values must be finite"));
        }
        let mut phi = Vec::with_capacity(r.len());
        let mut prev = 0.0;
        for &ri in &r {
            phi.push(ri - prev);
            prev = ri;
        }
        let scale = r.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let tol = 1e-9 * scale;
        if phi.iter().any(|&p| p < -tol) {
            return Err(Error::input("revenue curve must be nondecreasing"));
        }
        if phi.windows(2).any(|p| p[1] > p[0] + tol) {
            return Err(Error::input("revenue curve must be concave"));
        }
        Ok(Self { r, phi })
    }

    /// Envelope of `points` (integer abscissae, at most `n`) and the origin.
    pub(crate) fn from_points(points: &[(usize, f64)], n: usize) -> Self {
        let vertices: Vec<(usize, f64)> = envelope_vertices(points)
            .into_iter()
            .map(|i| points[i])
            .collect();
        Self::from_vertices(&vertices, n)
    }

    /// Curve through the origin and the given hull vertices (increasing
    /// abscissae), extended flat after the last vertex.
    pub(crate) fn from_vertices(vertices: &[(usize, f64)], n: usize) -> Self {
        let mut r = Vec::with_capacity(n);
        let mut phi = Vec::with_capacity(n);
        let mut seg = 0;
        let mut left = (0usize, 0.0f64);
        for i in 1..=n {
            while seg < vertices.len() && vertices[seg].0 < i {
                left = vertices[seg];
                seg += 1;
            }
            if seg < vertices.len() {
                let right = vertices[seg];
                // one slope per segment keeps tied virtual values bit-identical
                let slope = (right.1 - left.1) / (right.0 - left.0) as f64;
                phi.push(slope);
                r.push(if right.0 == i {
                    right.1
                } else {
                    left.1 + slope * (i - left.0) as f64
                });
            } else {
                phi.push(0.0);
                r.push(left.1);
            }
        }
        Self { r, phi }
    }

    pub fn values(&self) -> &[f64] {
        &self.r
    }

    pub fn virtual_values(&self) -> &[f64] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Indices of the points that are vertices of the smallest concave
/// nondecreasing majorant of `points ∪ {(0,0)}`, in increasing abscissa,
/// stopping at the first highest point. Points lying on a segment (or on the
/// flat tail) are not vertices.
pub(crate) fn envelope_vertices(points: &[(usize, f64)]) -> Vec<usize> {
    let top = points.iter().map(|p| p.1).fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return Vec::new();
    }
    let reach = points
        .iter()
        .filter(|p| p.1 >= top)
        .map(|p| p.0)
        .min()
        .expect("some point attains the maximum");
    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].0 <= reach && points[i].0 > 0)
        .collect();
    // per abscissa keep the highest point (first index on exact ties)
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .cmp(&points[b].0)
            .then(points[b].1.total_cmp(&points[a].1))
            .then(a.cmp(&b))
    });
    order.dedup_by_key(|i| points[*i].0);

    let mut hull: Vec<usize> = Vec::new();
    let at = |h: &[usize], k: usize| -> (f64, f64) {
        match k {
            usize::MAX => (0.0, 0.0),
            i => (points[h[i]].0 as f64, points[h[i]].1),
        }
    };
    for idx in order {
        let b = (points[idx].0 as f64, points[idx].1);
        while !hull.is_empty() {
            let a = at(&hull, hull.len() - 1);
            let o = if hull.len() >= 2 {
                at(&hull, hull.len() - 2)
            } else {
                (0.0, 0.0)
            };
            let lhs = (a.0 - o.0) * (b.1 - o.1);
            let rhs = (a.1 - o.1) * (b.0 - o.0);
            let tol = 1e-12 * (lhs.abs() + rhs.abs());
            // drop `a` unless o -> a -> b turns strictly clockwise
            if lhs - rhs >= -tol {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(idx);
    }
    hull
}

/// Revenue curve of a valuation profile: envelope of `{(i, i·v_i)}` and the origin.
pub fn revenue_curve(v: &ValuationProfile) -> RevenueCurve {
    curve_of_values(v)
}

pub(crate) fn curve_of_values(v: &[f64]) -> RevenueCurve {
    let points: Vec<(usize, f64)> = v
        .iter()
        .enumerate()
        .map(|(i, &x)| (i + 1, (i + 1) as f64 * x))
        .collect();
    RevenueCurve::from_points(&points, v.len())
}

/// Left slopes `φ_i = R_i − R_{i−1}`.
pub fn virtual_values(curve: &RevenueCurve) -> Vec<f64> {
    curve.phi.clone()
}

/// Envy-free payments `EF_i = Σ_{j≥i} v_j (x_j − x_{j+1})` with `x_{n+1} = 0`.
pub fn ef_payments(x: &Allocation, v: &ValuationProfile) -> Result<Vec<f64>> {
    ef_payments_raw(x, v)
}

pub(crate) fn ef_payments_raw(x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(Error::input("allocation and profile lengths differ"));
    }
    if x.windows(2).any(|p| p[0] < p[1] - MONOTONE_TOL) {
        return Err(Error::input(
            "envy-free payments need a monotone allocation",
        ));
    }
    let n = x.len();
    let mut out = vec![0.0; n];
    let mut tail = 0.0;
    for j in (0..n).rev() {
        let next = if j + 1 < n { x[j + 1] } else { 0.0 };
        tail += v[j] * (x[j] - next);
        out[j] = tail;
    }
    Ok(out)
}

/// Optimal envy-free revenue and its allocation: maximize virtual surplus
/// with uniform tie-breaking among positive virtual values. Agents with zero
/// virtual value are not served.
pub fn efo(v: &ValuationProfile, env: &Environment, mode: Mode) -> Result<(f64, Allocation)> {
    check_env(v, env)?;
    let curve = revenue_curve(v);
    let w = WeightVector::new(curve.phi.clone())?;
    let mut x = allocation_by_rank(env, &w, mode)?.as_slice().to_vec();
    drop_null_weights(&curve.phi, &mut x);
    let revenue = surplus(&curve.phi, &x);
    Ok((revenue, Allocation::new(x)?))
}

/// [`efo`] against a precomputed support; `v` is indexed by rank.
pub(crate) fn efo_on(v: &[f64], support: &Support) -> Result<(f64, Vec<f64>)> {
    let curve = curve_of_values(v);
    let mut x = support.allocation(&curve.phi)?;
    drop_null_weights(&curve.phi, &mut x);
    Ok((surplus(&curve.phi, &x), x))
}

fn surplus(phi: &[f64], x: &[f64]) -> f64 {
    phi.iter().zip(x).map(|(p, q)| p * q).sum()
}

fn check_env(v: &[f64], env: &Environment) -> Result<()> {
    if v.len() != env.n() {
        return Err(Error::input(format!(
            "profile has {} agents but environment has {} slots",
            v.len(),
            env.n()
        )));
    }
    Ok(())
}

/// `v^(m) = (v_m repeated m times, v_{m+1}, …, v_n)`. When `m > n` the
/// missing order statistic is taken as zero, giving the all-zero profile.
pub fn truncate_profile(v: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::input("truncation index must be positive"));
    }
    let n = v.len();
    if m > n {
        return Ok(vec![0.0; n]);
    }
    let top = v[m - 1];
    Ok(v.iter()
        .enumerate()
        .map(|(i, &x)| if i < m { top } else { x })
        .collect())
}

/// The benchmark `EFO(v_2, v_2, v_3, …, v_n)`.
pub fn efo_benchmark2(v: &ValuationProfile, env: &Environment, mode: Mode) -> Result<f64> {
    efo_truncated(v, env, 2, mode)
}

/// `EFO(v^(m))`.
pub fn efo_truncated(v: &ValuationProfile, env: &Environment, m: usize, mode: Mode) -> Result<f64> {
    check_env(v, env)?;
    let t = ValuationProfile::new(truncate_profile(v, m)?)?;
    Ok(efo(&t, env, mode)?.0)
}

/// Sum of envy-free payments of `subset` under the optimal envy-free allocation.
pub fn efo_contribution(
    v: &ValuationProfile,
    env: &Environment,
    subset: &[usize],
    mode: Mode,
) -> Result<f64> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= v.len()) {
        return Err(Error::input(format!("agent {bad} out of range")));
    }
    let (_, x) = efo(v, env, mode)?;
    let ef = ef_payments(&x, v)?;
    let mut members = subset.to_vec();
    members.sort_unstable();
    members.dedup();
    Ok(members.iter().map(|&i| ef[i]).sum())
}

/// A right-continuous, nondecreasing step function on `[0, ∞)`:
/// `levels[0]` on `[0, b_0)`, `levels[k]` on `[b_{k−1}, b_k)`, and the last
/// level from the last breakpoint on.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRule {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl StepRule {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if levels.len() != breakpoints.len() + 1 {
            return Err(Error::input(
                "a step rule needs one more level than breakpoints",
            ));
        }
        if breakpoints.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::input("breakpoints must be finite and nonnegative"));
        }
        if breakpoints.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::input("breakpoints must be strictly increasing"));
        }
        if levels
            .iter()
            .any(|l| !l.is_finite() || *l < -MONOTONE_TOL || *l > 1.0 + MONOTONE_TOL)
        {
            return Err(Error::input("levels must lie in [0, 1]"));
        }
        if levels.windows(2).any(|p| p[1] < p[0] - MONOTONE_TOL) {
            return Err(Error::input("allocation rule must be nondecreasing"));
        }
        Ok(Self {
            breakpoints,
            levels,
        })
    }

    pub fn constant(level: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![level])
    }

    /// Build the rule of a piecewise-constant allocation function whose level
    /// can only change at `breaks`. Each level is read at the midpoint of its
    /// interval; `at_value` is the level at `value` itself, where the rule is
    /// cut off.
    pub fn probe<F>(breaks: &[f64], value: f64, at_value: f64, mut level_at: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        if value <= 0.0 {
            return Self::constant(at_value);
        }
        let mut cuts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&b| b > 0.0 && b < value)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut levels = Vec::with_capacity(cuts.len() + 2);
        let mut lo = 0.0;
        for &b in cuts.iter().chain(std::iter::once(&value)) {
            levels.push(level_at(0.5 * (lo + b))?);
            lo = b;
        }
        cuts.push(value);
        levels.push(at_value);
        Self::new(cuts, levels)
    }

    pub fn level_at(&self, z: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= z);
        self.levels[k]
    }

    /// `∫_0^upto rule(z) dz`.
    pub fn integral(&self, upto: f64) -> f64 {
        let mut total = 0.0;
        let mut lo = 0.0;
        for (k, &b) in self.breakpoints.iter().enumerate() {
            if b >= upto {
                break;
            }
            total += self.levels[k] * (b - lo);
            lo = b;
        }
        let k = self.breakpoints.partition_point(|&b| b < upto);
        if upto > lo {
            total += self.levels[k] * (upto - lo);
        }
        total
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

/// Payment identity: `p = v·x(v) − ∫_0^v x(z) dz`, evaluated exactly.
pub fn ic_payment_from_rule(rule: &StepRule, value: f64) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::input("value must be finite and nonnegative"));
    }
    Ok(value * rule.level_at(value) - rule.integral(value))
}
