//! Valuation-profile and environment generators. Every generator is a pure
//! function of its spec and seed.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envir::{Environment, EnvironmentDoc, SetSystemRealization};
use crate::error::{Error, Result};
use crate::revcurve::ValuationProfile;
use crate::seeds::{derive_seed, rng_from_seed};

/// Distribution family of agent values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueFamily {
    /// Uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Pareto with minimum `scale` and tail `exponent`: few high values.
    PowerLaw { scale: f64, exponent: f64 },
    /// Values cluster around `low` or (with probability `p_high`) `high`,
    /// each spread by a relative `spread`.
    Bimodal {
        low: f64,
        high: f64,
        p_high: f64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// Every agent has `value`.
    EqualValues { value: f64 },
}

fn default_spread() -> f64 {
    0.05
}

impl ValueFamily {
    pub const NAMES: [&'static str; 4] = ["uniform", "power_law", "bimodal", "equal_values"];

    /// A family with default parameters, by name.
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "uniform" => Self::Uniform {
                low: 1.0,
                high: 10.0,
            },
            "power_law" => Self::PowerLaw {
                scale: 1.0,
                exponent: 1.5,
            },
            "bimodal" => Self::Bimodal {
                low: 1.0,
                high: 8.0,
                p_high: 0.3,
                spread: default_spread(),
            },
            "equal_values" => Self::EqualValues { value: 1.0 },
            other => {
                return Err(Error::config(format!(
                    "unknown value family `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && 0.0 <= low && low <= high
            }
            Self::PowerLaw { scale, exponent } => {
                scale > 0.0 && scale.is_finite() && exponent > 0.0 && exponent.is_finite()
            }
            Self::Bimodal {
                low,
                high,
                p_high,
                spread,
            } => {
                0.0 <= low
                    && low <= high
                    && high.is_finite()
                    && (0.0..=1.0).contains(&p_high)
                    && (0.0..1.0).contains(&spread)
            }
            Self::EqualValues { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid value family parameters: {self:?}"
            )))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Uniform { low, high } => {
                if high > low {
                    rng.gen_range(low..=high)
                } else {
                    low
                }
            }
            Self::PowerLaw { scale, exponent } => {
                let u: f64 = 1.0 - rng.gen::<f64>();
                scale * u.powf(-1.0 / exponent)
            }
            Self::Bimodal {
                low,
                high,
                p_high,
                spread,
            } => {
                let centre = if rng.gen_bool(p_high) { high } else { low };
                centre * (1.0 + spread * rng.gen_range(-1.0..=1.0))
            }
            Self::EqualValues { value } => value,
        }
    }

    /// `n` values, sorted non-increasingly.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ValuationProfile> {
        self.validate()?;
        let mut rng = rng_from_seed(seed);
        let v: Vec<f64> = (0..n).map(|_| self.draw(&mut rng)).collect();
        ValuationProfile::from_unsorted(v)
    }
}

/// How the environment of an instance is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    DigitalGoods,
    KUnit {
        k: usize,
    },
    /// A mixture of `components` random systems, each with up to `sets`
    /// maximal sets of size at most `max_size`.
    RandomExplicit {
        #[serde(default = "one")]
        components: usize,
        sets: usize,
        max_size: usize,
        #[serde(default = "yes")]
        permuted: bool,
    },
    /// A fixed environment document; its `n` must match the instance size.
    Document {
        environment: EnvironmentDoc,
    },
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl EnvironmentSpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<Environment> {
        match self {
            Self::DigitalGoods => Environment::digital_goods(n),
            Self::KUnit { k } => Environment::k_unit(n, *k),
            Self::RandomExplicit {
                components,
                sets,
                max_size,
                permuted,
            } => {
                if *components == 0 || *sets == 0 {
                    return Err(Error::config(
                        "random_explicit needs components ≥ 1 and sets ≥ 1",
                    ));
                }
                let mut rng = rng_from_seed(seed);
                let mut parts = Vec::with_capacity(*components);
                let weights: Vec<f64> = (0..*components).map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                for w in weights {
                    parts.push((w / total, random_system(n, *sets, *max_size, &mut rng)?));
                }
                let sum: f64 = parts.iter().map(|p| p.0).sum();
                parts[0].0 += 1.0 - sum;
                Environment::explicit(parts, *permuted)
            }
            Self::Document { environment } => {
                if environment.n != n {
                    return Err(Error::config(format!(
                        "environment document has n = {} but the instance has {n} agents",
                        environment.n
                    )));
                }
                Environment::try_from(environment)
            }
        }
    }

    /// Whether expectations over this environment are cheap to enumerate at
    /// any size.
    pub fn is_symmetric(&self) -> bool {
        matches!(self, Self::DigitalGoods | Self::KUnit { .. })
    }
}

/// A random downward-closed system over `n` slots.
pub fn random_system<R: Rng>(
    n: usize,
    sets: usize,
    max_size: usize,
    rng: &mut R,
) -> Result<SetSystemRealization> {
    let slots: Vec<usize> = (0..n).collect();
    let mut maximal = Vec::with_capacity(sets);
    for _ in 0..sets {
        let size = rng.gen_range(0..=max_size.min(n));
        maximal.push(slots.choose_multiple(rng, size).copied().collect());
    }
    SetSystemRealization::new(n, maximal)
}

/// Values plus environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub n: usize,
    pub values: ValueFamily,
    pub environment: EnvironmentSpec,
}

/// Deterministic instance from `spec` and `seed`.
pub fn generate_instance(
    spec: &InstanceSpec,
    seed: u64,
) -> Result<(ValuationProfile, Environment)> {
    if spec.n < 2 {
        return Err(Error::config("instances need at least two agents"));
    }
    let v = spec.values.sample(spec.n, derive_seed(seed, 0))?;
    let env = spec.environment.build(spec.n, derive_seed(seed, 1))?;
    Ok((v, env))
}

/// Fuzz family used by the verification suites: digital goods, k-unit, or a
/// random permuted explicit mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuzzFamily {
    DigitalGoods,
    KUnit,
    PermutedExplicit,
}

impl FuzzFamily {
    pub const ALL: [FuzzFamily; 3] = [Self::DigitalGoods, Self::KUnit, Self::PermutedExplicit];
}

/// A random fuzz environment over `n` agents.
pub fn fuzz_environment<R: Rng>(family: FuzzFamily, n: usize, rng: &mut R) -> Result<Environment> {
    match family {
        FuzzFamily::DigitalGoods => Environment::digital_goods(n),
        FuzzFamily::KUnit => Environment::k_unit(n, rng.gen_range(1..=n)),
        FuzzFamily::PermutedExplicit => EnvironmentSpec::RandomExplicit {
            components: rng.gen_range(1..=2),
            sets: rng.gen_range(1..=3),
            max_size: rng.gen_range(1..=n),
            permuted: true,
        }
        .build(n, rng.gen()),
    }
}

/// A random sorted profile: integers in `0..=top` (many ties) or continuous
/// values of varied scale.
pub fn fuzz_profile<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = match rng.gen_range(0..3) {
        0 => (0..n).map(|_| rng.gen_range(0..=6) as f64).collect(),
        1 => (0..n).map(|_| rng.gen_range(0.0..10.0)).collect(),
        _ => (0..n).map(|_| 1.5_f64.powi(rng.gen_range(0..12))).collect(),
    };
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(values: ValueFamily, environment: EnvironmentSpec) -> InstanceSpec {
        InstanceSpec {
            n: 5,
            values,
            environment,
        }
    }

    #[test]
    fn equal_values() {
        let (v, env) = generate_instance(
            &spec(
                ValueFamily::EqualValues { value: 1.0 },
                EnvironmentSpec::DigitalGoods,
            ),
            3,
        )
        .unwrap();
        assert_eq!(v.as_slice(), &[1.0; 5]);
        assert_eq!(env.n(), 5);
    }

    #[test]
    fn deterministic_and_sorted() {
        for name in ValueFamily::NAMES {
            let s = spec(
                ValueFamily::named(name).unwrap(),
                EnvironmentSpec::RandomExplicit {
                    components: 2,
                    sets: 3,
                    max_size: 3,
                    permuted: true,
                },
            );
            let a = generate_instance(&s, 99).unwrap();
            let b = generate_instance(&s, 99).unwrap();
            assert_eq!(a, b);
            assert!(a.0.windows(2).all(|p| p[0] >= p[1]));
            assert_eq!(a.1.to_doc().unwrap(), b.1.to_doc().unwrap());
        }
    }

    #[test]
    fn bad_specs_are_config_errors() {
        assert!(matches!(
            ValueFamily::named("lognormal"),
            Err(Error::Config(_))
        ));
        let s = spec(
            ValueFamily::Uniform {
                low: 3.0,
                high: 1.0,
            },
            EnvironmentSpec::DigitalGoods,
        );
        assert!(matches!(generate_instance(&s, 1), Err(Error::Config(_))));
    }

    #[test]
    fn specs_parse_from_toml() {
        let text = r#"
            n = 4
            values = { family = "bimodal", low = 1.0, high = 9.0, p_high = 0.25 }
            environment = { kind = "k_unit", k = 2 }
        "#;
        let s: InstanceSpec = toml::from_str(text).unwrap();
        assert_eq!(s.environment, EnvironmentSpec::KUnit { k: 2 });
        assert!(generate_instance(&s, 5).is_ok());
    }
}
