//! Approximation-ratio sweeps over a range of instance sizes.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::{
    evaluate_instance, render_csv, summary_row, write_file, EvalSettings, ModeChoice, ResultRow,
};
use super::instances::{EnvironmentSpec, InstanceSpec, ValueFamily};
use crate::consensus::ConsensusParams;
use crate::error::{Error, Result};
use crate::mechanisms::MechanismKind;
use crate::par::{self, Parallelism};
use crate::seeds::derive_seed;

#[derive(Clone, Debug)]
pub struct RatioSweep {
    pub params: ConsensusParams,
    pub mechanism: MechanismKind,
    pub family: ValueFamily,
    pub environment: EnvironmentSpec,
    pub n_range: RangeInclusive<usize>,
    /// Instances per size.
    pub instances: usize,
    pub seed: u64,
    pub mc_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioReport {
    pub path: PathBuf,
    pub violations: usize,
    pub max_ratio: Option<f64>,
}

impl RatioReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Parse `a..b` (inclusive) or a single size.
pub fn parse_range(text: &str) -> Result<RangeInclusive<usize>> {
    let bad = || Error::config(format!("expected a size range `a..b`, got `{text}`"));
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (text, text),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

/// Parse `c,α,m` or `c,α,m,p`; `p` defaults to the reference value.
pub fn parse_params(text: &str) -> Result<ConsensusParams> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::config(format!("expected params `c,alpha,m[,p]`, got `{text}`"));
    if !(3..=4).contains(&parts.len()) {
        return Err(bad());
    }
    let c: f64 = parts[0].parse().map_err(|_| bad())?;
    let alpha: f64 = parts[1].parse().map_err(|_| bad())?;
    let m: usize = parts[2].parse().map_err(|_| bad())?;
    let p: f64 = match parts.get(3) {
        Some(s) => s.parse().map_err(|_| bad())?,
        None => ConsensusParams::reference().p,
    };
    ConsensusParams::new(c, alpha, m, p).map_err(|e| Error::config(e.to_string()))
}

/// Evaluate every size in the range and write one CSV with a summary row per
/// size.
pub fn run_sweep(sweep: &RatioSweep, path: &Path) -> Result<RatioReport> {
    let min_n = if sweep.mechanism == MechanismKind::PseudoVickrey {
        2
    } else {
        3
    };
    if *sweep.n_range.start() < min_n {
        return Err(Error::config(format!("sizes must be at least {min_n}")));
    }
    sweep.family.validate()?;
    let settings = EvalSettings {
        mechanism: sweep.mechanism,
        params: sweep.params,
        mode: ModeChoice::Auto,
        mc_trials: sweep.mc_trials,
        bound: sweep.params.beta(),
    };
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut violations = 0;
    let mut max_ratio = Some(0.0_f64);
    for n in sweep.n_range.clone() {
        let spec = InstanceSpec {
            n,
            values: sweep.family.clone(),
            environment: sweep.environment.clone(),
        };
        let base = derive_seed(sweep.seed, n as u64);
        let results = par::map_indices(sweep.instances, Parallelism::default(), |id| {
            evaluate_instance(
                &spec,
                &settings,
                format!("{n}/{id}"),
                derive_seed(base, id as u64),
            )
        });
        let mut these = Vec::with_capacity(results.len());
        for r in results {
            these.push(r?);
        }
        violations += these.iter().filter(|r| !r.bound_ok).count();
        if let Some(mut s) = summary_row(&these, sweep.mechanism, settings.bound) {
            max_ratio = match (max_ratio, s.max_ratio) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
            s.instance = format!("summary/{n}");
            these.push(s);
        }
        rows.extend(these);
    }
    let provenance = [
        (
            "sweep",
            format!("{:?} on {:?}", sweep.family, sweep.environment),
        ),
        (
            "params",
            format!(
                "c={},alpha={},m={},p={}",
                sweep.params.c, sweep.params.alpha, sweep.params.m, sweep.params.p
            ),
        ),
        ("seed", sweep.seed.to_string()),
        (
            "instance_seeds",
            "derive_seed(derive_seed(seed, n), instance)".to_string(),
        ),
        (
            "generator",
            format!("ccepe-core {}", env!("CARGO_PKG_VERSION")),
        ),
    ];
    write_file(path, &render_csv(&provenance, &rows)?)?;
    Ok(RatioReport {
        path: path.to_path_buf(),
        violations,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_params_parse() {
        assert_eq!(parse_range("3..8").unwrap(), 3..=8);
        assert_eq!(parse_range("4..=4").unwrap(), 4..=4);
        assert_eq!(parse_range("5").unwrap(), 5..=5);
        assert!(parse_range("8..3").is_err());
        let p = parse_params("1.666,2.734,12").unwrap();
        assert_eq!(p, ConsensusParams::reference());
        assert!(matches!(parse_params("1.666,2.734"), Err(Error::Config(_))));
        assert!(matches!(
            parse_params("0.5,2.734,12"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn digital_goods_sweep_respects_the_bound() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = RatioSweep {
            params: ConsensusParams::reference(),
            mechanism: MechanismKind::Ccepe,
            family: ValueFamily::named("bimodal").unwrap(),
            environment: EnvironmentSpec::DigitalGoods,
            n_range: 3..=12,
            instances: 3,
            seed: 11,
            mc_trials: 100,
        };
        let path = dir.path().join("ratio.csv");
        let rep = run_sweep(&sweep, &path).unwrap();
        assert!(rep.passed());
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().filter(|l| l.starts_with("summary/")).count(),
            10
        );
        let again = run_sweep(&sweep, &path).unwrap();
        assert_eq!(again, rep);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }
}
