//! Experiment configuration (TOML) and result files (CSV with a provenance
//! header). Rows depend only on the configuration, so reruns are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::instances::{generate_instance, InstanceSpec};
use crate::consensus::{cross_checked_estimate, sigma_cells, ConsensusParams};
use crate::envir::Environment;
use crate::error::{Error, Result};
use crate::mechanisms::{
    exact_revenue_on, monte_carlo_revenue_on, payment_support, MechanismKind, RevenueEstimate,
};
use crate::par::{self, Parallelism};
use crate::revcurve::{efo_on, truncate_profile};
use crate::seeds::derive_seed;
use crate::Mode;

/// Relative tolerance of the per-row bound check.
pub const BOUND_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub c: f64,
    pub alpha: f64,
    pub m: usize,
    pub p: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let p = ConsensusParams::reference();
        Self {
            c: p.c,
            alpha: p.alpha,
            m: p.m,
            p: p.p,
        }
    }
}

impl ParamsConfig {
    pub fn build(&self) -> Result<ConsensusParams> {
        ConsensusParams::new(self.c, self.alpha, self.m, self.p)
            .map_err(|e| Error::config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    /// Exact for symmetric environments or at most six agents, Monte Carlo
    /// otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

/// Largest explicit instance evaluated exactly under [`ModeChoice::Auto`].
pub const AUTO_EXACT_MAX_N: usize = 6;

fn default_mechanism() -> MechanismKind {
    MechanismKind::Ccepe
}

fn default_mc_trials() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_mechanism")]
    pub mechanism: MechanismKind,
    #[serde(default)]
    pub params: ParamsConfig,
    pub instance: InstanceSpec,
    /// Number of instances.
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: ModeChoice,
    /// Monte-Carlo draws per instance.
    #[serde(default = "default_mc_trials")]
    pub mc_trials: usize,
    /// Approximation factor each row is checked against; defaults to β of
    /// the parameters.
    #[serde(default)]
    pub bound: Option<f64>,
    /// Result file, relative to the output directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params.build()?;
        self.instance.values.validate()?;
        if self.instance.n < 2 {
            return Err(Error::config("instances need at least two agents"));
        }
        if self.mechanism != MechanismKind::PseudoVickrey && self.instance.n < 3 {
            return Err(Error::config(
                "the cross-checked mechanisms need at least three agents",
            ));
        }
        if self.mc_trials == 0 {
            return Err(Error::config("mc_trials must be positive"));
        }
        if let Some(b) = self.bound {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::config("bound must be a positive number"));
            }
        }
        let _ = params;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn bound(&self) -> Result<f64> {
        Ok(match self.bound {
            Some(b) => b,
            None => self.params.build()?.beta(),
        })
    }

    /// Output file under `dir`.
    pub fn output_path(&self, dir: &Path) -> PathBuf {
        match &self.output {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => dir.join(p),
            None => dir.join(format!("{}.csv", self.name)),
        }
    }
}

/// One evaluated instance (or the summary when `instance == "summary"`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub instance: String,
    pub n: usize,
    pub seed: u64,
    pub mechanism: MechanismKind,
    pub mode: &'static str,
    pub revenue: f64,
    pub half_width: f64,
    pub efo: f64,
    pub efo2: f64,
    pub efo_trunc: f64,
    /// `EFO⁽²⁾/revenue`; empty when the revenue is zero but the benchmark is
    /// not.
    pub ratio: Option<f64>,
    pub bound: f64,
    pub bound_ok: bool,
    /// Probability of running Pseudo-Vickrey.
    pub arm_vickrey: f64,
    /// `Pr_σ[every agent agrees]`.
    pub agree_all: f64,
    /// `Pr_σ[some agent agrees]`.
    pub agree_any: f64,
    pub mean_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub path: PathBuf,
    pub rows: usize,
    pub violations: usize,
    /// `None` when some instance earned nothing against a positive benchmark.
    pub mean_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub bound: f64,
}

impl ExperimentSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// `EFO(v^(2))/revenue`, with `1` when both vanish.
pub fn ratio(efo2: f64, revenue: f64) -> Option<f64> {
    if revenue > 0.0 {
        Some(efo2 / revenue)
    } else if efo2 > 0.0 {
        None
    } else {
        Some(1.0)
    }
}

fn resolve_mode(
    choice: ModeChoice,
    spec: &InstanceSpec,
    env: &Environment,
    mc_trials: usize,
    seed: u64,
) -> Mode {
    let exact = match choice {
        ModeChoice::Exact => true,
        ModeChoice::MonteCarlo => false,
        ModeChoice::Auto => {
            spec.environment.is_symmetric()
                || env.is_symmetric_closed_form()
                || spec.n <= AUTO_EXACT_MAX_N
        }
    };
    if exact {
        Mode::Exact
    } else {
        Mode::MonteCarlo {
            trials: mc_trials,
            seed,
        }
    }
}

/// Settings shared by every instance of a run.
#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub mechanism: MechanismKind,
    pub params: ConsensusParams,
    pub mode: ModeChoice,
    pub mc_trials: usize,
    pub bound: f64,
}

/// Evaluate instance `id` of `spec` with seed `derive_seed(base_seed, id)`.
pub fn evaluate_instance(
    spec: &InstanceSpec,
    settings: &EvalSettings,
    label: String,
    seed: u64,
) -> Result<ResultRow> {
    let (v, env) = generate_instance(spec, seed)?;
    let mode = resolve_mode(
        settings.mode,
        spec,
        &env,
        settings.mc_trials,
        derive_seed(seed, 2),
    );
    let support = match mode {
        Mode::Exact => env.exact_support()?,
        Mode::MonteCarlo { .. } => payment_support(&env, derive_seed(seed, 3))?,
    };
    let params = &settings.params;
    let est = match mode {
        Mode::Exact => RevenueEstimate {
            mean: exact_revenue_on(
                settings.mechanism,
                &v,
                &support,
                params,
                Parallelism::Sequential,
            )?,
            half_width: 0.0,
        },
        Mode::MonteCarlo { trials, seed } => monte_carlo_revenue_on(
            settings.mechanism,
            &v,
            &support,
            params,
            trials,
            seed,
            Parallelism::Sequential,
        )?,
    };
    let (efo, _) = efo_on(&v, &support)?;
    let (efo2, _) = efo_on(&truncate_profile(&v, 2)?, &support)?;
    let (efo_trunc, _) = efo_on(&truncate_profile(&v, params.truncation_index())?, &support)?;
    let (agree_all, agree_any) =
        if v.len() >= 3 && settings.mechanism != MechanismKind::PseudoVickrey {
            agreement_masses(&v, params)?
        } else {
            (0.0, 0.0)
        };
    let arm_vickrey = match settings.mechanism {
        MechanismKind::PseudoVickrey => 1.0,
        MechanismKind::CcepePrime => 0.0,
        MechanismKind::Ccepe => params.p,
    };
    let credited = est.mean + est.half_width;
    Ok(ResultRow {
        instance: label,
        n: v.len(),
        seed,
        mechanism: settings.mechanism,
        mode: match mode {
            Mode::Exact => "exact",
            Mode::MonteCarlo { .. } => "monte_carlo",
        },
        revenue: est.mean,
        half_width: est.half_width,
        efo,
        efo2,
        efo_trunc,
        ratio: ratio(efo2, est.mean),
        bound: settings.bound,
        bound_ok: credited * settings.bound >= efo2 - BOUND_TOL * efo2,
        arm_vickrey,
        agree_all,
        agree_any,
        mean_ratio: None,
        max_ratio: None,
    })
}

/// Exact σ-measure of full and of partial agreement.
pub fn agreement_masses(v: &[f64], params: &ConsensusParams) -> Result<(f64, f64)> {
    let mut all = 0.0;
    let mut any = 0.0;
    for (mid, width) in sigma_cells(params.c, v.len()) {
        let cc = cross_checked_estimate(mid, v, params)?;
        if cc.agreeing.len() == v.len() {
            all += width;
        }
        if !cc.agreeing.is_empty() {
            any += width;
        }
    }
    Ok((all, any))
}

/// Summary row over evaluated rows (`None` when there are none).
pub fn summary_row(rows: &[ResultRow], mechanism: MechanismKind, bound: f64) -> Option<ResultRow> {
    if rows.is_empty() {
        return None;
    }
    let k = rows.len() as f64;
    let mean = |f: fn(&ResultRow) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let ratios: Option<Vec<f64>> = rows.iter().map(|r| r.ratio).collect();
    let max_ratio = ratios
        .as_ref()
        .map(|r| r.iter().copied().fold(0.0, f64::max));
    let mean_ratio = ratios.as_ref().map(|r| r.iter().sum::<f64>() / k);
    Some(ResultRow {
        instance: "summary".into(),
        n: rows.iter().map(|r| r.n).max().unwrap_or(0),
        seed: 0,
        mechanism,
        mode: "summary",
        revenue: mean(|r| r.revenue),
        half_width: mean(|r| r.half_width),
        efo: mean(|r| r.efo),
        efo2: mean(|r| r.efo2),
        efo_trunc: mean(|r| r.efo_trunc),
        ratio: max_ratio,
        bound,
        bound_ok: rows.iter().all(|r| r.bound_ok),
        arm_vickrey: mean(|r| r.arm_vickrey),
        agree_all: mean(|r| r.agree_all),
        agree_any: mean(|r| r.agree_any),
        mean_ratio,
        max_ratio,
    })
}

/// CSV bytes: `# key=value` provenance lines, a header, the rows.
pub fn render_csv(provenance: &[(&str, String)], rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (k, v) in provenance {
        out.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(RESULT_COLUMNS).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    out.extend(w.into_inner().map_err(|e| Error::config(e.to_string()))?);
    Ok(out)
}

pub const RESULT_COLUMNS: [&str; 18] = [
    "instance",
    "n",
    "seed",
    "mechanism",
    "mode",
    "revenue",
    "half_width",
    "efo",
    "efo2",
    "efo_trunc",
    "ratio",
    "bound",
    "bound_ok",
    "arm_vickrey",
    "agree_all",
    "agree_any",
    "mean_ratio",
    "max_ratio",
];

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::config(format!("csv: {e}"))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Evaluate every instance of `config` and write the result file under
/// `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    let settings = EvalSettings {
        mechanism: config.mechanism,
        params: config.params.build()?,
        mode: config.mode,
        mc_trials: config.mc_trials,
        bound: config.bound()?,
    };
    let results = par::map_indices(config.trials, Parallelism::default(), |id| {
        evaluate_instance(
            &config.instance,
            &settings,
            id.to_string(),
            derive_seed(config.seed, id as u64),
        )
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    let violations = rows.iter().filter(|r| !r.bound_ok).count();
    let summary = summary_row(&rows, config.mechanism, settings.bound);
    let (mean_ratio, max_ratio) = summary
        .as_ref()
        .map(|s| (s.mean_ratio, s.max_ratio))
        .unwrap_or((None, None));
    rows.extend(summary);
    let provenance = [
        ("experiment", config.name.clone()),
        ("config_sha256", config.hash()),
        ("seed", config.seed.to_string()),
        ("instance_seeds", "derive_seed(seed, instance)".to_string()),
        (
            "generator",
            format!("ccepe-core {}", env!("CARGO_PKG_VERSION")),
        ),
    ];
    let bytes = render_csv(&provenance, &rows)?;
    let path = config.output_path(out_dir);
    write_file(&path, &bytes)?;
    Ok(ExperimentSummary {
        path,
        rows: config.trials,
        violations,
        mean_ratio,
        max_ratio,
        bound: settings.bound,
    })
}
