//! Experiment plumbing: runs, sweeps and report files.

pub mod dataset;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{LstmNetwork, NetworkShape};
use crate::refine::DivisionStrategy;
use crate::relax::{RelaxConfig, RelaxMethod};
use crate::verifier::{verify_dataset, PerturbationSpec, Report, Sample, VerificationQuery, VerifierConfig, Verdict};
use crate::{Error, Result};

pub use dataset::{load_dataset, select_samples, Dataset, DatasetFormat, DatasetSource};

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "PRISMCERT_WORKERS";

/// Sizes the global thread pool from [`WORKERS_ENV`] if set. Calling it
/// after the pool exists is harmless.
pub fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{WORKERS_ENV} must be positive")));
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub dataset: DatasetSource,
    pub epsilons: Vec<f64>,
    pub verifier: VerifierConfig,
    /// Number of correctly classified samples to verify; `None` keeps the
    /// dataset as given.
    pub num_samples: Option<usize>,
    pub seed: u64,
    pub output_path: PathBuf,
    /// Clip perturbed inputs to `[0, 1]`.
    pub clip: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidArgument("at least one epsilon is required".into()));
        }
        for &e in &self.epsilons {
            PerturbationSpec::new(e).validate()?;
        }
        self.verifier.relax.validate()?;
        if !self.model_path.is_file() {
            return Err(Error::InvalidArgument(format!(
                "model file {} does not exist",
                self.model_path.display()
            )));
        }
        Ok(())
    }

    pub fn spec(&self, epsilon: f64) -> PerturbationSpec {
        PerturbationSpec {
            epsilon,
            clip: self.clip.then_some((0.0, 1.0)),
        }
    }
}

/// Verified count per ε.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub epsilon: f64,
    pub verified: usize,
    pub total: usize,
    pub accuracy: f64,
    pub mean_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub reports: Vec<(f64, Report)>,
    pub summary: Vec<SummaryRow>,
}

pub fn summarize(reports: &[(f64, Report)]) -> Vec<SummaryRow> {
    reports
        .iter()
        .map(|(eps, r)| SummaryRow {
            epsilon: *eps,
            verified: r.verified(),
            total: r.total(),
            accuracy: r.accuracy(),
            mean_time_s: r.mean_time(),
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("epsilon,verified,total,accuracy,mean_time_s\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.epsilon, r.verified, r.total, r.accuracy, r.mean_time_s);
    }
    s
}

/// Companion path for the summary, `<stem>.summary.csv`.
pub fn summary_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    output.with_file_name(format!("{stem}.summary.csv"))
}

/// Verifies the configured samples at every ε and verifies them
/// without touching the filesystem.
pub fn evaluate(net: &LstmNetwork, samples: &[Sample], cfg: &RunConfig) -> RunOutput {
    let reports: Vec<(f64, Report)> = cfg
        .epsilons
        .iter()
        .map(|&e| (e, verify_dataset(net, samples, cfg.spec(e), &cfg.verifier)))
        .collect();
    let summary = summarize(&reports);
    RunOutput { reports, summary }
}

/// Loads everything, verifies, then writes the per-sample CSV and the
/// summary. Nothing is written if any input fails to load.
pub fn run_verify(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let net = LstmNetwork::load(&cfg.model_path)?;
    let data = load_dataset(&cfg.dataset, net.num_frames)?;
    data.check_against(&net)?;
    let samples = match cfg.num_samples {
        Some(n) => select_samples(&data, &net, n, cfg.seed)?,
        None => data.samples.clone(),
    };
    let out = evaluate(&net, &samples, cfg);
    let mut w = csv::Writer::from_writer(Vec::new());
    for (_, r) in &out.reports {
        for row in &r.rows {
            w.serialize(row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(&cfg.output_path, bytes)?;
    fs::write(summary_path(&cfg.output_path), summary_csv(&out.summary))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSweep {
    /// `(α, mean single-plane margin)` per grid point.
    pub curve: Vec<(f64, f64)>,
    pub best_alpha: f64,
}

/// Evenly spaced α values in `[0, 1]`.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha step must be in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| (i as f64 * step).min(1.0)).collect())
}

/// Mean single-plane hybrid margin over all labels of `samples` for each α.
/// Ties in the argmax go to the first α of the grid.
pub fn run_alpha_sweep(
    net: &LstmNetwork,
    samples: &[Sample],
    spec: PerturbationSpec,
    base: &VerifierConfig,
    grid: &[f64],
) -> Result<AlphaSweep> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let config = VerifierConfig {
            relax: RelaxConfig {
                alpha,
                method: RelaxMethod::Hybrid,
                ..base.relax
            },
            strategy: DivisionStrategy::None,
            ..*base
        };
        config.relax.validate()?;
        let margins: Vec<f64> = samples
            .par_iter()
            .map(|(seq, label)| {
                let q = VerificationQuery {
                    sample: seq.clone(),
                    true_label: *label,
                    spec,
                    config,
                };
                let r = crate::verifier::verify_sample(net, &q)?;
                Ok(r.margins.into_iter().flatten().collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let mean = if margins.is_empty() {
            0.0
        } else {
            margins.iter().sum::<f64>() / margins.len() as f64
        };
        curve.push((alpha, mean));
    }
    let best_alpha = curve
        .iter()
        .fold(None::<(f64, f64)>, |best, &(a, m)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((a, m)),
        })
        .map(|b| b.0)
        .expect("grid is nonempty");
    Ok(AlphaSweep { curve, best_alpha })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub strategy: DivisionStrategy,
    pub summary: SummaryRow,
}

/// Verified counts for each strategy at each ε.
pub fn run_strategy_sweep(
    net: &LstmNetwork,
    samples: &[Sample],
    epsilons: &[f64],
    clip: Option<(f64, f64)>,
    base: &VerifierConfig,
    strategies: &[DivisionStrategy],
) -> Vec<StrategyRow> {
    let mut rows = Vec::new();
    for &strategy in strategies {
        let config = VerifierConfig { strategy, ..*base };
        for &epsilon in epsilons {
            let report = verify_dataset(net, samples, PerturbationSpec { epsilon, clip }, &config);
            rows.push(StrategyRow {
                strategy,
                summary: summarize(&[(epsilon, report)]).remove(0),
            });
        }
    }
    rows
}

pub fn strategy_csv(rows: &[StrategyRow]) -> String {
    let mut s = String::from("strategy,epsilon,verified,total,accuracy,mean_time_s\n");
    for r in rows {
        let m = &r.summary;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.strategy, m.epsilon, m.verified, m.total, m.accuracy, m.mean_time_s
        );
    }
    s
}

/// Seeded random network with weights uniform in `[-scale, scale]`.
pub fn gen_model(shape: &NetworkShape, scale: f64, seed: u64) -> LstmNetwork {
    LstmNetwork::random(shape, scale, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Seeded inputs uniform in `[0, 1]`, labelled by the network itself so
/// that every sample is correctly classified.
pub fn gen_samples(net: &LstmNetwork, count: usize, seed: u64) -> Vec<Sample> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let seq: Vec<Vec<f64>> = (0..net.num_frames)
                .map(|_| (0..net.input_dim).map(|_| rng.gen_range(0.0..=1.0)).collect())
                .collect();
            let label = net.predict(&seq).expect("generated sample matches the network");
            (seq, label)
        })
        .collect()
}

/// Count of `Robust` rows in a report, for quick comparisons.
pub fn robust_count(report: &Report) -> usize {
    report.rows.iter().filter(|r| r.verdict == Verdict::Robust).count()
}

pub fn timeout_from_secs(secs: f64) -> Result<Duration> {
    if !(secs > 0.0) || !secs.is_finite() {
        return Err(Error::InvalidArgument(format!("timeout must be positive, got {secs}")));
    }
    Ok(Duration::from_secs_f64(secs))
}
