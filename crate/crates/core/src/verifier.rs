//! Robustness queries over L∞ balls.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{abstract_network, logit_expr, AbstractState, FixedPlanes, LinExpr, PlaneSource, SinglePlane};
use crate::model::LstmNetwork;
use crate::refine::{candidate_planes, combine_pair_unchecked, optimize_lambda_with, CandidateSet, Objective, DivisionStrategy, LambdaWeights, Schedule};
use crate::relax::{PlanePair, RelaxConfig};
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub clip: Option<(f64, f64)>,
}

impl PerturbationSpec {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, clip: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and nonnegative, got {}",
                self.epsilon
            )));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!("clip range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifierConfig {
    pub relax: RelaxConfig,
    pub strategy: DivisionStrategy,
    pub schedule: Schedule,
    pub timeout: Duration,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            relax: RelaxConfig::default(),
            strategy: DivisionStrategy::None,
            schedule: Schedule::default(),
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

impl VerifierConfig {
    pub fn echo(&self) -> String {
        format!(
            "method={} alpha={} strategy={} density={} offset_grid={} timeout_s={}",
            self.relax.method,
            self.relax.alpha,
            self.strategy,
            self.relax.sample_density,
            self.relax.offset_grid,
            self.timeout.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationQuery {
    pub sample: Vec<Vec<f64>>,
    pub true_label: usize,
    pub spec: PerturbationSpec,
    pub config: VerifierConfig,
}

impl VerificationQuery {
    pub fn validate(&self, net: &LstmNetwork) -> Result<()> {
        self.spec.validate()?;
        self.config.relax.validate()?;
        if self.true_label >= net.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                self.true_label,
                net.num_classes()
            )));
        }
        if self.sample.len() != net.num_frames {
            return Err(Error::Dimension {
                expected: net.num_frames,
                found: self.sample.len(),
            });
        }
        for frame in &self.sample {
            if frame.len() != net.input_dim {
                return Err(Error::Dimension {
                    expected: net.input_dim,
                    found: frame.len(),
                });
            }
        }
        Ok(())
    }

    fn flat_input(&self) -> Vec<f64> {
        self.sample.concat()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Robust,
    Unknown,
    Timeout,
    Misclassified,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Robust => "robust",
            Verdict::Unknown => "unknown",
            Verdict::Timeout => "timeout",
            Verdict::Misclassified => "misclassified",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Verdict::Robust, Verdict::Unknown, Verdict::Timeout, Verdict::Misclassified]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown verdict `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationResult {
    pub verdict: Verdict,
    /// Certified lower bound of `logit_t − logit_p` per label; `None` for
    /// the true label and for labels never reached.
    pub margins: Vec<Option<f64>>,
    /// Margins of the single-plane pass, before any refinement.
    pub single_plane_margins: Vec<Option<f64>>,
    pub elapsed: Duration,
    pub config_echo: String,
}

impl VerificationResult {
    /// Smallest margin and its label.
    pub fn worst(&self) -> Option<(usize, f64)> {
        self.margins
            .iter()
            .enumerate()
            .filter_map(|(p, m)| m.map(|m| (p, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.worst().map(|(_, m)| m)
    }
}

/// `logit_t − logit_p` over the final hidden neurons.
pub fn difference_expr(net: &LstmNetwork, hidden: &[crate::domain::NeuronId], t: usize, p: usize) -> LinExpr {
    let lt = logit_expr(net, hidden, t);
    let lp = logit_expr(net, hidden, p);
    let mut terms = lt.terms;
    terms.extend(lp.terms.into_iter().map(|(id, w)| (id, -w)));
    LinExpr::new(terms, lt.constant - lp.constant)
}

/// Abstract state of the network over the query's input ball.
pub fn build_state(
    net: &LstmNetwork,
    query: &VerificationQuery,
    source: &mut dyn PlaneSource,
) -> Result<(AbstractState, Vec<crate::domain::NeuronId>)> {
    query.validate(net)?;
    let mut state = AbstractState::input_state(&query.flat_input(), query.spec.epsilon, query.spec.clip)?;
    let hidden = abstract_network(net, &mut state, source)?;
    Ok((state, hidden))
}

/// Certified lower bound of `logit_t − logit_p` over the query's ball.
pub fn margin(net: &LstmNetwork, query: &VerificationQuery, p: usize, source: &mut dyn PlaneSource) -> Result<f64> {
    if p == query.true_label || p >= net.num_classes() {
        return Err(Error::InvalidArgument(format!("label {p} is not an adversarial label")));
    }
    let (state, hidden) = build_state(net, query, source)?;
    Ok(state.bound(&difference_expr(net, &hidden, query.true_label, p), false))
}

/// Margin of one label as a function of the λ weights.
///
/// Weight blocks alternate lower/upper per relaxed product. Candidate planes
/// are valid over the boxes of the single-plane run, which contain every
/// reachable value whatever λ is, so each evaluation is a sound bound.
pub struct MarginObjective<'a> {
    state: AbstractState,
    candidates: &'a [CandidateSet],
    expr: LinExpr,
}

impl<'a> MarginObjective<'a> {
    pub fn new(state: AbstractState, candidates: &'a [CandidateSet], expr: LinExpr) -> Self {
        Self { state, candidates, expr }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.candidates.iter().flat_map(|c| [c.len(), c.len()]).collect()
    }

    pub fn eval(&mut self, lambda: &LambdaWeights) -> f64 {
        self.value(lambda)
    }
}

impl Objective for MarginObjective<'_> {
    fn value(&mut self, lambda: &LambdaWeights) -> f64 {
        for (k, set) in self.candidates.iter().enumerate() {
            let pair = combine_pair_unchecked(set, lambda.block(2 * k), lambda.block(2 * k + 1));
            self.state.set_slot_planes(k, &pair);
        }
        self.state.bound(&self.expr, false)
    }

    /// Central differences of the margin in each product's six plane
    /// coefficients, chained to the λ blocks. The margin depends on λ only
    /// through those coefficients, so this costs `12` evaluations per
    /// product whatever the number of candidates.
    fn gradient(&mut self, lambda: &LambdaWeights, h: f64) -> Vec<f64> {
        let pairs: Vec<PlanePair> = self
            .candidates
            .iter()
            .enumerate()
            .map(|(k, set)| combine_pair_unchecked(set, lambda.block(2 * k), lambda.block(2 * k + 1)))
            .collect();
        for (k, pair) in pairs.iter().enumerate() {
            self.state.set_slot_planes(k, pair);
        }
        let mut grad = vec![0.0; lambda.len()];
        for (k, set) in self.candidates.iter().enumerate() {
            for side in 0..2 {
                let range = lambda.block_range(2 * k + side);
                let planes = if side == 0 { &set.lower } else { &set.upper };
                for coef in 0..3 {
                    let mut probe = |delta: f64| {
                        let mut pair = pairs[k];
                        let plane = if side == 0 { &mut pair.lower } else { &mut pair.upper };
                        match coef {
                            0 => plane.a += delta,
                            1 => plane.b += delta,
                            _ => plane.c += delta,
                        }
                        self.state.set_slot_planes(k, &pair);
                        self.state.bound(&self.expr, false)
                    };
                    let d = (probe(h) - probe(-h)) / (2.0 * h);
                    if d != 0.0 {
                        for (j, idx) in range.clone().enumerate() {
                            let p = planes[j];
                            grad[idx] += d * [p.a, p.b, p.c][coef];
                        }
                    }
                }
                self.state.set_slot_planes(k, &pairs[k]);
            }
        }
        grad
    }
}

/// Candidate planes for every relaxed product of `state`.
pub fn slot_candidates(state: &AbstractState, config: &VerifierConfig) -> Result<Vec<CandidateSet>> {
    state
        .slots()
        .par_iter()
        .map(|s| candidate_planes(&s.region, s.kind, config.strategy, &config.relax))
        .collect()
}

pub fn verify_sample(net: &LstmNetwork, query: &VerificationQuery) -> Result<VerificationResult> {
    query.validate(net)?;
    let start = Instant::now();
    let deadline = start + query.config.timeout;
    let classes = net.num_classes();
    let t = query.true_label;
    let mut result = VerificationResult {
        verdict: Verdict::Unknown,
        margins: vec![None; classes],
        single_plane_margins: vec![None; classes],
        elapsed: Duration::ZERO,
        config_echo: query.config.echo(),
    };
    if net.predict(&query.sample)? != t {
        result.verdict = Verdict::Misclassified;
        result.elapsed = start.elapsed();
        return Ok(result);
    }
    let mut source = SinglePlane {
        cfg: query.config.relax,
        deadline: Some(deadline),
    };
    let (state, hidden) = match build_state(net, query, &mut source) {
        Ok(v) => v,
        Err(Error::Timeout) => {
            result.verdict = Verdict::Timeout;
            result.elapsed = start.elapsed();
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let exprs: Vec<Option<LinExpr>> = (0..classes)
        .map(|p| (p != t).then(|| difference_expr(net, &hidden, t, p)))
        .collect();
    for (p, e) in exprs.iter().enumerate() {
        if let Some(e) = e {
            let m = state.bound(e, false);
            result.margins[p] = Some(m);
            result.single_plane_margins[p] = Some(m);
        }
    }
    let failing: Vec<usize> = (0..classes)
        .filter(|&p| result.margins[p].is_some_and(|m| m < 0.0))
        .collect();
    let mut timed_out = false;
    if !failing.is_empty() && query.config.strategy != DivisionStrategy::None {
        match slot_candidates(&state, &query.config) {
            Ok(candidates) => {
                let mut schedule = query.config.schedule;
                schedule.deadline = Some(deadline);
                for p in failing {
                    if Instant::now() > deadline {
                        timed_out = true;
                        break;
                    }
                    let expr = exprs[p].clone().expect("adversarial label");
                    let mut objective = MarginObjective::new(state.clone(), &candidates, expr);
                    let init = LambdaWeights::vertex(&objective.block_sizes());
                    let best = optimize_lambda_with(&mut objective, init, &schedule);
                    result.margins[p] = Some(best.margin);
                }
            }
            Err(Error::Timeout) => timed_out = true,
            Err(e) => return Err(e),
        }
        timed_out |= Instant::now() > deadline;
    }
    let robust = result.margins.iter().all(|m| m.is_none_or(|m| m >= 0.0));
    result.verdict = if robust {
        Verdict::Robust
    } else if timed_out {
        Verdict::Timeout
    } else {
        Verdict::Unknown
    };
    result.elapsed = start.elapsed();
    Ok(result)
}

/// Rebuilds the state with explicit planes, e.g. to replay a refined run.
pub fn margins_with_planes(
    net: &LstmNetwork,
    query: &VerificationQuery,
    planes: FixedPlanes,
) -> Result<Vec<Option<f64>>> {
    let mut source = planes;
    let (state, hidden) = build_state(net, query, &mut source)?;
    Ok((0..net.num_classes())
        .map(|p| (p != query.true_label).then(|| state.bound(&difference_expr(net, &hidden, query.true_label, p), false)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub sample_index: usize,
    pub true_label: usize,
    pub verdict: Verdict,
    pub min_margin: Option<f64>,
    pub worst_label: Option<usize>,
    pub elapsed_s: f64,
    pub method: String,
    pub alpha: f64,
    pub strategy: String,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn total(&self) -> usize {
        self.rows.len()
    }

    pub fn verified(&self) -> usize {
        self.rows.iter().filter(|r| r.verdict == Verdict::Robust).count()
    }

    /// Robust samples over all samples, misclassified ones included.
    pub fn accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.verified() as f64 / self.total() as f64
        }
    }

    pub fn mean_time(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.rows.iter().map(|r| r.elapsed_s).sum::<f64>() / self.rows.len() as f64
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// One labelled input sequence.
pub type Sample = (Vec<Vec<f64>>, usize);

/// Verifies every sample concurrently; rows come back in sample order.
/// A sample whose query is malformed is recorded as `Unknown`.
pub fn verify_dataset(net: &LstmNetwork, samples: &[Sample], spec: PerturbationSpec, config: &VerifierConfig) -> Report {
    let mut rows: Vec<ReportRow> = samples
        .par_iter()
        .enumerate()
        .map(|(i, (seq, label))| {
            let query = VerificationQuery {
                sample: seq.clone(),
                true_label: *label,
                spec,
                config: *config,
            };
            let start = Instant::now();
            let (verdict, worst) = match verify_sample(net, &query) {
                Ok(r) => (r.verdict, r.worst()),
                Err(_) => (Verdict::Unknown, None),
            };
            ReportRow {
                sample_index: i,
                true_label: *label,
                verdict,
                min_margin: worst.map(|w| w.1),
                worst_label: worst.map(|w| w.0),
                elapsed_s: start.elapsed().as_secs_f64(),
                method: config.relax.method.to_string(),
                alpha: config.relax.alpha,
                strategy: config.strategy.to_string(),
                epsilon: spec.epsilon,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.sample_index);
    Report { rows }
}
