//! Multi-plane refinement.
//!
//! The box of each relaxed product is tiled into sub-regions. Every
//! sub-region yields its own LP planes, which are then offset over the whole
//! box so that each candidate is a valid bound everywhere. A convex
//! combination of valid lower (upper) planes is again valid, so the weights
//! `λ` can be tuned freely on the simplex to maximize the certified margin.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use crate::relax::{
    self, soundness_offset, BivariateKind, Box2, Plane, PlanePair, RelaxConfig, Region2, Triangle,
};
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivisionStrategy {
    None,
    TriUp2,
    TriDown2,
    Tri4,
    RecVec2,
    RecHor2,
    Rec4,
    Rec9,
    Rec16,
}

impl DivisionStrategy {
    pub const ALL: [DivisionStrategy; 9] = [
        DivisionStrategy::None,
        DivisionStrategy::TriUp2,
        DivisionStrategy::TriDown2,
        DivisionStrategy::Tri4,
        DivisionStrategy::RecVec2,
        DivisionStrategy::RecHor2,
        DivisionStrategy::Rec4,
        DivisionStrategy::Rec9,
        DivisionStrategy::Rec16,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DivisionStrategy::None => "none",
            DivisionStrategy::TriUp2 => "2-tri-up",
            DivisionStrategy::TriDown2 => "2-tri-down",
            DivisionStrategy::Tri4 => "4-tri",
            DivisionStrategy::RecVec2 => "2-rec-vec",
            DivisionStrategy::RecHor2 => "2-rec-hor",
            DivisionStrategy::Rec4 => "4-rec",
            DivisionStrategy::Rec9 => "9-rec",
            DivisionStrategy::Rec16 => "16-rec",
        }
    }
}

impl fmt::Display for DivisionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DivisionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown division strategy `{s}`")))
    }
}

/// Sub-regions of a box. `degenerate` is set when the box had zero extent
/// on some axis and was returned whole.
#[derive(Debug, Clone, PartialEq)]
pub struct Division {
    pub regions: Vec<Region2>,
    pub degenerate: bool,
}

fn grid(bx: &Box2, nx: usize, ny: usize) -> Vec<Region2> {
    let xs: Vec<f64> = (0..=nx)
        .map(|i| if i == nx { bx.ux } else { bx.lx + bx.width_x() * i as f64 / nx as f64 })
        .collect();
    let ys: Vec<f64> = (0..=ny)
        .map(|j| if j == ny { bx.uy } else { bx.ly + bx.width_y() * j as f64 / ny as f64 })
        .collect();
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(Region2::Rect(Box2 {
                lx: xs[i],
                ux: xs[i + 1],
                ly: ys[j],
                uy: ys[j + 1],
            }));
        }
    }
    out
}

/// Tiles `bx` by `strategy`. `TriUp2` cuts along `(lx,ly)–(ux,uy)`,
/// `TriDown2` along `(lx,uy)–(ux,ly)`.
pub fn divide(bx: &Box2, strategy: DivisionStrategy) -> Division {
    if bx.degenerate_x() || bx.degenerate_y() {
        return Division {
            regions: vec![Region2::Rect(*bx)],
            degenerate: strategy != DivisionStrategy::None,
        };
    }
    let [p00, p10, p01, p11] = bx.corners();
    let tri = |a, b, c| Region2::Tri(Triangle::new(a, b, c).expect("box corners are not collinear"));
    let regions = match strategy {
        DivisionStrategy::None => vec![Region2::Rect(*bx)],
        DivisionStrategy::TriUp2 => vec![tri(p00, p10, p11), tri(p00, p11, p01)],
        DivisionStrategy::TriDown2 => vec![tri(p00, p10, p01), tri(p10, p11, p01)],
        DivisionStrategy::Tri4 => {
            let c = bx.center();
            vec![tri(p00, p10, c), tri(p10, p11, c), tri(p11, p01, c), tri(p01, p00, c)]
        }
        DivisionStrategy::RecVec2 => grid(bx, 2, 1),
        DivisionStrategy::RecHor2 => grid(bx, 1, 2),
        DivisionStrategy::Rec4 => grid(bx, 2, 2),
        DivisionStrategy::Rec9 => grid(bx, 3, 3),
        DivisionStrategy::Rec16 => grid(bx, 4, 4),
    };
    Division {
        regions,
        degenerate: false,
    }
}

/// Candidate planes for one relaxed product. Index 0 is the undivided box.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub regions: Vec<Region2>,
    pub lower: Vec<Plane>,
    pub upper: Vec<Plane>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn pair(&self, k: usize) -> PlanePair {
        PlanePair {
            lower: self.lower[k],
            upper: self.upper[k],
        }
    }
}

/// Candidate planes over `bx` and each sub-region, all valid over `bx`.
pub fn candidate_planes(
    bx: &Box2,
    kind: BivariateKind,
    strategy: DivisionStrategy,
    cfg: &RelaxConfig,
) -> Result<CandidateSet> {
    let whole = Region2::Rect(*bx);
    let first = relax::relax(&whole, kind, cfg)?;
    let mut set = CandidateSet {
        regions: vec![whole],
        lower: vec![first.lower],
        upper: vec![first.upper],
    };
    if strategy == DivisionStrategy::None {
        return Ok(set);
    }
    let division = divide(bx, strategy);
    if division.degenerate {
        return Ok(set);
    }
    for region in division.regions {
        let raw = relax::solve_relaxation_lp(&region, kind, cfg)?;
        let pair = soundness_offset(&raw.planes, &whole, kind, cfg.offset_grid);
        set.regions.push(region);
        set.lower.push(pair.lower);
        set.upper.push(pair.upper);
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

fn mix(planes: &[Plane], weights: &[f64]) -> Plane {
    let mut out = Plane::default();
    for (p, &w) in planes.iter().zip(weights) {
        if w != 0.0 {
            out.a += w * p.a;
            out.b += w * p.b;
            out.c += w * p.c;
        }
    }
    out
}

pub fn on_simplex(weights: &[f64]) -> bool {
    let sum: f64 = weights.iter().sum();
    weights.iter().all(|&w| w >= -SIMPLEX_TOL) && (sum - 1.0).abs() <= SIMPLEX_TOL
}

/// Convex combination `Σ λ_k · plane_k` of one side's candidates.
pub fn combine(set: &CandidateSet, weights: &[f64], side: Side) -> Result<Plane> {
    if weights.len() != set.len() {
        return Err(Error::Dimension {
            expected: set.len(),
            found: weights.len(),
        });
    }
    if !on_simplex(weights) {
        return Err(Error::InvalidArgument(
            "combination weights are not on the probability simplex".into(),
        ));
    }
    let planes = match side {
        Side::Lower => &set.lower,
        Side::Upper => &set.upper,
    };
    Ok(mix(planes, weights))
}

/// Both sides combined without the simplex check; used for finite
/// differences, which probe just off the simplex.
pub fn combine_pair_unchecked(set: &CandidateSet, lower: &[f64], upper: &[f64]) -> PlanePair {
    PlanePair {
        lower: mix(&set.lower, lower),
        upper: mix(&set.upper, upper),
    }
}

/// Concatenated weight vectors, one simplex block per (neuron, side).
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaWeights {
    pub values: Vec<f64>,
    blocks: Vec<Range<usize>>,
}

impl LambdaWeights {
    /// Every block at the first vertex `(1, 0, …, 0)`.
    pub fn vertex(block_sizes: &[usize]) -> Self {
        let mut values = Vec::new();
        let mut blocks = Vec::with_capacity(block_sizes.len());
        for &n in block_sizes {
            let start = values.len();
            values.extend((0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }));
            blocks.push(start..start + n);
        }
        Self { values, blocks }
    }

    pub fn uniform(block_sizes: &[usize]) -> Self {
        let mut out = Self::vertex(block_sizes);
        for b in out.blocks.clone() {
            let n = b.len() as f64;
            out.values[b].iter_mut().for_each(|v| *v = 1.0 / n);
        }
        out
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
        let mut out = Self::vertex(&sizes);
        out.values = blocks.concat();
        out
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_range(&self, k: usize) -> Range<usize> {
        self.blocks[k].clone()
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.values[self.blocks[k].clone()]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_feasible(&self) -> bool {
        (0..self.num_blocks()).all(|k| on_simplex(self.block(k)))
    }

    /// Projection of `grad` onto the directions that stay on every block's
    /// simplex to first order: coordinates stuck at zero with a pull
    /// outward are frozen, the rest lose their mean.
    pub fn feasible_direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; grad.len()];
        for b in &self.blocks {
            let lam = &self.values[b.clone()];
            let g = &grad[b.clone()];
            let mut free: Vec<bool> = vec![true; g.len()];
            loop {
                let n = free.iter().filter(|&&f| f).count();
                if n == 0 {
                    break;
                }
                let mean = g.iter().zip(&free).filter(|(_, &f)| f).map(|(v, _)| v).sum::<f64>() / n as f64;
                let mut changed = false;
                for i in 0..g.len() {
                    if free[i] && lam[i] <= 0.0 && g[i] - mean < 0.0 {
                        free[i] = false;
                        changed = true;
                    }
                }
                if !changed {
                    for i in 0..g.len() {
                        out[b.start + i] = if free[i] { g[i] - mean } else { 0.0 };
                    }
                    break;
                }
            }
        }
        out
    }

    /// Euclidean projection of every block onto the simplex.
    pub fn project(&mut self) {
        for b in self.blocks.clone() {
            project_simplex(&mut self.values[b]);
        }
    }
}

/// In-place Euclidean projection onto `{w ≥ 0, Σw = 1}`.
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Projected gradient ascent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    /// Length of the first step in λ-space.
    pub step: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub max_iters: usize,
    /// Consecutive rejected steps before giving up.
    pub patience: usize,
    /// Central-difference half step per coordinate.
    pub fd_step: f64,
    pub deadline: Option<Instant>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            step: 0.05,
            decay: 0.7,
            decay_every: 20,
            max_iters: 100,
            patience: 15,
            fd_step: 1e-4,
            deadline: None,
        }
    }
}

/// Result of [`optimize_lambda`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub lambda: LambdaWeights,
    pub margin: f64,
    pub iterations: usize,
    /// Margins accepted along the way, starting with the initial one.
    pub trajectory: Vec<f64>,
}

/// Maximizes `objective` over per-block simplices by projected ascent.
///
/// Steps follow the normalized gradient, restricted to directions that stay
/// on the simplex, with length `step · decay^(iter / decay_every)`, halved
/// after each rejection. A step is kept only if it strictly raises the
/// objective, so the returned margin is never below the initial one. Stops
/// early once the margin reaches 0.
pub fn optimize_lambda<F>(objective: F, init: LambdaWeights, schedule: &Schedule) -> Optimized
where
    F: FnMut(&LambdaWeights) -> f64,
{
    optimize_lambda_with(&mut FnObjective(objective), init, schedule)
}

/// A margin as a function of λ, with an optional better gradient.
pub trait Objective {
    fn value(&mut self, lambda: &LambdaWeights) -> f64;

    /// Central differences per λ coordinate unless overridden.
    fn gradient(&mut self, lambda: &LambdaWeights, h: f64) -> Vec<f64> {
        let mut probe = lambda.clone();
        let mut grad = vec![0.0; lambda.len()];
        for i in 0..lambda.len() {
            let base = lambda.values[i];
            probe.values[i] = base + h;
            let up = self.value(&probe);
            probe.values[i] = base - h;
            let down = self.value(&probe);
            probe.values[i] = base;
            grad[i] = (up - down) / (2.0 * h);
        }
        grad
    }
}

struct FnObjective<F>(F);

impl<F: FnMut(&LambdaWeights) -> f64> Objective for FnObjective<F> {
    fn value(&mut self, lambda: &LambdaWeights) -> f64 {
        (self.0)(lambda)
    }
}

/// [`optimize_lambda`] over an [`Objective`].
pub fn optimize_lambda_with<O: Objective + ?Sized>(objective: &mut O, init: LambdaWeights, schedule: &Schedule) -> Optimized {
    let mut best = init;
    let mut best_margin = objective.value(&best);
    let mut trajectory = vec![best_margin];
    let mut grad: Option<Vec<f64>> = None;
    let mut rejected = 0usize;
    let mut iterations = 0usize;
    while iterations < schedule.max_iters && best_margin < 0.0 && !best.is_empty() {
        if schedule.deadline.is_some_and(|d| Instant::now() > d) {
            break;
        }
        let lr = schedule.step * schedule.decay.powi((iterations / schedule.decay_every.max(1)) as i32);
        iterations += 1;
        let g = grad.get_or_insert_with(|| {
            let raw = objective.gradient(&best, schedule.fd_step);
            best.feasible_direction(&raw)
        });
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            break;
        }
        let len = lr * 0.5f64.powi(rejected as i32) / norm;
        let mut candidate = best.clone();
        for (v, d) in candidate.values.iter_mut().zip(g.iter()) {
            *v += len * d;
        }
        candidate.project();
        let margin = objective.value(&candidate);
        if margin > best_margin {
            best = candidate;
            best_margin = margin;
            trajectory.push(margin);
            grad = None;
            rejected = 0;
        } else {
            rejected += 1;
            if rejected >= schedule.patience {
                break;
            }
        }
    }
    Optimized {
        lambda: best,
        margin: best_margin,
        iterations,
        trajectory,
    }
}
