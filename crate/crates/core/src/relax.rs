//! Plane-pair relaxations of the LSTM gate products over a 2-D region.
//!
//! For `f(x, y) = σ(x)·tanh(y)` or `σ(x)·y` we look for affine planes
//! `lower ≤ f ≤ upper` over a rectangle or triangle. The planes come from a
//! linear program over sampled points, with one of three objectives:
//!
//! * [`RelaxMethod::Distance`]: two LPs, each minimizing the summed vertical
//!   gap between a plane and the surface at the samples.
//! * [`RelaxMethod::Volume`]: one LP minimizing the prism volume, which for a
//!   rectangle is `area · (z_c(upper) − z_c(lower))` at the centroid.
//! * [`RelaxMethod::Hybrid`]: one LP minimizing
//!   `α·height + (1−α)·Σ|z_corner − z_centroid|` over both planes, the corner
//!   term being a linear proxy for the top and bottom face areas.
//!
//! Samples cannot certify a bound, so every LP result goes through
//! [`soundness_offset`], which lifts or lowers the planes by the maximum
//! violation on a dense grid plus a certified interpolation margin.

use std::fmt;
use std::str::FromStr;

use crate::lp::{self, AffineTerm, LpProblem, Sense};
use crate::model::sigmoid;
use crate::{Error, Result};

/// Sup of |σ''| over ℝ, `1/(6√3)` rounded up.
const SIGMOID_D2_MAX: f64 = 0.096_226;
/// Sup of |tanh''| over ℝ, `4/(3√3)` rounded up.
const TANH_D2_MAX: f64 = 0.769_801;
/// Relative width below which an axis is treated as a single value.
const DEGENERATE_WIDTH: f64 = 1e-10;

pub const DEFAULT_ALPHA: f64 = 0.674;
pub const DEFAULT_SAMPLE_DENSITY: usize = 10;
pub const DEFAULT_OFFSET_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BivariateKind {
    /// `σ(x)·tanh(y)`
    SigTanh,
    /// `σ(x)·y`
    SigMul,
}

impl BivariateKind {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            BivariateKind::SigTanh => sigmoid(x) * y.tanh(),
            BivariateKind::SigMul => sigmoid(x) * y,
        }
    }
}

pub fn eval_bivariate(kind: BivariateKind, x: f64, y: f64) -> f64 {
    kind.eval(x, y)
}

/// Axis-aligned rectangle `[lx, ux] × [ly, uy]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2 {
    pub lx: f64,
    pub ux: f64,
    pub ly: f64,
    pub uy: f64,
}

impl Box2 {
    pub fn new(lx: f64, ux: f64, ly: f64, uy: f64) -> Result<Self> {
        if ![lx, ux, ly, uy].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "box bounds".into(),
            });
        }
        if lx > ux || ly > uy {
            return Err(Error::InvalidArgument(format!(
                "inverted box [{lx}, {ux}] x [{ly}, {uy}]"
            )));
        }
        Ok(Self { lx, ux, ly, uy })
    }

    pub fn width_x(&self) -> f64 {
        self.ux - self.lx
    }

    pub fn width_y(&self) -> f64 {
        self.uy - self.ly
    }

    pub fn area(&self) -> f64 {
        self.width_x() * self.width_y()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.lx + self.ux), 0.5 * (self.ly + self.uy))
    }

    pub fn is_point(&self) -> bool {
        self.degenerate_x() && self.degenerate_y()
    }

    pub(crate) fn degenerate_x(&self) -> bool {
        self.width_x() <= DEGENERATE_WIDTH * (1.0 + self.lx.abs().max(self.ux.abs()))
    }

    pub(crate) fn degenerate_y(&self) -> bool {
        self.width_y() <= DEGENERATE_WIDTH * (1.0 + self.ly.abs().max(self.uy.abs()))
    }

    /// Corners in the order `(lx,ly), (ux,ly), (lx,uy), (ux,uy)`, so that
    /// opposite corners are indices {0,3} and {1,2}.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.lx, self.ly),
            (self.ux, self.ly),
            (self.lx, self.uy),
            (self.ux, self.uy),
        ]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.lx && x <= self.ux && y >= self.ly && y <= self.uy
    }
}

/// Triangle with vertices in any orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    vertices: [(f64, f64); 3],
}

impl Triangle {
    pub fn new(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Result<Self> {
        let vertices = [a, b, c];
        if vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "triangle vertex".into(),
            });
        }
        let tri = Self { vertices };
        let diam2 = [(a, b), (b, c), (a, c)]
            .iter()
            .map(|(p, q)| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2))
            .fold(0.0, f64::max);
        if tri.area() <= 1e-12 * diam2 || diam2 == 0.0 {
            return Err(Error::InvalidArgument("collinear triangle".into()));
        }
        Ok(tri)
    }

    pub fn vertices(&self) -> [(f64, f64); 3] {
        self.vertices
    }

    fn signed_area(&self) -> f64 {
        let [(x0, y0), (x1, y1), (x2, y2)] = self.vertices;
        0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let [(x0, y0), (x1, y1), (x2, y2)] = self.vertices;
        ((x0 + x1 + x2) / 3.0, (y0 + y1 + y2) / 3.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [a, b, c] = self.vertices;
        let cross = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0);
        let (d0, d1, d2) = (cross(a, b), cross(b, c), cross(c, a));
        let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
        let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
        !(has_neg && has_pos)
    }

    /// Euclidean distance from a point to the closed triangle.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            return 0.0;
        }
        let [a, b, c] = self.vertices;
        [(a, b), (b, c), (c, a)]
            .iter()
            .map(|&(p, q)| segment_distance((x, y), p, q))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn bounding_box(&self) -> Box2 {
        let xs = self.vertices.map(|v| v.0);
        let ys = self.vertices.map(|v| v.1);
        Box2 {
            lx: xs.iter().copied().fold(f64::INFINITY, f64::min),
            ux: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ly: ys.iter().copied().fold(f64::INFINITY, f64::min),
            uy: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// A relaxation region: a rectangle or a triangular piece of one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region2 {
    Rect(Box2),
    Tri(Triangle),
}

impl Region2 {
    pub fn bounding_box(&self) -> Box2 {
        match self {
            Region2::Rect(b) => *b,
            Region2::Tri(t) => t.bounding_box(),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Region2::Rect(b) => b.area(),
            Region2::Tri(t) => t.area(),
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        match self {
            Region2::Rect(b) => b.center(),
            Region2::Tri(t) => t.centroid(),
        }
    }

    /// Points the corner-deviation objective is anchored at.
    pub fn anchors(&self) -> Vec<(f64, f64)> {
        match self {
            Region2::Rect(b) => b.corners().to_vec(),
            Region2::Tri(t) => t.vertices().to_vec(),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, Region2::Rect(b) if b.is_point())
    }
}

impl From<Box2> for Region2 {
    fn from(b: Box2) -> Self {
        Region2::Rect(b)
    }
}

impl From<Triangle> for Region2 {
    fn from(t: Triangle) -> Self {
        Region2::Tri(t)
    }
}

/// Affine function `a·x + b·y + c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Plane {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn constant(c: f64) -> Self {
        Self { a: 0.0, b: 0.0, c }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

/// Lower and upper bounding planes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanePair {
    pub lower: Plane,
    pub upper: Plane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelaxMethod {
    Distance,
    Volume,
    Hybrid,
}

impl RelaxMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RelaxMethod::Distance => "distance",
            RelaxMethod::Volume => "volume",
            RelaxMethod::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for RelaxMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelaxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(RelaxMethod::Distance),
            "volume" => Ok(RelaxMethod::Volume),
            "hybrid" => Ok(RelaxMethod::Hybrid),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxConfig {
    /// Weight of the centroid height in the hybrid objective.
    pub alpha: f64,
    /// LP samples per axis.
    pub sample_density: usize,
    /// Offset validation grid points per axis.
    pub offset_grid: usize,
    pub method: RelaxMethod,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            sample_density: DEFAULT_SAMPLE_DENSITY,
            offset_grid: DEFAULT_OFFSET_GRID,
            method: RelaxMethod::Hybrid,
        }
    }
}

impl RelaxConfig {
    pub fn with_method(method: RelaxMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.sample_density < 3 {
            return Err(Error::InvalidArgument(
                "sample density must be at least 3".into(),
            ));
        }
        if self.offset_grid < 16 {
            return Err(Error::InvalidArgument(
                "offset grid must be at least 16".into(),
            ));
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * (i as f64) / ((n - 1) as f64)
            }
        })
        .collect()
}

/// LP sample points. Rectangles get a `density × density` grid with all four
/// corners; an axis of zero width collapses to one value. Triangles get the
/// barycentric lattice of order `density`, `density·(density+1)/2` points
/// including the vertices.
pub fn sample_points(region: &Region2, density: usize) -> Vec<(f64, f64)> {
    let density = density.max(2);
    match region {
        Region2::Rect(b) => {
            let nx = if b.degenerate_x() { 1 } else { density };
            let ny = if b.degenerate_y() { 1 } else { density };
            let xs = if nx == 1 { vec![b.lx] } else { linspace(b.lx, b.ux, nx) };
            let ys = if ny == 1 { vec![b.ly] } else { linspace(b.ly, b.uy, ny) };
            let mut pts = Vec::with_capacity(nx * ny);
            for &x in &xs {
                for &y in &ys {
                    pts.push((x, y));
                }
            }
            pts
        }
        Region2::Tri(t) => {
            let [v0, v1, v2] = t.vertices();
            let order = (density - 1) as f64;
            let mut pts = Vec::with_capacity(density * (density + 1) / 2);
            for i in 0..density {
                for j in 0..density - i {
                    let k = density - 1 - i - j;
                    let (wi, wj, wk) = (i as f64 / order, j as f64 / order, k as f64 / order);
                    pts.push((
                        wi * v0.0 + wj * v1.0 + wk * v2.0,
                        wi * v0.1 + wj * v1.1 + wk * v2.1,
                    ));
                }
            }
            pts
        }
    }
}

/// Centered and scaled coordinates `s = (x−x₀)/rx`, `t = (y−y₀)/ry` used
/// inside the LPs, with the centroid at the origin.
#[derive(Debug, Clone, Copy)]
struct LocalFrame {
    x0: f64,
    y0: f64,
    rx: f64,
    ry: f64,
    fixed_a: bool,
    fixed_b: bool,
}

impl LocalFrame {
    fn new(region: &Region2) -> Self {
        let bb = region.bounding_box();
        let (x0, y0) = region.centroid();
        let fixed_a = bb.degenerate_x();
        let fixed_b = bb.degenerate_y();
        Self {
            x0,
            y0,
            rx: if fixed_a { 1.0 } else { 0.5 * bb.width_x() },
            ry: if fixed_b { 1.0 } else { 0.5 * bb.width_y() },
            fixed_a,
            fixed_b,
        }
    }

    fn local(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let s = if self.fixed_a { 0.0 } else { (x - self.x0) / self.rx };
        let t = if self.fixed_b { 0.0 } else { (y - self.y0) / self.ry };
        (s, t)
    }

    fn global(&self, a: f64, b: f64, c: f64) -> Plane {
        let a = if self.fixed_a { 0.0 } else { a / self.rx };
        let b = if self.fixed_b { 0.0 } else { b / self.ry };
        Plane::new(a, b, c - a * self.x0 - b * self.y0)
    }
}

/// Raw LP result before offsetting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpPlanes {
    pub planes: PlanePair,
    /// Optimal objective in original units: total gap for distance, centroid
    /// height for volume, `α·height + (1−α)·sum` for hybrid.
    pub objective: f64,
}

struct Samples {
    frame: LocalFrame,
    local: Vec<(f64, f64)>,
    values: Vec<f64>,
}

impl Samples {
    fn new(region: &Region2, kind: BivariateKind, density: usize) -> Self {
        let frame = LocalFrame::new(region);
        let pts = sample_points(region, density);
        let values = pts.iter().map(|&(x, y)| kind.eval(x, y)).collect();
        let local = pts.iter().map(|&p| frame.local(p)).collect();
        Self {
            frame,
            local,
            values,
        }
    }

    /// Adds `plane(s,t) sense f` rows for the plane whose (a,b,c) occupy
    /// columns `base..base+3`.
    fn constrain(&self, lp: &mut LpProblem, base: usize, sense: Sense) -> Result<()> {
        let n = lp.num_vars();
        for (&(s, t), &f) in self.local.iter().zip(&self.values) {
            let mut row = vec![0.0; n];
            row[base] = s;
            row[base + 1] = t;
            row[base + 2] = 1.0;
            lp.add_constraint(row, sense, f)?;
        }
        Ok(())
    }

    fn fix_degenerate(&self, lp: &mut LpProblem, base: usize) -> Result<()> {
        if self.frame.fixed_a {
            lp.set_bounds(base, 0.0, 0.0)?;
        }
        if self.frame.fixed_b {
            lp.set_bounds(base + 1, 0.0, 0.0)?;
        }
        Ok(())
    }
}

fn solve_or_err(lp: &LpProblem, what: &str) -> Result<lp::LpSolution> {
    let sol = lp::solve(lp);
    if !sol.is_optimal() {
        return Err(Error::Lp(format!("{what} LP ended {:?}", sol.status)));
    }
    Ok(sol)
}

fn lp_distance(region: &Region2, kind: BivariateKind, cfg: &RelaxConfig) -> Result<LpPlanes> {
    let samples = Samples::new(region, kind, cfg.sample_density);
    let n = samples.local.len() as f64;
    let sum_s: f64 = samples.local.iter().map(|p| p.0).sum();
    let sum_t: f64 = samples.local.iter().map(|p| p.1).sum();
    let sum_f: f64 = samples.values.iter().sum();

    // lower: minimize Σ(f − plane) = Σf − (a·Σs + b·Σt + c·n)
    let mut lower = LpProblem::new(3);
    lower.set_objective(vec![-sum_s, -sum_t, -n])?;
    samples.fix_degenerate(&mut lower, 0)?;
    samples.constrain(&mut lower, 0, Sense::Le)?;
    let lo = solve_or_err(&lower, "distance lower")?;

    let mut upper = LpProblem::new(3);
    upper.set_objective(vec![sum_s, sum_t, n])?;
    samples.fix_degenerate(&mut upper, 0)?;
    samples.constrain(&mut upper, 0, Sense::Ge)?;
    let up = solve_or_err(&upper, "distance upper")?;

    let f = &samples.frame;
    Ok(LpPlanes {
        planes: PlanePair {
            lower: f.global(lo.values[0], lo.values[1], lo.values[2]),
            upper: f.global(up.values[0], up.values[1], up.values[2]),
        },
        objective: (sum_f + lo.objective_value) + (up.objective_value - sum_f),
    })
}

/// Joint LP over `[a_l, b_l, c_l, a_u, b_u, c_u]` in local coordinates.
fn joint_problem(samples: &Samples) -> Result<LpProblem> {
    let mut lp = LpProblem::new(6);
    // centroid height: c_u − c_l (the centroid is the local origin)
    lp.set_objective(vec![0.0, 0.0, -1.0, 0.0, 0.0, 1.0])?;
    samples.fix_degenerate(&mut lp, 0)?;
    samples.fix_degenerate(&mut lp, 3)?;
    samples.constrain(&mut lp, 0, Sense::Le)?;
    samples.constrain(&mut lp, 3, Sense::Ge)?;
    Ok(lp)
}

fn joint_planes(samples: &Samples, values: &[f64]) -> PlanePair {
    let f = &samples.frame;
    PlanePair {
        lower: f.global(values[0], values[1], values[2]),
        upper: f.global(values[3], values[4], values[5]),
    }
}

fn lp_volume(region: &Region2, kind: BivariateKind, cfg: &RelaxConfig) -> Result<LpPlanes> {
    let samples = Samples::new(region, kind, cfg.sample_density);
    let lp = joint_problem(&samples)?;
    let sol = solve_or_err(&lp, "volume")?;
    Ok(LpPlanes {
        planes: joint_planes(&samples, &sol.values),
        objective: sol.objective_value,
    })
}

fn lp_hybrid(region: &Region2, kind: BivariateKind, cfg: &RelaxConfig) -> Result<LpPlanes> {
    let alpha = cfg.alpha;
    let samples = Samples::new(region, kind, cfg.sample_density);
    let mut lp = joint_problem(&samples)?;
    lp.set_objective(vec![0.0, 0.0, -alpha, 0.0, 0.0, alpha])?;

    // z_i − z_c = a·s_i + b·t_i for every anchor, on both planes
    let anchors: Vec<(f64, f64)> = region
        .anchors()
        .into_iter()
        .map(|p| samples.frame.local(p))
        .collect();
    let mut terms = Vec::with_capacity(2 * anchors.len());
    for base in [3usize, 0] {
        for &(s, t) in &anchors {
            let mut coeffs = vec![0.0; 6];
            coeffs[base] = s;
            coeffs[base + 1] = t;
            terms.push(AffineTerm {
                coeffs,
                constant: 0.0,
            });
        }
    }
    let weights = vec![1.0 - alpha; terms.len()];
    let (lp, _) = lp::encode_abs_terms(&lp, &terms, &weights)?;
    let sol = solve_or_err(&lp, "hybrid")?;
    Ok(LpPlanes {
        planes: joint_planes(&samples, &sol.values),
        objective: sol.objective_value,
    })
}

/// Solves the relaxation LP for `cfg.method` without any offset.
pub fn solve_relaxation_lp(
    region: &Region2,
    kind: BivariateKind,
    cfg: &RelaxConfig,
) -> Result<LpPlanes> {
    match cfg.method {
        RelaxMethod::Distance => lp_distance(region, kind, cfg),
        RelaxMethod::Volume => lp_volume(region, kind, cfg),
        RelaxMethod::Hybrid => lp_hybrid(region, kind, cfg),
    }
}

fn reject_point(region: &Region2) -> Result<()> {
    if region.is_point() {
        return Err(Error::InvalidArgument(
            "volume-based relaxation needs a box with positive extent".into(),
        ));
    }
    Ok(())
}

/// Distance-based planes (two LPs), offset to be sound over `region`.
pub fn relax_distance(region: &Region2, kind: BivariateKind, cfg: &RelaxConfig) -> Result<PlanePair> {
    let raw = lp_distance(region, kind, cfg)?;
    Ok(soundness_offset(&raw.planes, region, kind, cfg.offset_grid))
}

/// Volume-based planes (one LP), offset to be sound over `bx`.
pub fn relax_volume(bx: &Box2, kind: BivariateKind, cfg: &RelaxConfig) -> Result<PlanePair> {
    let region = Region2::Rect(*bx);
    reject_point(&region)?;
    let raw = lp_volume(&region, kind, cfg)?;
    Ok(soundness_offset(&raw.planes, &region, kind, cfg.offset_grid))
}

/// Hybrid volume/area planes (one LP), offset to be sound over `bx`.
pub fn relax_hybrid(bx: &Box2, kind: BivariateKind, cfg: &RelaxConfig) -> Result<PlanePair> {
    let region = Region2::Rect(*bx);
    reject_point(&region)?;
    let raw = lp_hybrid(&region, kind, cfg)?;
    Ok(soundness_offset(&raw.planes, &region, kind, cfg.offset_grid))
}

/// Sound planes over `region` by `cfg.method`. A point region gets the exact
/// constant planes `z = f(x₀, y₀)`.
pub fn relax(region: &Region2, kind: BivariateKind, cfg: &RelaxConfig) -> Result<PlanePair> {
    if region.is_point() {
        let (x, y) = region.centroid();
        let v = kind.eval(x, y);
        let pair = PlanePair {
            lower: Plane::constant(v),
            upper: Plane::constant(v),
        };
        return Ok(soundness_offset(&pair, region, kind, cfg.offset_grid));
    }
    let raw = solve_relaxation_lp(region, kind, cfg)?;
    Ok(soundness_offset(&raw.planes, region, kind, cfg.offset_grid))
}

/// Bounds on first and second partial derivatives of `f` over a box.
#[derive(Debug, Clone, Copy)]
struct DerivativeBounds {
    fx: f64,
    fy: f64,
    fxx: f64,
    fyy: f64,
    fxy: f64,
}

fn sigmoid_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

fn derivative_bounds(kind: BivariateKind, bx: &Box2) -> DerivativeBounds {
    // σ' and tanh' peak at 0 and decrease in |·|; σ is increasing.
    let sig_d1 = sigmoid_d1(0.0f64.clamp(bx.lx, bx.ux));
    let sig_max = sigmoid(bx.ux);
    let widen = 1.0 + 1e-9;
    let b = match kind {
        BivariateKind::SigTanh => {
            let tanh_max = bx.ly.tanh().abs().max(bx.uy.tanh().abs());
            let t0 = 0.0f64.clamp(bx.ly, bx.uy).tanh();
            let tanh_d1 = 1.0 - t0 * t0;
            DerivativeBounds {
                fx: sig_d1 * tanh_max,
                fy: sig_max * tanh_d1,
                fxx: SIGMOID_D2_MAX * tanh_max,
                fyy: sig_max * TANH_D2_MAX,
                fxy: sig_d1 * tanh_d1,
            }
        }
        BivariateKind::SigMul => {
            let y_max = bx.ly.abs().max(bx.uy.abs());
            DerivativeBounds {
                fx: sig_d1 * y_max,
                fy: sig_max,
                fxx: SIGMOID_D2_MAX * y_max,
                fyy: 0.0,
                fxy: sig_d1,
            }
        }
    };
    DerivativeBounds {
        fx: b.fx * widen,
        fy: b.fy * widen,
        fxx: b.fxx * widen,
        fyy: b.fyy * widen,
        fxy: b.fxy * widen,
    }
}

/// Shifts the planes so that `lower ≤ f ≤ upper` holds everywhere on `region`.
///
/// The violation `g = f − upper` (resp. `lower − f`) is maximized over a
/// `grid × grid` lattice on the bounding box. Between lattice points `g` can
/// exceed the lattice maximum by at most the smaller of
/// * a Lipschitz margin `Gx·hx/2 + Gy·hy/2` (distance to the nearest node),
/// * a curvature margin `(hx²·Hxx + hy²·Hyy + 2·hx·hy·Hxy)/8` (bilinear
///   interpolation error on a cell),
///
/// where `G`, `H` bound the first and second partials of `g` on the box. For
/// triangles only nodes of cells that can meet the triangle are visited. A
/// side is moved only if its certified violation is positive.
pub fn soundness_offset(
    pair: &PlanePair,
    region: &Region2,
    kind: BivariateKind,
    grid: usize,
) -> PlanePair {
    let bb = region.bounding_box();
    let nx = if bb.degenerate_x() { 1 } else { grid.max(2) };
    let ny = if bb.degenerate_y() { 1 } else { grid.max(2) };
    let xs = if nx == 1 { vec![bb.center().0] } else { linspace(bb.lx, bb.ux, nx) };
    let ys = if ny == 1 { vec![bb.center().1] } else { linspace(bb.ly, bb.uy, ny) };
    let hx = if nx == 1 { bb.width_x() } else { bb.width_x() / (nx - 1) as f64 };
    let hy = if ny == 1 { bb.width_y() } else { bb.width_y() / (ny - 1) as f64 };
    let reach = (hx * hx + hy * hy).sqrt() * (1.0 + 1e-9);

    let tri = match region {
        Region2::Tri(t) => Some(t),
        Region2::Rect(_) => None,
    };
    let mut worst_up = f64::NEG_INFINITY;
    let mut worst_lo = f64::NEG_INFINITY;
    let mut scale: f64 = 0.0;
    for &x in &xs {
        for &y in &ys {
            if let Some(t) = tri {
                if t.distance(x, y) > reach {
                    continue;
                }
            }
            let f = kind.eval(x, y);
            let up = pair.upper.eval(x, y);
            let lo = pair.lower.eval(x, y);
            worst_up = worst_up.max(f - up);
            worst_lo = worst_lo.max(lo - f);
            scale = scale.max(f.abs()).max(up.abs()).max(lo.abs());
        }
    }

    let d = derivative_bounds(kind, &bb);
    // a collapsed axis of nonzero width has no cell corners to interpolate
    let collapsed = (nx == 1 && hx > 0.0) || (ny == 1 && hy > 0.0);
    let curvature = if collapsed {
        f64::INFINITY
    } else {
        (hx * hx * d.fxx + hy * hy * d.fyy + 2.0 * hx * hy * d.fxy) / 8.0
    };
    let lipschitz = |p: &Plane| 0.5 * (hx * (d.fx + p.a.abs()) + hy * (d.fy + p.b.abs()));
    // float evaluation error of f and the planes
    let rounding = 16.0 * f64::EPSILON * (1.0 + scale);

    let delta_up = worst_up + curvature.min(lipschitz(&pair.upper)) + rounding;
    let delta_lo = worst_lo + curvature.min(lipschitz(&pair.lower)) + rounding;
    let mut out = *pair;
    if delta_up > 0.0 {
        out.upper.c += delta_up;
    }
    if delta_lo > 0.0 {
        out.lower.c -= delta_lo;
    }
    out
}

/// `z_c(upper) − z_c(lower)` at the box midpoint; negative when crossed.
pub fn centroid_height(pair: &PlanePair, bx: &Box2) -> f64 {
    let (x, y) = bx.center();
    pair.upper.eval(x, y) - pair.lower.eval(x, y)
}

/// Signed volume between the planes over the box: `area · centroid height`.
pub fn prism_volume(pair: &PlanePair, bx: &Box2) -> f64 {
    bx.area() * centroid_height(pair, bx)
}

/// `Σ|z_i − z_c(upper)| + Σ|z_i − z_c(lower)|` over the four corners.
pub fn surface_proxy(pair: &PlanePair, bx: &Box2) -> f64 {
    region_surface_proxy(pair, &Region2::Rect(*bx))
}

pub(crate) fn region_surface_proxy(pair: &PlanePair, region: &Region2) -> f64 {
    let (cx, cy) = region.centroid();
    let zu = pair.upper.eval(cx, cy);
    let zl = pair.lower.eval(cx, cy);
    region
        .anchors()
        .iter()
        .map(|&(x, y)| (pair.upper.eval(x, y) - zu).abs() + (pair.lower.eval(x, y) - zl).abs())
        .sum()
}

/// `α·height + (1−α)·sum` evaluated directly from plane coefficients.
pub fn hybrid_objective(pair: &PlanePair, region: &Region2, alpha: f64) -> f64 {
    let (cx, cy) = region.centroid();
    let height = pair.upper.eval(cx, cy) - pair.lower.eval(cx, cy);
    alpha * height + (1.0 - alpha) * region_surface_proxy(pair, region)
}
