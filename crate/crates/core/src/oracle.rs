//! Brute-force reference computations used to check the fast paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lp::{LpProblem, LpSolution, LpStatus, Sense};
use crate::model::LstmNetwork;
use crate::relax::{BivariateKind, Box2, Plane, PlanePair, Region2};
use crate::verifier::PerturbationSpec;
use crate::{Error, Result};

type P2 = (f64, f64);
type P3 = [f64; 3];

fn cross2(o: P2, a: P2, b: P2) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Shoelace area of a polygon given counterclockwise.
pub fn polygon_area(vertices: &[P2]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let (p, q) = (vertices[i], vertices[(i + 1) % n]);
            p.0 * q.1 - q.0 * p.1
        })
        .sum::<f64>()
        / 2.0
}

/// Solid between the `z = 0` plane and a planar top over a convex base.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyPrism {
    base: Vec<P2>,
    heights: Vec<f64>,
}

impl PolyPrism {
    /// Checks that the base is strictly convex and counterclockwise, that
    /// heights are positive, and that the top points are coplanar.
    pub fn new(base: Vec<P2>, heights: Vec<f64>) -> Result<Self> {
        let n = base.len();
        if n < 3 || heights.len() != n {
            return Err(Error::InvalidArgument("a prism needs n ≥ 3 vertices and n heights".into()));
        }
        for i in 0..n {
            if cross2(base[i], base[(i + 1) % n], base[(i + 2) % n]) <= 0.0 {
                return Err(Error::InvalidArgument("base is not strictly convex and counterclockwise".into()));
            }
        }
        if heights.iter().any(|&z| !(z > 0.0) || !z.is_finite()) {
            return Err(Error::InvalidArgument("heights must be positive".into()));
        }
        let prism = Self { base, heights };
        let plane = prism.top_plane();
        let scale = prism.heights.iter().fold(1.0f64, |m, z| m.max(z.abs()));
        for (p, z) in prism.base.iter().zip(&prism.heights) {
            if (plane.eval(p.0, p.1) - z).abs() > 1e-10 * scale {
                return Err(Error::InvalidArgument("top vertices are not coplanar".into()));
            }
        }
        Ok(prism)
    }

    /// Heights taken from `plane` at each base vertex.
    pub fn from_plane(base: Vec<P2>, plane: Plane) -> Result<Self> {
        let heights = base.iter().map(|p| plane.eval(p.0, p.1)).collect();
        Self::new(base, heights)
    }

    pub fn base(&self) -> &[P2] {
        &self.base
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn base_area(&self) -> f64 {
        polygon_area(&self.base)
    }

    /// Plane through the first three top vertices.
    pub fn top_plane(&self) -> Plane {
        let (p, q, r) = (self.base[0], self.base[1], self.base[2]);
        let (zp, zq, zr) = (self.heights[0], self.heights[1], self.heights[2]);
        let det = (q.0 - p.0) * (r.1 - p.1) - (r.0 - p.0) * (q.1 - p.1);
        let a = ((zq - zp) * (r.1 - p.1) - (zr - zp) * (q.1 - p.1)) / det;
        let b = ((q.0 - p.0) * (zr - zp) - (r.0 - p.0) * (zq - zp)) / det;
        Plane::new(a, b, zp - a * p.0 - b * p.1)
    }

    /// `(1/n)·Σzᵢ·Area`.
    pub fn mean_height_volume(&self) -> f64 {
        self.heights.iter().sum::<f64>() / self.heights.len() as f64 * self.base_area()
    }

    fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let n = self.base.len();
        (0..n).all(|i| cross2(self.base[i], self.base[(i + 1) % n], (x, y)) >= 0.0)
            && z >= 0.0
            && z <= self.top_plane().eval(x, y)
    }
}

fn tetra_volume(p: P3, q: P3, r: P3, s: P3) -> f64 {
    let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let v = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
    let w = [s[0] - p[0], s[1] - p[1], s[2] - p[2]];
    let det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
        + u[2] * (v[0] * w[1] - v[1] * w[0]);
    det.abs() / 6.0
}

/// Volume of a truncated triangular prism as three tetrahedra.
pub fn truncated_triangle_volume(base: [P2; 3], heights: [f64; 3]) -> f64 {
    let lo = |i: usize| [base[i].0, base[i].1, 0.0];
    let hi = |i: usize| [base[i].0, base[i].1, heights[i]];
    tetra_volume(lo(0), lo(1), lo(2), hi(0))
        + tetra_volume(lo(1), lo(2), hi(0), hi(1))
        + tetra_volume(lo(2), hi(0), hi(1), hi(2))
}

/// Exact volume by fanning the base about its vertex centroid and summing
/// tetrahedra.
pub fn poly_prism_volume_exact(prism: &PolyPrism) -> f64 {
    let n = prism.base.len();
    let g = (
        prism.base.iter().map(|p| p.0).sum::<f64>() / n as f64,
        prism.base.iter().map(|p| p.1).sum::<f64>() / n as f64,
    );
    let zg = prism.top_plane().eval(g.0, g.1);
    (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            truncated_triangle_volume([g, prism.base[i], prism.base[j]], [zg, prism.heights[i], prism.heights[j]])
        })
        .sum()
}

/// Monte Carlo volume estimate and its standard error.
pub fn monte_carlo_volume<R: Rng>(prism: &PolyPrism, points: usize, rng: &mut R) -> (f64, f64) {
    let (mut lx, mut ux, mut ly, mut uy) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &prism.base {
        lx = lx.min(p.0);
        ux = ux.max(p.0);
        ly = ly.min(p.1);
        uy = uy.max(p.1);
    }
    let top = prism.heights.iter().fold(0.0f64, |m, &z| m.max(z));
    let bounding = (ux - lx) * (uy - ly) * top;
    let hits = (0..points)
        .filter(|_| {
            prism.contains(
                rng.gen_range(lx..=ux),
                rng.gen_range(ly..=uy),
                rng.gen_range(0.0..=top),
            )
        })
        .count();
    let p = hits as f64 / points as f64;
    (p * bounding, bounding * (p * (1.0 - p) / points as f64).sqrt())
}

/// Residuals of the two corner identities of a plane over a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerIdentities {
    /// `(z₁ + z₄) − (z₂ + z₃)` for opposite corners.
    pub opposite_sum_gap: f64,
    /// `(z₁ + z₂ + z₃ + z₄) − 4·z₀` with `z₀` at the center.
    pub mean_gap: f64,
    pub scale: f64,
}

impl CornerIdentities {
    pub fn holds(&self, tol: f64) -> bool {
        self.opposite_sum_gap.abs() <= tol * self.scale && self.mean_gap.abs() <= tol * self.scale
    }
}

pub fn coplanar_corner_identities(plane: &Plane, bx: &Box2) -> CornerIdentities {
    let z: Vec<f64> = bx.corners().iter().map(|&(x, y)| plane.eval(x, y)).collect();
    let (cx, cy) = bx.center();
    let z0 = plane.eval(cx, cy);
    let scale = z.iter().chain([&z0]).fold(1.0f64, |m, v| m.max(v.abs()));
    CornerIdentities {
        opposite_sum_gap: (z[0] + z[3]) - (z[1] + z[2]),
        mean_gap: z.iter().sum::<f64>() - 4.0 * z0,
        scale,
    }
}

fn dist3(p: P3, q: P3) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Triangle area from side lengths.
pub fn heron(p: P3, q: P3, r: P3) -> f64 {
    let (a, b, c) = (dist3(q, r), dist3(p, r), dist3(p, q));
    let s = (a * a + b * b + c * c).powi(2) - 2.0 * (a.powi(4) + b.powi(4) + c.powi(4));
    s.max(0.0).sqrt() / 4.0
}

/// Quantities of a top face over `[0,a]×[0,b]` whose lowest corner sits
/// at zero height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerateTop {
    pub exact_area: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `Σ|zᵢ − z₀|` over the four corners.
    pub deviation_sum: f64,
    /// `2·z₂`, with `z₂` the larger middle corner.
    pub two_z2: f64,
}

impl DegenerateTop {
    pub fn area_within_bounds(&self, rel_tol: f64) -> bool {
        let slack = rel_tol * self.exact_area.max(1.0);
        self.exact_area >= self.lower_bound - slack && self.exact_area <= self.upper_bound + slack
    }
}

/// Corners `Q₁ = (0,0,z₂+z₃)`, `Q₂ = (a,0,z₂)`, `Q₃ = (a,b,0)`,
/// `Q₄ = (0,b,z₃)`; the two middle heights are sorted so `z₂ ≥ z₃`.
/// The area is the sum of triangles `Q₁Q₂Q₃` and `Q₁Q₃Q₄` by Heron.
pub fn surface_proxy_degenerate_check(a: f64, b: f64, z2: f64, z3: f64) -> Result<DegenerateTop> {
    if !(a > 0.0 && b > 0.0 && z2 >= 0.0 && z3 >= 0.0) {
        return Err(Error::InvalidArgument("need a, b > 0 and nonnegative heights".into()));
    }
    let (z2, z3) = if z2 >= z3 { (z2, z3) } else { (z3, z2) };
    let z1 = z2 + z3;
    let q1 = [0.0, 0.0, z1];
    let q2 = [a, 0.0, z2];
    let q3 = [a, b, 0.0];
    let q4 = [0.0, b, z3];
    let z0 = z1 / 2.0;
    let sqrt3 = 3f64.sqrt();
    Ok(DegenerateTop {
        exact_area: heron(q1, q2, q3) + heron(q1, q3, q4),
        lower_bound: a * b / sqrt3 + (a + b) * z2 / (2.0 * sqrt3),
        upper_bound: a * b + (a * a + b * b).sqrt() * z2,
        deviation_sum: [z1, z2, 0.0, z3].iter().map(|z| (z - z0).abs()).sum(),
        two_z2: 2.0 * z2,
    })
}

fn solve_square(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for k in col..n {
                        m[r][k] -= f * m[col][k];
                    }
                    rhs[r] -= f * rhs[col];
                }
            }
        }
    }
    Some((0..n).map(|i| rhs[i] / m[i][i]).collect())
}

fn normalize(row: &[f64], rhs: f64) -> (Vec<f64>, f64) {
    let s = row.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if s == 0.0 {
        (row.to_vec(), rhs)
    } else {
        (row.iter().map(|a| a / s).collect(), rhs / s)
    }
}

fn best_vertex(problem: &LpProblem, box_limit: f64) -> Option<(Vec<f64>, f64)> {
    let n = problem.num_vars();
    let mut planes: Vec<(Vec<f64>, f64)> = problem
        .constraints()
        .iter()
        .filter(|c| c.row.iter().any(|&a| a != 0.0))
        .map(|c| normalize(&c.row, c.rhs))
        .collect();
    let mut limited = problem.clone();
    for (i, &(lo, hi)) in problem.bounds().iter().enumerate() {
        let lo = if lo.is_finite() { lo } else { -box_limit };
        let hi = if hi.is_finite() { hi } else { box_limit };
        limited.set_bounds(i, lo, hi).ok()?;
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        planes.push((e.clone(), lo));
        if hi != lo {
            planes.push((e, hi));
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut subset: Vec<usize> = (0..n).collect();
    if n == 0 || planes.len() < n {
        return None;
    }
    loop {
        let m = subset.iter().map(|&k| planes[k].0.clone()).collect();
        let r = subset.iter().map(|&k| planes[k].1).collect();
        if let Some(x) = solve_square(m, r) {
            if limited.max_violation(&x) <= 1e-7 {
                let v = problem.evaluate(&x);
                if best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((x, v));
                }
            }
        }
        // next n-subset in lexicographic order
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < planes.len() - n + i {
                break;
            }
        }
        subset[i] += 1;
        for k in i + 1..n {
            subset[k] = subset[k - 1] + 1;
        }
    }
}

/// Minimizes by trying every basic point of `problem` (at most 8 variables).
///
/// Infinite bounds are replaced by a large box; if the optimum still moves
/// when the box is doubled, the problem is reported unbounded.
pub fn lp_vertex_enumeration(problem: &LpProblem) -> Result<LpSolution> {
    let n = problem.num_vars();
    if n > 8 {
        return Err(Error::InvalidArgument(format!("vertex enumeration supports at most 8 variables, got {n}")));
    }
    let infeasible = LpSolution {
        status: LpStatus::Infeasible,
        values: vec![f64::NAN; n],
        objective_value: f64::INFINITY,
    };
    if problem
        .constraints()
        .iter()
        .any(|c| c.row.iter().all(|&a| a == 0.0) && !zero_row_ok(c.sense, c.rhs))
    {
        return Ok(infeasible);
    }
    if n == 0 {
        return Ok(LpSolution {
            status: LpStatus::Optimal,
            values: vec![],
            objective_value: 0.0,
        });
    }
    const LIMIT: f64 = 1e6;
    let Some((x, v)) = best_vertex(problem, LIMIT) else {
        return Ok(infeasible);
    };
    let all_finite = problem.bounds().iter().all(|b| b.0.is_finite() && b.1.is_finite());
    if !all_finite {
        if let Some((_, v2)) = best_vertex(problem, 2.0 * LIMIT) {
            if v - v2 > 1e-6 * (1.0 + v.abs()) {
                return Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    values: vec![f64::NAN; n],
                    objective_value: f64::NEG_INFINITY,
                });
            }
        }
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values: x,
        objective_value: v,
    })
}

fn zero_row_ok(sense: Sense, rhs: f64) -> bool {
    match sense {
        Sense::Le => rhs >= -1e-9,
        Sense::Ge => rhs <= 1e-9,
        Sense::Eq => rhs.abs() <= 1e-9,
    }
}

/// Counts grid points of `region` where `lower ≤ f ≤ upper` fails.
pub fn dense_grid_soundness(pair: &PlanePair, region: &Region2, kind: BivariateKind, grid_n: usize) -> usize {
    let n = grid_n.max(2);
    let bx = region.bounding_box();
    let mut violations = 0;
    for i in 0..n {
        let x = if i == n - 1 { bx.ux } else { bx.lx + bx.width_x() * i as f64 / (n - 1) as f64 };
        for j in 0..n {
            let y = if j == n - 1 { bx.uy } else { bx.ly + bx.width_y() * j as f64 / (n - 1) as f64 };
            if let Region2::Tri(t) = region {
                if !t.contains(x, y) {
                    continue;
                }
            }
            let f = kind.eval(x, y);
            if pair.lower.eval(x, y) > f || pair.upper.eval(x, y) < f {
                violations += 1;
            }
        }
    }
    violations
}

/// One point of the L∞ ball: each coordinate sits at a random face with
/// probability 1/2 and is uniform otherwise, then is clipped.
pub fn perturb<R: Rng>(sample: &[Vec<f64>], spec: &PerturbationSpec, rng: &mut R) -> Vec<Vec<f64>> {
    let eps = spec.epsilon;
    sample
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|&v| {
                    let d = if eps == 0.0 {
                        0.0
                    } else if rng.gen_bool(0.5) {
                        if rng.gen_bool(0.5) { eps } else { -eps }
                    } else {
                        rng.gen_range(-eps..=eps)
                    };
                    let mut u = v + d;
                    if let Some((lo, hi)) = spec.clip {
                        u = u.clamp(lo.max(v - eps), hi.min(v + eps));
                    }
                    u
                })
                .collect()
        })
        .collect()
}

/// First perturbed input whose prediction differs from `label`, if any
/// within `samples` tries.
pub fn grid_attack(
    net: &LstmNetwork,
    sample: &[Vec<f64>],
    label: usize,
    spec: &PerturbationSpec,
    samples: usize,
    seed: u64,
) -> Result<Option<Vec<Vec<f64>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let x = perturb(sample, spec, &mut rng);
        if net.predict(&x)? != label {
            return Ok(Some(x));
        }
    }
    Ok(None)
}

/// Smallest sampled `logit_t − logit_p` over the ball, the clean input
/// included.
pub fn empirical_min_margin(
    net: &LstmNetwork,
    sample: &[Vec<f64>],
    t: usize,
    p: usize,
    spec: &PerturbationSpec,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = net.forward(sample)?;
    let mut best = logits[t] - logits[p];
    for _ in 0..samples {
        let logits = net.forward(&perturb(sample, spec, &mut rng))?;
        best = best.min(logits[t] - logits[p]);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_volume() {
        let p = PolyPrism::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], vec![1.0; 4]).unwrap();
        assert!((poly_prism_volume_exact(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn right_triangle_closed_form() {
        let v = truncated_triangle_volume([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [0.3, 0.0, 0.9]);
        assert!((v - (0.3 + 0.9) / 3.0 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn concave_base_rejected() {
        let base = vec![(0.0, 0.0), (2.0, 0.0), (1.0, 0.2), (1.0, 2.0)];
        assert!(PolyPrism::new(base, vec![1.0; 4]).is_err());
    }

    #[test]
    fn flat_top_area() {
        let d = surface_proxy_degenerate_check(2.0, 3.0, 0.0, 0.0).unwrap();
        assert!((d.exact_area - 6.0).abs() < 1e-12);
        assert_eq!(d.deviation_sum, 0.0);
    }

    #[test]
    fn vertex_enumeration_simple() {
        let mut lp = LpProblem::new(1);
        lp.set_objective(vec![1.0]).unwrap();
        lp.set_bounds(0, 3.0, 5.0).unwrap();
        let s = lp_vertex_enumeration(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 3.0).abs() < 1e-12);

        let mut lp = LpProblem::new(1);
        lp.set_objective(vec![1.0]).unwrap();
        assert_eq!(lp_vertex_enumeration(&lp).unwrap().status, LpStatus::Unbounded);

        let mut lp = LpProblem::new(1);
        lp.add_constraint(vec![1.0], Sense::Ge, 2.0).unwrap();
        lp.add_constraint(vec![1.0], Sense::Le, 1.0).unwrap();
        assert_eq!(lp_vertex_enumeration(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn shifted_plane_is_caught() {
        let bx = Box2::new(-2.0, 2.0, -2.0, 2.0).unwrap();
        let pair = PlanePair {
            lower: Plane::constant(-1.0),
            upper: Plane::constant(1.0),
        };
        let region = Region2::Rect(bx);
        assert_eq!(dense_grid_soundness(&pair, &region, BivariateKind::SigTanh, 33), 0);
        let shifted = PlanePair {
            lower: pair.lower,
            upper: Plane::constant(0.5),
        };
        assert!(dense_grid_soundness(&shifted, &region, BivariateKind::SigTanh, 33) > 0);
    }
}
