//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::lpgen::random_lp;
use common::{positive_plane, random_convex_polygon, tiny_net};
use prismcert::harness::gen_samples;
use prismcert::lp::solve;
use prismcert::model::LstmNetwork;
use prismcert::oracle::{
    coplanar_corner_identities, dense_grid_soundness, grid_attack, lp_vertex_enumeration, poly_prism_volume_exact,
    surface_proxy_degenerate_check, truncated_triangle_volume, PolyPrism,
};
use prismcert::refine::DivisionStrategy;
use prismcert::relax::{relax, BivariateKind, Box2, Plane, Region2, RelaxConfig, RelaxMethod};
use prismcert::verifier::{verify_sample, PerturbationSpec, VerificationQuery, VerificationResult, Verdict, VerifierConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS_GRID: [f64; 4] = [0.005, 0.01, 0.02, 0.04];

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

impl Outcome {
    fn print(&self) {
        let ok = self.pass && self.elapsed <= self.budget;
        let over = if self.elapsed > self.budget { " over budget" } else { "" };
        println!(
            "[{}] {:>2} {}: {} ({:.2} s of {} s{over})",
            if ok { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        );
    }

    fn ok(&self) -> bool {
        self.pass && self.elapsed <= self.budget
    }
}

fn mean_height_identity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = [0usize; 9];
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let n = 3 + k % 6;
        let base = random_convex_polygon(&mut rng, n);
        let plane = positive_plane(&mut rng, &base);
        let prism = PolyPrism::from_plane(base, plane).expect("valid prism");
        let exact = poly_prism_volume_exact(&prism);
        let rel = (prism.mean_height_volume() - exact).abs() / exact;
        worst = worst.max(rel);
        if rel > 1e-9 {
            bad[n] += 1;
        }
    }
    let total: usize = bad.iter().sum();
    let per_n: Vec<String> = (3..9).map(|n| format!("n={n}:{}", bad[n])).collect();
    (
        total == 0,
        format!("{total}/1000 outside 1e-9 [{}], worst rel {worst:.2e}", per_n.join(" ")),
    )
}

fn right_triangle_closed_form() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..1000 {
        let (a, b) = (rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0));
        let (c, d) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0));
        let v = truncated_triangle_volume([(0.0, 0.0), (a, 0.0), (0.0, b)], [c, 0.0, d]);
        let closed = (c + d) * (a * b / 2.0) / 3.0;
        if (v - closed).abs() > 1e-12 * closed.max(1.0) {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad}/1000 outside 1e-12"))
}

fn corner_identities() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for _ in 0..1000 {
        let lx = rng.gen_range(-5.0..5.0);
        let ly = rng.gen_range(-5.0..5.0);
        let bx = Box2::new(lx, lx + rng.gen_range(0.0..5.0), ly, ly + rng.gen_range(0.0..5.0)).unwrap();
        let plane = Plane::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        if !coplanar_corner_identities(&plane, &bx).holds(1e-12) {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad}/1000 violations"))
}

fn degenerate_top_bounds() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut below, mut above, mut sum_bad) = (0, 0, 0);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..500 {
        let (a, b) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
        let (z2, z3) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
        let t = surface_proxy_degenerate_check(a, b, z2, z3).unwrap();
        let slack = 1e-12 * t.exact_area.max(1.0);
        if t.exact_area < t.lower_bound - slack {
            below += 1;
            worst_ratio = worst_ratio.max(t.lower_bound / t.exact_area);
        }
        if t.exact_area > t.upper_bound + slack {
            above += 1;
        }
        if (t.deviation_sum - t.two_z2).abs() > 1e-12 * t.two_z2.max(1.0) {
            sum_bad += 1;
        }
    }
    (
        below + above + sum_bad == 0,
        format!(
            "{below}/500 below lower bound (worst bound/area {worst_ratio:.3}), {above}/500 above upper, {sum_bad}/500 deviation-sum mismatches"
        ),
    )
}

fn relaxation_soundness() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let boxes: Vec<Box2> = (0..100)
        .map(|_| {
            let (cx, cy) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let (hx, hy) = (rng.gen_range(1e-3..4.0), rng.gen_range(1e-3..4.0));
            Box2::new(cx - hx, cx + hx, cy - hy, cy + hy).unwrap()
        })
        .collect();
    let mut parts = Vec::new();
    let mut total = 0;
    for method in [RelaxMethod::Distance, RelaxMethod::Volume, RelaxMethod::Hybrid] {
        let cfg = RelaxConfig::with_method(method);
        let mut v = 0;
        for bx in &boxes {
            for kind in [BivariateKind::SigTanh, BivariateKind::SigMul] {
                let region: Region2 = (*bx).into();
                let pair = relax(&region, kind, &cfg).expect("relaxation solves");
                v += dense_grid_soundness(&pair, &region, kind, 257);
            }
        }
        parts.push(format!("{method}:{v}"));
        total += v;
    }
    (total == 0, format!("violations on 257x257 grids [{}]", parts.join(" ")))
}

/// Returns the verdict and the time spent in the simplex solver alone.
fn lp_correctness() -> (bool, String, Duration) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut status_bad, mut value_bad, mut optimal) = (0, 0, 0);
    let mut solver_time = Duration::ZERO;
    for _ in 0..500 {
        let lp = random_lp(&mut rng, 6, 12);
        let t0 = Instant::now();
        let s = solve(&lp);
        solver_time += t0.elapsed();
        let o = lp_vertex_enumeration(&lp).unwrap();
        if s.status != o.status {
            status_bad += 1;
        } else if s.is_optimal() {
            optimal += 1;
            if (s.objective_value - o.objective_value).abs() > 1e-7 * (1.0 + o.objective_value.abs()) {
                value_bad += 1;
            }
        }
    }
    (
        status_bad + value_bad == 0,
        format!("{status_bad} status and {value_bad} objective mismatches over 500 ({optimal} optimal), simplex time only"),
        solver_time,
    )
}

fn end_to_end_soundness() -> (bool, String) {
    let mut robust = 0;
    let mut falsified = 0;
    let mut queries = 0;
    for s in 0..20u64 {
        let frames = 1 + (s as usize % 3);
        let hidden = 2 + (s as usize % 3);
        let layers = 1 + (s as usize / 3) % 2;
        let net = tiny_net(frames, 3, hidden, layers, 3, 1.0, 700 + s);
        let config = if s % 2 == 0 {
            VerifierConfig::default()
        } else {
            VerifierConfig {
                relax: RelaxConfig::with_method(RelaxMethod::Distance),
                strategy: DivisionStrategy::Rec4,
                ..VerifierConfig::default()
            }
        };
        for (i, (seq, label)) in gen_samples(&net, 10, 800 + s).into_iter().enumerate() {
            for eps in [0.01, 0.05] {
                queries += 1;
                let spec = PerturbationSpec::new(eps);
                let q = VerificationQuery {
                    sample: seq.clone(),
                    true_label: label,
                    spec,
                    config,
                };
                let r = verify_sample(&net, &q).expect("query is valid");
                if r.verdict == Verdict::Robust {
                    robust += 1;
                    let seed = s * 1000 + i as u64;
                    if grid_attack(&net, &seq, label, &spec, 100_000, seed).unwrap().is_some() {
                        falsified += 1;
                    }
                }
            }
        }
    }
    (
        falsified == 0,
        format!("{falsified} falsified of {robust} robust verdicts ({queries} queries, 100k attacks each)"),
    )
}

/// Five seeded networks, ten lowest-gap self-labelled samples from each.
fn query_suite() -> Vec<(LstmNetwork, Vec<(Vec<Vec<f64>>, usize)>)> {
    (0..5u64)
        .map(|s| {
            let net = tiny_net(3, 4, 4, 1, 3, 1.0, 1000 + s);
            let mut samples: Vec<(f64, (Vec<Vec<f64>>, usize))> = gen_samples(&net, 300, 2000 + s)
                .into_iter()
                .map(|(seq, label)| {
                    let logits = net.forward(&seq).unwrap();
                    let runner_up = logits
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != label)
                        .map(|(_, v)| *v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    (logits[label] - runner_up, (seq, label))
                })
                .collect();
            samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            let picked = samples.into_iter().take(10).map(|(_, s)| s).collect();
            (net, picked)
        })
        .collect()
}

fn run_suite(
    suite: &[(LstmNetwork, Vec<(Vec<Vec<f64>>, usize)>)],
    config: VerifierConfig,
    eps: f64,
) -> Vec<VerificationResult> {
    let mut out = Vec::new();
    for (net, samples) in suite {
        for (seq, label) in samples {
            let q = VerificationQuery {
                sample: seq.clone(),
                true_label: *label,
                spec: PerturbationSpec::new(eps),
                config,
            };
            out.push(verify_sample(net, &q).expect("query is valid"));
        }
    }
    out
}

fn robust(results: &[VerificationResult]) -> usize {
    results.iter().filter(|r| r.verdict == Verdict::Robust).count()
}

fn label_margins(results: &[VerificationResult]) -> Vec<f64> {
    results.iter().flat_map(|r| r.margins.iter().flatten().copied()).collect()
}

fn config(method: RelaxMethod, strategy: DivisionStrategy) -> VerifierConfig {
    VerifierConfig {
        relax: RelaxConfig::with_method(method),
        strategy,
        ..VerifierConfig::default()
    }
}

fn counts_line(counts: &[usize]) -> String {
    EPS_GRID
        .iter()
        .zip(counts)
        .map(|(e, c)| format!("{e}:{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let mut outcomes = Vec::new();
    let mut record = |id, name, budget_s: u64, f: &mut dyn FnMut() -> (bool, String, Option<Duration>)| {
        let t0 = Instant::now();
        let (pass, detail, measured) = f();
        let o = Outcome {
            id,
            name,
            pass,
            detail,
            elapsed: measured.unwrap_or_else(|| t0.elapsed()),
            budget: Duration::from_secs(budget_s),
        };
        o.print();
        outcomes.push(o);
    };
    let plain = |f: fn() -> (bool, String)| {
        move || {
            let (p, d) = f();
            (p, d, None)
        }
    };

    record(1, "mean-height prism volume identity", 5, &mut plain(mean_height_identity));
    record(2, "right-triangle prism closed form", 1, &mut plain(right_triangle_closed_form));
    record(3, "coplanar corner identities", 1, &mut plain(corner_identities));
    record(4, "degenerate top area bounds", 2, &mut plain(degenerate_top_bounds));
    record(5, "relaxation soundness", 60, &mut plain(relaxation_soundness));
    record(6, "simplex vs vertex enumeration", 10, &mut || {
        let (p, d, t) = lp_correctness();
        (p, d, Some(t))
    });
    record(7, "end-to-end soundness under attack", 300, &mut plain(end_to_end_soundness));

    let suite = query_suite();
    let mut monotone_notes = Vec::new();
    let mut monotone_ok = true;
    let mut check_monotone = |label: &str, counts: &[usize]| {
        let ok = counts.windows(2).all(|w| w[0] >= w[1]);
        monotone_ok &= ok;
        monotone_notes.push(format!("{label}[{}]", counts_line(counts)));
    };

    // hybrid against distance, single plane
    let t8 = Instant::now();
    let mut hyb_counts = Vec::new();
    let mut dist_counts = Vec::new();
    let (mut better, mut labels) = (0, 0);
    for &eps in &EPS_GRID {
        let h = run_suite(&suite, config(RelaxMethod::Hybrid, DivisionStrategy::None), eps);
        let d = run_suite(&suite, config(RelaxMethod::Distance, DivisionStrategy::None), eps);
        hyb_counts.push(robust(&h));
        dist_counts.push(robust(&d));
        for (mh, md) in label_margins(&h).iter().zip(label_margins(&d)) {
            labels += 1;
            if *mh > md {
                better += 1;
            }
        }
    }
    let t8 = t8.elapsed();
    check_monotone("hybrid", &hyb_counts);
    check_monotone("distance", &dist_counts);
    let counts_ok = hyb_counts.iter().zip(&dist_counts).all(|(h, d)| h >= d);
    let frac = better as f64 / labels as f64;
    record(8, "hybrid at least as tight as distance", 600, &mut || {
        (
            counts_ok && frac >= 0.6,
            format!(
                "verified hybrid [{}] vs distance [{}]; hybrid margin larger on {better}/{labels} = {:.1}% of label margins (need 60%)",
                counts_line(&hyb_counts),
                counts_line(&dist_counts),
                100.0 * frac
            ),
            Some(t8),
        )
    });

    // refinement over the same suite at every ε
    let t9 = Instant::now();
    let mut rec4_counts = Vec::new();
    let mut rec4_top = Vec::new();
    for &eps in &EPS_GRID {
        let r = run_suite(&suite, config(RelaxMethod::Hybrid, DivisionStrategy::Rec4), eps);
        rec4_counts.push(robust(&r));
        rec4_top = r;
    }
    let t9 = t9.elapsed();
    check_monotone("hybrid+4-rec", &rec4_counts);
    let mut never_lower = true;
    let mut strict = 0;
    for r in &rec4_top {
        for (m, s) in r.margins.iter().zip(&r.single_plane_margins) {
            if let (Some(m), Some(s)) = (m, s) {
                never_lower &= m >= s;
            }
        }
        let single = r.single_plane_margins.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        if r.min_margin().is_some_and(|m| m > single) {
            strict += 1;
        }
    }
    let n = rec4_top.len();
    record(9, "multi-plane dominance with 4-rec", 900, &mut || {
        (
            never_lower && 10 * strict >= 3 * n,
            format!(
                "at eps {}: never below single plane = {never_lower}; strictly better on {strict}/{n} queries (need 30%)",
                EPS_GRID[3]
            ),
            Some(t9),
        )
    });

    let t10 = Instant::now();
    let mut rec16_counts = Vec::new();
    for &eps in &EPS_GRID {
        rec16_counts.push(robust(&run_suite(&suite, config(RelaxMethod::Hybrid, DivisionStrategy::Rec16), eps)));
    }
    let t10 = t10.elapsed();
    check_monotone("hybrid+16-rec", &rec16_counts);
    let (c0, c4, c16) = (hyb_counts[3], rec4_counts[3], rec16_counts[3]);
    record(10, "refinement ordering at largest eps", 1200, &mut || {
        (
            c16 >= c4 && c4 >= c0,
            format!("verified none {c0}, 4-rec {c4}, 16-rec {c16} at eps {}", EPS_GRID[3]),
            Some(t10),
        )
    });

    record(11, "verified count nonincreasing in eps", 0, &mut || {
        (monotone_ok, monotone_notes.join(" "), Some(Duration::ZERO))
    });

    let failed = outcomes.iter().filter(|o| !o.ok()).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
