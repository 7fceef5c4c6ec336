mod common;

use common::{positive_plane, random_convex_polygon};
use prismcert::lp::{LpProblem, LpStatus, Sense};
use prismcert::model::{LstmLayer, LstmNetwork, Matrix};
use prismcert::oracle::{
    coplanar_corner_identities, dense_grid_soundness, grid_attack, heron, lp_vertex_enumeration, monte_carlo_volume,
    poly_prism_volume_exact, surface_proxy_degenerate_check, truncated_triangle_volume, PolyPrism,
};
use prismcert::relax::{BivariateKind, Box2, Plane, PlanePair, Region2, RelaxConfig, RelaxMethod};
use prismcert::verifier::PerturbationSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn monte_carlo_agrees_with_exact_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..20 {
        let n = rng.gen_range(3..9);
        let base = random_convex_polygon(&mut rng, n);
        let plane = positive_plane(&mut rng, &base);
        let prism = PolyPrism::from_plane(base, plane).unwrap();
        let exact = poly_prism_volume_exact(&prism);
        let (est, se) = monte_carlo_volume(&prism, 200_000, &mut rng);
        assert!((est - exact).abs() <= 3.0 * se + 1e-12, "{est} ± {se} vs {exact}");
    }
}

#[test]
fn mean_height_formula_holds_where_centroids_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let tri = random_convex_polygon(&mut rng, 3);
        let plane = positive_plane(&mut rng, &tri);
        let p = PolyPrism::from_plane(tri, plane).unwrap();
        let exact = poly_prism_volume_exact(&p);
        assert!((p.mean_height_volume() - exact).abs() <= 1e-9 * exact);

        let (x, y) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (u, v) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let s = rng.gen_range(-0.5..0.5);
        let para = vec![(x, y), (x + u, y), (x + u + s, y + v), (x + s, y + v)];
        let plane = positive_plane(&mut rng, &para);
        let p = PolyPrism::from_plane(para, plane).unwrap();
        let exact = poly_prism_volume_exact(&p);
        assert!((p.mean_height_volume() - exact).abs() <= 1e-9 * exact);
    }
}

#[test]
fn prism_validation() {
    let square = vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let cube = PolyPrism::new(square.clone(), vec![1.0; 4]).unwrap();
    assert!((poly_prism_volume_exact(&cube) - 1.0).abs() < 1e-15);
    let mut cw = square.clone();
    cw.reverse();
    assert!(PolyPrism::new(cw, vec![1.0; 4]).is_err());
    assert!(PolyPrism::new(square.clone(), vec![1.0, 1.0, 2.0, 1.0]).is_err());
    assert!(PolyPrism::new(square, vec![1.0, -1.0, 1.0, 1.0]).is_err());
}

#[test]
fn right_triangle_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let (a, b) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
        let (c, d) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
        let v = truncated_triangle_volume([(0.0, 0.0), (a, 0.0), (0.0, b)], [c, 0.0, d]);
        let closed = (c + d) * (a * b / 2.0) / 3.0;
        assert!((v - closed).abs() <= 1e-12 * closed.max(1.0));
    }
}

#[test]
fn corner_identities() {
    let unit = Box2::new(0.0, 1.0, 0.0, 1.0).unwrap();
    let id = coplanar_corner_identities(&Plane::new(1.0, 1.0, 0.0), &unit);
    assert_eq!(id.opposite_sum_gap, 0.0);
    assert_eq!(id.mean_gap, 0.0);
    assert!(coplanar_corner_identities(&Plane::constant(3.0), &unit).holds(0.0));
}

#[test]
fn heron_and_degenerate_tops() {
    let area = heron([0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 4.0, 0.0]);
    assert!((area - 6.0).abs() < 1e-12);
    let flat = surface_proxy_degenerate_check(2.0, 3.0, 0.0, 0.0).unwrap();
    assert!((flat.exact_area - 6.0).abs() < 1e-12);
    assert_eq!(flat.deviation_sum, 0.0);
    let even = surface_proxy_degenerate_check(1.0, 1.0, 0.4, 0.4).unwrap();
    assert!(even.area_within_bounds(1e-12));
    assert!((even.deviation_sum - even.two_z2).abs() < 1e-12);
    assert!(surface_proxy_degenerate_check(0.0, 1.0, 0.1, 0.1).is_err());
}

#[test]
fn vertex_enumeration_basics() {
    let mut lp = LpProblem::new(1);
    lp.set_objective(vec![1.0]).unwrap();
    lp.set_bounds(0, 3.0, 5.0).unwrap();
    let s = lp_vertex_enumeration(&lp).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.objective_value - 3.0).abs() < 1e-12);

    lp.add_constraint(vec![1.0], Sense::Ge, 6.0).unwrap();
    assert_eq!(lp_vertex_enumeration(&lp).unwrap().status, LpStatus::Infeasible);
}

#[test]
fn dense_grid_counts() {
    let region: Region2 = Box2::new(-2.0, 2.0, -2.0, 2.0).unwrap().into();
    let kind = BivariateKind::SigTanh;
    let hull = PlanePair {
        lower: Plane::constant(-1.0),
        upper: Plane::constant(1.0),
    };
    assert_eq!(dense_grid_soundness(&hull, &region, kind, 257), 0);
    let cfg = RelaxConfig::with_method(RelaxMethod::Hybrid);
    let mut pair = prismcert::relax::relax(&region, kind, &cfg).unwrap();
    assert_eq!(dense_grid_soundness(&pair, &region, kind, 257), 0);
    pair.upper.c -= 0.1;
    assert!(dense_grid_soundness(&pair, &region, kind, 257) >= 1);
}

/// One hidden unit with `h ≈ tanh(tanh(5x))`; class 1 wins iff `h > 0`.
fn sign_net() -> LstmNetwork {
    let mut layer = LstmLayer::zeros(1, 1);
    layer.w_c.set(0, 1, 5.0);
    layer.b_i[0] = 10.0;
    layer.b_o[0] = 10.0;
    LstmNetwork::new(
        vec![layer],
        Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap(),
        vec![0.0, 0.0],
        1,
        1,
    )
    .unwrap()
}

#[test]
fn attack_finds_corner_flip() {
    let net = sign_net();
    let x = vec![vec![-0.05]];
    assert_eq!(net.predict(&x).unwrap(), 0);
    let found = grid_attack(&net, &x, 0, &PerturbationSpec::new(0.1), 1000, 0).unwrap();
    let adv = found.expect("corner at x = 0.05 flips the class");
    assert!(adv[0][0] > 0.0 && adv[0][0] <= 0.05 + 1e-12);
    assert!(grid_attack(&net, &x, 0, &PerturbationSpec::new(0.01), 1000, 0).unwrap().is_none());
    assert!(grid_attack(&net, &x, 0, &PerturbationSpec::new(0.0), 100, 0).unwrap().is_none());
}
