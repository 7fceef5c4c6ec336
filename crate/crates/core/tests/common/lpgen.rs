use prismcert::lp::{LpProblem, Sense};
use rand::Rng;

/// Random small LP: box-bounded variables, mixed-sense rows, some of them
/// infeasible by construction.
pub fn random_lp<R: Rng>(rng: &mut R, max_vars: usize, max_rows: usize) -> LpProblem {
    let n = rng.gen_range(1..=max_vars);
    let m = rng.gen_range(0..=max_rows);
    let mut lp = LpProblem::new(n);
    lp.set_objective((0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
    for i in 0..n {
        let lo = rng.gen_range(-3.0..1.0);
        let hi = lo + rng.gen_range(0.5..4.0);
        lp.set_bounds(i, lo, hi).unwrap();
    }
    for _ in 0..m {
        let row: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(-3.0..3.0) })
            .collect();
        let sense = match rng.gen_range(0..10) {
            0 => Sense::Eq,
            1..=5 => Sense::Le,
            _ => Sense::Ge,
        };
        lp.add_constraint(row, sense, rng.gen_range(-4.0..4.0)).unwrap();
    }
    lp
}
