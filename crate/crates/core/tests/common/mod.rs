#![allow(dead_code)]

pub mod lpgen;

use prismcert::harness::gen_model;
use prismcert::model::{LstmNetwork, NetworkShape};

pub fn tiny_net(frames: usize, input: usize, hidden: usize, layers: usize, classes: usize, scale: f64, seed: u64) -> LstmNetwork {
    let shape = NetworkShape {
        num_frames: frames,
        input_dim: input,
        hidden_dim: hidden,
        num_layers: layers,
        num_classes: classes,
    };
    gen_model(&shape, scale, seed)
}

pub fn sigmoid_ref(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar LSTM recomputation, independent of the library's matrix code.
pub fn reference_forward(net: &LstmNetwork, seq: &[Vec<f64>]) -> Vec<f64> {
    let h_dim = net.hidden_dim();
    let mut hs = vec![vec![0.0; h_dim]; net.num_layers()];
    let mut cs = vec![vec![0.0; h_dim]; net.num_layers()];
    for frame in seq {
        let mut input = frame.clone();
        for (l, layer) in net.layers.iter().enumerate() {
            let mut z = hs[l].clone();
            z.extend_from_slice(&input);
            let gate = |w: &prismcert::model::Matrix, b: &[f64], k: usize| {
                let mut s = b[k];
                for (j, zj) in z.iter().enumerate() {
                    s += w.get(k, j) * zj;
                }
                s
            };
            let mut h_new = vec![0.0; h_dim];
            let mut c_new = vec![0.0; h_dim];
            for k in 0..h_dim {
                let f = sigmoid_ref(gate(&layer.w_f, &layer.b_f, k));
                let i = sigmoid_ref(gate(&layer.w_i, &layer.b_i, k));
                let g = gate(&layer.w_c, &layer.b_c, k).tanh();
                let o = sigmoid_ref(gate(&layer.w_o, &layer.b_o, k));
                c_new[k] = f * cs[l][k] + i * g;
                h_new[k] = o * c_new[k].tanh();
            }
            hs[l] = h_new.clone();
            cs[l] = c_new;
            input = h_new;
        }
    }
    let last = hs.last().unwrap();
    (0..net.num_classes())
        .map(|r| net.b_out[r] + (0..h_dim).map(|k| net.w_out.get(r, k) * last[k]).sum::<f64>())
        .collect()
}

/// Seeded convex polygon, counterclockwise, with vertices on an ellipse.
pub fn random_convex_polygon<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<(f64, f64)> {
    let (cx, cy) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let (ax, ay) = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));
    // one angle per sector keeps neighbours apart
    let sector = std::f64::consts::TAU / n as f64;
    let angles: Vec<f64> = (0..n).map(|i| (i as f64 + rng.gen_range(0.05..0.95)) * sector).collect();
    angles.iter().map(|t| (cx + ax * t.cos(), cy + ay * t.sin())).collect()
}

/// Seeded plane that stays positive over a polygon.
pub fn positive_plane<R: rand::Rng>(rng: &mut R, base: &[(f64, f64)]) -> prismcert::relax::Plane {
    let a = rng.gen_range(-1.0..1.0);
    let b = rng.gen_range(-1.0..1.0);
    let min = base.iter().map(|&(x, y)| a * x + b * y).fold(f64::INFINITY, f64::min);
    prismcert::relax::Plane::new(a, b, rng.gen_range(0.1..2.0) - min)
}
