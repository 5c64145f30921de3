//! Independent reference computations shared by the integration tests and
//! the acceptance target.
#![allow(dead_code)]

use densemem::classifier::{
    forward_am, forward_am_batch, forward_dual, forward_dual_batch, grad_am, grad_dual, loss, targets,
    ClassifierModel, DualConvention, MinibatchTensors,
};
use densemem::rng::stream_rng;
use densemem::{EnergyKind, EnergyModel};
use ndarray::Array2;
use rand::Rng;

pub const N: usize = 12;
pub const NC: usize = 3;
pub const K: usize = 5;
pub const M: usize = 4;
pub const STEP: f64 = 1e-4;

pub struct Instance {
    pub weights: Array2<f64>,
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
}

pub fn instance(seed: u64, weight_scale: f64) -> Instance {
    let mut rng = stream_rng(seed, &[0xF1D1]);
    let weights = Array2::from_shape_simple_fn((K, N + NC), || rng.random_range(-weight_scale..weight_scale));
    let images = Array2::from_shape_simple_fn((M, N), || rng.random_range(-1.0..1.0));
    let labels = (0..M).map(|_| rng.random_range(0..NC as u8)).collect();
    Instance { weights, images, labels }
}

pub fn model(w: &Array2<f64>, energy: EnergyModel, beta: f64) -> ClassifierModel {
    ClassifierModel::new(w.clone(), N, NC, energy, beta).unwrap()
}

/// Picks β so that the largest |β·score| is 0.5, keeping tanh away from
/// saturation for any power.
pub fn unsaturated_beta(max_score: f64) -> f64 {
    if max_score > 0.0 {
        0.5 / max_score
    } else {
        1.0
    }
}

/// `‖fd - g‖∞ / ‖g‖∞` with `fd` the central difference of `f` at `w`.
pub fn fd_relative_error(w: &Array2<f64>, g: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let scale = g.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    for idx in ndarray::indices_of(w) {
        let mut wp = w.clone();
        wp[idx] += STEP;
        let mut wm = w.clone();
        wm[idx] -= STEP;
        let fd = (f(&wp) - f(&wm)) / (2.0 * STEP);
        worst = worst.max((fd - g[idx]).abs());
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

pub fn check_dual(seed: u64, energy: EnergyModel, m: u32, conv: DualConvention) -> f64 {
    let inst = instance(seed, 0.9);
    let probe = forward_dual_batch(&model(&inst.weights, energy, 1.0), inst.images.view(), conv).unwrap();
    let beta = unsaturated_beta(probe.scores.iter().fold(0.0f64, |a, &x| a.max(x.abs())));
    let t = targets(&inst.labels, NC);
    let (g, _) = grad_dual(&model(&inst.weights, energy, beta), inst.images.view(), t.view(), m, conv).unwrap();
    fd_relative_error(&inst.weights, &g, |w| {
        let out = forward_dual_batch(&model(w, energy, beta), inst.images.view(), conv).unwrap();
        loss(out.outputs.view(), t.view(), m)
    })
}

pub fn check_am(seed: u64, energy: EnergyModel, m: u32) -> f64 {
    let inst = instance(seed, 0.9);
    let batch = MinibatchTensors::new(inst.images.view(), &inst.labels, NC, -1.0).unwrap();
    let at_unit = forward_am_batch(&model(&inst.weights, energy, 1e-300), &batch).unwrap();
    // tanh(1e-300 s) = 1e-300 s exactly in floating point, so this recovers the raw scores.
    let max_score = at_unit.iter().fold(0.0f64, |a, &x| a.max((x / 1e-300).abs()));
    let beta = unsaturated_beta(max_score);
    let (g, _) = grad_am(&model(&inst.weights, energy, beta), &batch, m).unwrap();
    fd_relative_error(&inst.weights, &g, |w| {
        let out = forward_am_batch(&model(w, energy, beta), &batch).unwrap();
        loss(out.view(), batch.targets.view(), m)
    })
}

/// Distance of the nearest hidden pre-activation or probe overlap from the
/// rectifier's kink at 0.
pub fn kink_distance(seed: u64) -> f64 {
    let inst = instance(seed, 0.9);
    let batch = MinibatchTensors::new(inst.images.view(), &inst.labels, NC, -1.0).unwrap();
    let hidden = inst.images.dot(&inst.weights.slice(ndarray::s![.., ..N]).t());
    let xu = inst.weights.dot(&batch.u);
    let xv = inst.weights.dot(&batch.v);
    hidden.iter().chain(xu.iter()).chain(xv.iter()).fold(f64::INFINITY, |a, &x| a.min(x.abs()))
}

pub fn duality_gap(eps: f64, energy: EnergyModel, seed: u64) -> f64 {
    let inst = instance(seed, 0.9);
    let dual = model(&inst.weights, energy, 1.0);
    let am = model(&inst.weights, energy, 1.0 / (2.0 * eps));
    let mut worst: f64 = 0.0;
    for row in inst.images.rows() {
        let a = forward_am(&am, row, -eps).unwrap();
        let d = forward_dual(&dual, row, DualConvention::Strict).unwrap();
        for (x, y) in a.iter().zip(d.iter()) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// `-Σ_μ F(ξ^μ · σ)` written out with plain loops.
pub fn naive_energy(patterns: &[Vec<i8>], spins: &[i8], model: &EnergyModel) -> f64 {
    let mut e = 0.0;
    for p in patterns {
        let overlap: i64 = p.iter().zip(spins).map(|(&a, &b)| a as i64 * b as i64).sum();
        e -= model.energy(overlap as f64);
    }
    e
}

pub struct Case {
    pub patterns: Vec<Vec<i8>>,
    pub spins: Vec<i8>,
    pub model: EnergyModel,
}

pub fn case(index: u64) -> Case {
    let mut rng = stream_rng(2024, &[index]);
    let n = rng.random_range(1..=12);
    let k = rng.random_range(1..=8);
    let spin = |rng: &mut rand_chacha::ChaCha8Rng| if rng.random::<bool>() { 1i8 } else { -1 };
    let patterns = (0..k).map(|_| (0..n).map(|_| spin(&mut rng)).collect()).collect();
    let spins = (0..n).map(|_| spin(&mut rng)).collect();
    let kind = if rng.random::<bool>() { EnergyKind::Polynomial } else { EnergyKind::RectifiedPolynomial };
    let model = EnergyModel::new(rng.random_range(1..=6), kind).unwrap();
    Case { patterns, spins, model }
}

