//! One-step dense-memory classifier and its feedforward dual.
//!
//! Visible neurons are clamped to an image `v ∈ [-1,1]^N`; each of the `N_c`
//! classification neurons is switched on and off once and the energy
//! difference, passed through `tanh(β ·)`, is the class output. Expanding the
//! difference for a tiny initial value gives a one-hidden-layer network with
//! hidden pre-activations `h_μ = ξ^μ · v`, activation `f = F'` and output
//! weights `ξ^μ_α`.
//!
//! Weights are stored as one `K × (N + N_c)` matrix: columns `0..N` are the
//! visible (feature) part, columns `N..N+N_c` the recognition part.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    evaluate, learning_rate, predict, temperature, train, train_with_observer, write_metrics_csv,
    DivergenceSnapshot, EpochMetrics, Framing, TrainConfig, TrainOutcome, METRICS_HEADER,
};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, tag};
use crate::{EnergyModel, Error, Result};

/// Which hidden activation the dual network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DualConvention {
    /// Activation `power_term(h, n-1)` (the rectified polynomial one degree
    /// below the energy), the form used for training.
    Training,
    /// Activation `f = F' = n · power_term(h, n-1)`, the exact small-`ε`
    /// limit of the associative-memory update.
    Strict,
}

impl DualConvention {
    fn scale(self, energy: &EnergyModel) -> f64 {
        match self {
            DualConvention::Training => 1.0,
            DualConvention::Strict => energy.power() as f64,
        }
    }
}

/// Hidden activation and its derivative for energy power `n`.
#[inline]
fn activation(energy: &EnergyModel, conv: DualConvention, h: f64) -> f64 {
    conv.scale(energy) * energy.power_term(h, energy.power() - 1)
}

#[inline]
fn activation_slope(energy: &EnergyModel, conv: DualConvention, h: f64) -> f64 {
    let p = energy.power() - 1;
    if p == 0 {
        0.0
    } else {
        conv.scale(energy) * p as f64 * energy.power_term(h, p - 1)
    }
}

/// `β = 1 / T^n`.
pub fn beta_from_temperature(temperature: f64, power: u32) -> f64 {
    1.0 / temperature.powi(power as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    weights: Array2<f64>,
    n_visible: usize,
    n_classes: usize,
    energy: EnergyModel,
    beta: f64,
}

impl ClassifierModel {
    pub fn new(
        weights: Array2<f64>,
        n_visible: usize,
        n_classes: usize,
        energy: EnergyModel,
        beta: f64,
    ) -> Result<Self> {
        if weights.ncols() != n_visible + n_classes {
            return Err(Error::Dimension(format!(
                "weights have {} columns, expected N + N_c = {}",
                weights.ncols(),
                n_visible + n_classes
            )));
        }
        if weights.nrows() == 0 || n_classes == 0 {
            return Err(Error::InvalidParameter("need K ≥ 1 and N_c ≥ 1".into()));
        }
        if weights.iter().any(|w| !(-1.0..=1.0).contains(w)) {
            return Err(Error::InvalidParameter("weights must lie in [-1, 1]".into()));
        }
        check_beta(beta)?;
        Ok(ClassifierModel {
            weights,
            n_visible,
            n_classes,
            energy,
            beta,
        })
    }

    /// Gaussian weights with the given mean and standard deviation, clipped
    /// to [-1, 1], drawn from the stream keyed by `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        n_memories: usize,
        n_visible: usize,
        n_classes: usize,
        energy: EnergyModel,
        beta: f64,
        mean: f64,
        std: f64,
        seed: u64,
    ) -> Result<Self> {
        let normal = Normal::new(mean, std)
            .map_err(|e| Error::InvalidParameter(format!("weight distribution: {e}")))?;
        let mut rng = stream_rng(seed, &[tag::INIT_WEIGHTS]);
        let weights = Array2::from_shape_simple_fn((n_memories, n_visible + n_classes), || {
            normal.sample(&mut rng).clamp(-1.0, 1.0)
        });
        Self::new(weights, n_visible, n_classes, energy, beta)
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    /// `K × N` feature part.
    pub fn visible(&self) -> ArrayView2<'_, f64> {
        self.weights.slice(s![.., ..self.n_visible])
    }

    /// `K × N_c` recognition part.
    pub fn recognition(&self) -> ArrayView2<'_, f64> {
        self.weights.slice(s![.., self.n_visible..])
    }

    pub fn n_memories(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn energy(&self) -> EnergyModel {
        self.energy
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        check_beta(beta)?;
        self.beta = beta;
        Ok(())
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let mut m = self.clone();
        m.set_beta(beta)?;
        Ok(m)
    }

    /// Overwrites one weight; the value is clipped to [-1, 1].
    pub fn set_weight(&mut self, mu: usize, col: usize, value: f64) {
        self.weights[[mu, col]] = value.clamp(-1.0, 1.0);
    }

    fn check_images(&self, images: &ArrayView2<f64>) -> Result<()> {
        if images.ncols() != self.n_visible {
            return Err(Error::Dimension(format!(
                "images have {} pixels, model expects {}",
                images.ncols(),
                self.n_visible
            )));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("β must be positive and finite, got {beta}")));
    }
    Ok(())
}

/// `±1` targets, `+1` on the labelled class.
pub fn targets(labels: &[u8], n_classes: usize) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), n_classes), |(a, c)| {
        if labels[a] as usize == c {
            1.0
        } else {
            -1.0
        }
    })
}

/// `Σ (c - t)^{2m}` over all entries.
pub fn loss(c: ArrayView2<f64>, t: ArrayView2<f64>, m: u32) -> f64 {
    Zip::from(&c).and(&t).fold(0.0, |acc, &c, &t| acc + (c - t).powi(2 * m as i32))
}

/// `∂C/∂s` for `c = tanh(β s)`: `2m (c-t)^{2m-1} (1-c²) β`.
fn output_delta(c: &Array2<f64>, t: ArrayView2<f64>, m: u32, beta: f64) -> Array2<f64> {
    let mut d = c.clone();
    Zip::from(&mut d).and(&t).for_each(|d, &t| {
        let c = *d;
        *d = 2.0 * m as f64 * (c - t).powi(2 * m as i32 - 1) * (1.0 - c * c) * beta;
    });
    d
}

/// Per-minibatch state of the dual network.
#[derive(Debug, Clone)]
pub struct DualPass {
    /// `M × K` hidden pre-activations `h = X ξ_visᵀ`.
    pub hidden: Array2<f64>,
    /// `M × N_c` pre-tanh sums `Σ_μ ξ^μ_α a(h_μ)`.
    pub scores: Array2<f64>,
    /// `M × N_c` outputs `tanh(β · scores)`.
    pub outputs: Array2<f64>,
}

/// Dual forward pass over the rows of `images`.
pub fn forward_dual_batch(
    model: &ClassifierModel,
    images: ArrayView2<f64>,
    conv: DualConvention,
) -> Result<DualPass> {
    model.check_images(&images)?;
    let hidden = images.dot(&model.visible().t());
    let act = hidden.mapv(|h| activation(&model.energy, conv, h));
    let scores = act.dot(&model.recognition());
    let beta = model.beta;
    let outputs = scores.mapv(|s| (beta * s).tanh());
    Ok(DualPass {
        hidden,
        scores,
        outputs,
    })
}

/// `c_α = tanh(β Σ_μ ξ^μ_α a(ξ^μ · v))` for one image.
pub fn forward_dual(model: &ClassifierModel, image: ArrayView1<f64>, conv: DualConvention) -> Result<Array1<f64>> {
    let row = image.insert_axis(Axis(0));
    Ok(forward_dual_batch(model, row, conv)?.outputs.row(0).to_owned())
}

/// Gradient of [`loss`] over a minibatch with respect to all weights, in the
/// dual framing. Returns the `K × (N + N_c)` gradient and the loss.
pub fn grad_dual(
    model: &ClassifierModel,
    images: ArrayView2<f64>,
    t: ArrayView2<f64>,
    m: u32,
    conv: DualConvention,
) -> Result<(Array2<f64>, f64)> {
    let (g, l, _) = grad_dual_parts(model, images, t, m, conv)?;
    Ok((g, l))
}

fn grad_dual_parts(
    model: &ClassifierModel,
    images: ArrayView2<f64>,
    t: ArrayView2<f64>,
    m: u32,
    conv: DualConvention,
) -> Result<(Array2<f64>, f64, DualPass)> {
    let pass = forward_dual_batch(model, images, conv)?;
    if t.dim() != pass.outputs.dim() {
        return Err(Error::Dimension(format!("targets {:?} vs outputs {:?}", t.dim(), pass.outputs.dim())));
    }
    let l = loss(pass.outputs.view(), t, m);
    let g = output_delta(&pass.outputs, t, m, model.beta);
    let act = pass.hidden.mapv(|h| activation(&model.energy, conv, h));
    let d_rec = act.t().dot(&g);
    let mut d_hidden = g.dot(&model.recognition().t());
    Zip::from(&mut d_hidden)
        .and(&pass.hidden)
        .for_each(|d, &h| *d *= activation_slope(&model.energy, conv, h));
    let d_vis = d_hidden.t().dot(&images);
    let mut grad = Array2::zeros(model.weights.raw_dim());
    grad.slice_mut(s![.., ..model.n_visible]).assign(&d_vis);
    grad.slice_mut(s![.., model.n_visible..]).assign(&d_rec);
    Ok((grad, l, pass))
}

/// The `U`/`V` probe matrices of the associative-memory framing.
///
/// Column `A·N_c + α` probes class `α` of example `A`. Visible rows hold the
/// image in both matrices. In `U` every classification row is `x_init`; in
/// `V` row `α` is `-x_init` (the neuron switched to the opposite state) and
/// the others stay `x_init`. With `x_init = -1` this is off → on.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchTensors {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    /// `M × N_c` ±1 targets.
    pub targets: Array2<f64>,
    pub n_examples: usize,
    pub n_classes: usize,
}

impl MinibatchTensors {
    pub fn new(images: ArrayView2<f64>, labels: &[u8], n_classes: usize, x_init: f64) -> Result<Self> {
        let m = images.nrows();
        if labels.len() != m {
            return Err(Error::Dimension(format!("{m} images but {} labels", labels.len())));
        }
        let n = images.ncols();
        let cols = m * n_classes;
        let mut u = Array2::zeros((n + n_classes, cols));
        for a in 0..m {
            for alpha in 0..n_classes {
                u.slice_mut(s![..n, a * n_classes + alpha]).assign(&images.row(a));
            }
        }
        u.slice_mut(s![n.., ..]).fill(x_init);
        let mut v = u.clone();
        for col in 0..cols {
            v[[n + col % n_classes, col]] = -x_init;
        }
        Ok(MinibatchTensors {
            u,
            v,
            targets: targets(labels, n_classes),
            n_examples: m,
            n_classes,
        })
    }
}

fn am_scores(model: &ClassifierModel, batch: &MinibatchTensors) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    if batch.u.nrows() != model.n_visible + model.n_classes || batch.n_classes != model.n_classes {
        return Err(Error::Dimension(format!(
            "probe matrices have {} rows for a model with N + N_c = {}",
            batch.u.nrows(),
            model.n_visible + model.n_classes
        )));
    }
    let xu = model.weights.dot(&batch.u);
    let xv = model.weights.dot(&batch.v);
    let e = model.energy;
    let mut diff = xv.mapv(|x| e.energy(x));
    Zip::from(&mut diff).and(&xu).for_each(|d, &x| *d -= e.energy(x));
    let s = diff.sum_axis(Axis(0));
    let scores = s
        .into_shape_with_order((batch.n_examples, batch.n_classes))
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Ok((scores, xu, xv))
}

/// `M × N_c` outputs `tanh(β Σ_μ [F(ξ^μ·V) - F(ξ^μ·U)])`.
pub fn forward_am_batch(model: &ClassifierModel, batch: &MinibatchTensors) -> Result<Array2<f64>> {
    let (scores, _, _) = am_scores(model, batch)?;
    let beta = model.beta;
    Ok(scores.mapv(|s| (beta * s).tanh()))
}

/// Associative-memory readout for one image with classification neurons
/// initialized at `x_init`.
pub fn forward_am(model: &ClassifierModel, image: ArrayView1<f64>, x_init: f64) -> Result<Array1<f64>> {
    model.check_images(&image.insert_axis(Axis(0)))?;
    let batch = MinibatchTensors::new(image.insert_axis(Axis(0)), &[0], model.n_classes, x_init)?;
    Ok(forward_am_batch(model, &batch)?.row(0).to_owned())
}

/// Gradient of [`loss`] in the associative-memory framing:
/// `Σ_cols D (f(ξV) Vᵀ - f(ξU) Uᵀ)` with `D = 2m (c-t)^{2m-1} (1-c²) β`.
pub fn grad_am(model: &ClassifierModel, batch: &MinibatchTensors, m: u32) -> Result<(Array2<f64>, f64)> {
    let (scores, xu, xv) = am_scores(model, batch)?;
    let beta = model.beta;
    let c = scores.mapv(|s| (beta * s).tanh());
    let l = loss(c.view(), batch.targets.view(), m);
    let d = output_delta(&c, batch.targets.view(), m, beta);
    let d_cols = Array1::from_iter(d.iter().copied());
    let e = model.energy;
    let mut fv = xv.mapv(|x| e.derivative(x));
    let mut fu = xu.mapv(|x| e.derivative(x));
    fv *= &d_cols;
    fu *= &d_cols;
    let grad = fv.dot(&batch.v.t()) - fu.dot(&batch.u.t());
    Ok((grad, l))
}

/// Momentum step with per-memory max normalization:
/// `V ← pV - grad`, then `ξ^μ ← clip(ξ^μ + ε V^μ / max_J |V^μ_J|)`.
/// Rows whose velocity is entirely zero are left unchanged.
pub fn apply_update(
    model: &mut ClassifierModel,
    velocity: &mut Array2<f64>,
    grad: ArrayView2<f64>,
    eps: f64,
    momentum: f64,
) -> Result<()> {
    if velocity.dim() != model.weights.dim() || grad.dim() != model.weights.dim() {
        return Err(Error::Dimension(format!(
            "velocity {:?} / gradient {:?} vs weights {:?}",
            velocity.dim(),
            grad.dim(),
            model.weights.dim()
        )));
    }
    velocity.zip_mut_with(&grad, |v, &g| *v = momentum * *v - g);
    Zip::from(model.weights.rows_mut())
        .and(velocity.rows())
        .for_each(|mut w, v| {
            let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if scale > 0.0 {
                w.zip_mut_with(&v, |w, &v| *w = (*w + eps * v / scale).clamp(-1.0, 1.0));
            }
        });
    Ok(())
}
