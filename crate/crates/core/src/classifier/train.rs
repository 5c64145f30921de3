use std::io::Write;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_update, beta_from_temperature, grad_am, grad_dual_parts, targets, ClassifierModel, DualConvention,
    MinibatchTensors,
};
use crate::data::{minibatches, LabeledImageSet};
use crate::{EnergyModel, Error, Result};

/// Which formulation computes outputs and gradients during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Framing {
    /// Hidden-layer network: `N_c` times cheaper than [`Framing::Am`].
    Dual,
    /// Energy differences over the `U`/`V` probe matrices, classification
    /// neurons starting at -1.
    Am,
}

impl std::str::FromStr for Framing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dual" => Ok(Framing::Dual),
            "am" => Ok(Framing::Am),
            other => Err(Error::InvalidParameter(format!("unknown framing {other:?} (dual|am)"))),
        }
    }
}

impl std::fmt::Display for Framing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Framing::Dual => "dual",
            Framing::Am => "am",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_memories: usize,
    pub energy: EnergyModel,
    /// Exponent `m` of the `(c - t)^{2m}` objective.
    pub loss_power: u32,
    pub epochs: usize,
    pub eps0: f64,
    /// Per-epoch learning-rate factor.
    pub decay: f64,
    pub momentum: f64,
    pub t_initial: f64,
    pub t_final: f64,
    pub anneal_epochs: usize,
    pub per_class: usize,
    pub init_mean: f64,
    pub init_std: f64,
    pub framing: Framing,
    /// Validation and test error are measured every this many epochs (and
    /// always after the last one).
    pub eval_every: usize,
    pub seed: u64,
    /// Reject hyperparameters outside the published windows.
    pub paper_windows: bool,
}

impl TrainConfig {
    /// Full-size recipe: `K = 2000`, 3000 epochs. Small powers anneal the
    /// temperature over the first 200 epochs; powers of 10 and above train
    /// at constant temperature with a steep objective.
    pub fn paper(energy: EnergyModel) -> Self {
        let large = energy.power() >= 10;
        TrainConfig {
            n_memories: 2000,
            energy,
            loss_power: if large { 30 } else { 3 },
            epochs: 3000,
            eps0: if large { 0.01 } else { 0.04 },
            decay: 0.998,
            momentum: 0.9,
            t_initial: if large { 600.0 } else { 300.0 },
            t_final: if large { 600.0 } else { 50.0 },
            anneal_epochs: if large { 0 } else { 200 },
            per_class: 100,
            init_mean: -0.3,
            init_std: 0.3,
            framing: Framing::Dual,
            eval_every: 1,
            seed: 0,
            paper_windows: true,
        }
    }

    /// Scaled-down run for a single machine: `K = 200`, 100 epochs, zero-mean
    /// initialization and a constant temperature.
    ///
    /// With mean -0.3 weights and a -1 background every hidden unit starts far
    /// into its active side, so a short run stays close to a linear model.
    pub fn desk(energy: EnergyModel) -> Self {
        let t = if energy.power() >= 10 { 150.0 } else { 30.0 };
        TrainConfig {
            n_memories: 200,
            epochs: 100,
            init_mean: 0.0,
            t_initial: t,
            t_final: t,
            anneal_epochs: 0,
            ..Self::paper(energy)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_memories == 0 {
            return bad("need at least one memory".into());
        }
        if self.loss_power == 0 {
            return bad("loss power m must be ≥ 1".into());
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return bad(format!("eps0 must be positive, got {}", self.eps0));
        }
        if !(self.t_initial > 0.0 && self.t_final > 0.0) {
            return bad("temperatures must be positive".into());
        }
        if self.per_class == 0 || self.eval_every == 0 {
            return bad("per_class and eval_every must be ≥ 1".into());
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        if self.paper_windows {
            if !(0.6..=0.95).contains(&self.momentum) {
                return bad(format!("momentum {} outside [0.6, 0.95]", self.momentum));
            }
            if !(0.01..=0.04).contains(&self.eps0) {
                return bad(format!("eps0 {} outside [0.01, 0.04]", self.eps0));
            }
        }
        Ok(())
    }
}

/// `ε(t) = ε₀ · decay^t` for zero-based epoch `t`.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.eps0 * cfg.decay.powi(epoch as i32)
}

/// Linear from `t_initial` at epoch 0 to `t_final` at `anneal_epochs`,
/// constant afterwards.
pub fn temperature(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch >= cfg.anneal_epochs {
        cfg.t_final
    } else {
        cfg.t_initial + (cfg.t_final - cfg.t_initial) * epoch as f64 / cfg.anneal_epochs as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// One-based.
    pub epoch: usize,
    /// Error on the minibatches of this epoch, each measured just before its
    /// own update.
    pub train_err: f64,
    pub val_err: Option<f64>,
    pub test_err: Option<f64>,
    /// Mean objective per training example over the epoch.
    pub loss: f64,
    pub lr: f64,
    pub temperature: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_err,val_err,test_err,lr,T";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{:.8},{:.4}",
            self.epoch,
            self.train_err,
            opt(self.val_err),
            opt(self.test_err),
            self.lr,
            self.temperature
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(out, "{}", m.csv_row())?;
    }
    Ok(())
}

/// State at the moment the objective stopped being finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSnapshot {
    /// One-based.
    pub epoch: usize,
    /// Zero-based within the epoch.
    pub batch: usize,
    pub loss: f64,
    pub beta: f64,
    pub lr: f64,
    pub temperature: f64,
    pub max_abs_weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Rows per chunk when a minibatch gradient or an evaluation pass is split
/// across threads. Fixed so that sums are identical for any thread count.
const CHUNK: usize = 250;

fn dual_minibatch(
    model: &ClassifierModel,
    images: ArrayView2<f64>,
    t: ArrayView2<f64>,
    m: u32,
) -> Result<(Array2<f64>, f64, Array2<f64>)> {
    let parts: Vec<(Array2<f64>, f64, Array2<f64>)> = (0..images.nrows())
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|lo| {
            let hi = (lo + CHUNK).min(images.nrows());
            let (g, l, pass) = grad_dual_parts(
                model,
                images.slice(s![lo..hi, ..]),
                t.slice(s![lo..hi, ..]),
                m,
                DualConvention::Training,
            )?;
            Ok((g, l, pass.scores))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut grad, mut loss, first) = iter.next().expect("non-empty minibatch");
    let mut scores = vec![first];
    for (g, l, sc) in iter {
        grad += &g;
        loss += l;
        scores.push(sc);
    }
    let views: Vec<_> = scores.iter().map(|a| a.view()).collect();
    let scores = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok((grad, loss, scores))
}

fn argmax_rows(scores: ArrayView2<f64>) -> Vec<u8> {
    scores
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}

/// Pre-tanh class scores; `tanh(β ·)` is increasing, so their argmax is the
/// predicted class for any `β > 0`.
fn scores(model: &ClassifierModel, images: ArrayView2<f64>, framing: Framing) -> Result<Array2<f64>> {
    match framing {
        Framing::Dual => Ok(super::forward_dual_batch(model, images, DualConvention::Training)?.scores),
        Framing::Am => {
            let labels = vec![0u8; images.nrows()];
            let batch = MinibatchTensors::new(images, &labels, model.n_classes(), -1.0)?;
            Ok(super::am_scores(model, &batch)?.0)
        }
    }
}

/// Predicted class per row: the classification neuron with maximal output.
pub fn predict(model: &ClassifierModel, images: ArrayView2<f64>, framing: Framing) -> Result<Vec<u8>> {
    let chunks: Vec<Vec<u8>> = (0..images.nrows())
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|lo| {
            let hi = (lo + CHUNK).min(images.nrows());
            Ok(argmax_rows(scores(model, images.slice(s![lo..hi, ..]), framing)?.view()))
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Fraction of misclassified examples.
pub fn evaluate(model: &ClassifierModel, set: &LabeledImageSet, framing: Framing) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("cannot evaluate on an empty set".into()));
    }
    let pred = predict(model, set.images.view(), framing)?;
    let wrong = pred.iter().zip(&set.labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / set.len() as f64)
}

pub fn train(
    cfg: &TrainConfig,
    train_set: &LabeledImageSet,
    validation: Option<&LabeledImageSet>,
    test: Option<&LabeledImageSet>,
) -> Result<TrainOutcome> {
    train_with_observer(cfg, train_set, validation, test, |_, _| Ok(()))
}

/// Trains from a fresh Gaussian initialization. `observer` sees every
/// epoch's metrics and the model after that epoch; an error from it stops
/// training.
pub fn train_with_observer<O>(
    cfg: &TrainConfig,
    train_set: &LabeledImageSet,
    validation: Option<&LabeledImageSet>,
    test: Option<&LabeledImageSet>,
    mut observer: O,
) -> Result<TrainOutcome>
where
    O: FnMut(&EpochMetrics, &ClassifierModel) -> Result<()>,
{
    cfg.validate()?;
    let power = cfg.energy.power();
    let mut model = ClassifierModel::random(
        cfg.n_memories,
        train_set.n_visible(),
        train_set.n_classes,
        cfg.energy,
        beta_from_temperature(cfg.t_initial, power),
        cfg.init_mean,
        cfg.init_std,
        cfg.seed,
    )?;
    let mut velocity = Array2::zeros(model.weights().raw_dim());
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let temp = temperature(cfg, epoch);
        model.set_beta(beta_from_temperature(temp, power))?;
        let lr = learning_rate(cfg, epoch);
        let (mut seen, mut wrong, mut loss_sum) = (0usize, 0usize, 0.0);

        for (b, idx) in minibatches(train_set, cfg.per_class, cfg.seed, epoch as u64)?.enumerate() {
            let images = train_set.images.select(Axis(0), &idx);
            let labels: Vec<u8> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let (grad, loss, scores) = match cfg.framing {
                Framing::Dual => {
                    let t = targets(&labels, model.n_classes());
                    dual_minibatch(&model, images.view(), t.view(), cfg.loss_power)?
                }
                Framing::Am => {
                    let batch = MinibatchTensors::new(images.view(), &labels, model.n_classes(), -1.0)?;
                    let (g, l) = grad_am(&model, &batch, cfg.loss_power)?;
                    let sc = super::am_scores(&model, &batch)?.0;
                    (g, l, sc)
                }
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(Box::new(DivergenceSnapshot {
                    epoch: epoch + 1,
                    batch: b,
                    loss,
                    beta: model.beta(),
                    lr,
                    temperature: temp,
                    max_abs_weight: model.weights().iter().fold(0.0, |a: f64, w| a.max(w.abs())),
                })));
            }
            wrong += argmax_rows(scores.view()).iter().zip(&labels).filter(|(p, l)| p != l).count();
            seen += labels.len();
            loss_sum += loss;
            apply_update(&mut model, &mut velocity, grad.view(), lr, cfg.momentum)?;
        }
        if seen == 0 {
            return Err(Error::InvalidParameter(format!(
                "training set has a class with fewer than {} examples; no minibatch formed",
                cfg.per_class
            )));
        }

        let measure = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let eval = |set: Option<&LabeledImageSet>| -> Result<Option<f64>> {
            match set {
                Some(s) if measure && !s.is_empty() => Ok(Some(evaluate(&model, s, cfg.framing)?)),
                _ => Ok(None),
            }
        };
        let row = EpochMetrics {
            epoch: epoch + 1,
            train_err: wrong as f64 / seen as f64,
            val_err: eval(validation)?,
            test_err: eval(test)?,
            loss: loss_sum / seen as f64,
            lr,
            temperature: temp,
        };
        observer(&row, &model)?;
        metrics.push(row);
    }
    Ok(TrainOutcome { model, metrics })
}
