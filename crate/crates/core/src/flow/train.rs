use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CouplingFlow;
use crate::diffeo::Diffeo;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Not read from configuration files; run configurations derive it from their own seed.
    #[serde(skip)]
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled to at most this global norm.
    pub clip_norm: f64,
    /// Rows of the data used for the per-epoch invertibility probe.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 10.0,
            probe_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm > 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllLoss {
    /// `mean_i |f(x_i)|^2 / 2`.
    pub loss: f64,
    /// `loss + (d / 2) ln(2 pi)`, the negative log-likelihood under a standard normal base.
    pub nll: f64,
    /// Gradient of `loss` with respect to [`CouplingFlow::params`].
    pub grad: Vec<f64>,
}

/// Loss and parameter gradient on a batch with one sample per row.
pub fn nll_loss(flow: &CouplingFlow, batch: &DMatrix<f64>) -> Result<NllLoss> {
    check_dim(flow.dim(), batch.ncols())?;
    let n = batch.nrows();
    if n == 0 {
        return Err(Error::Empty("loss batch"));
    }
    let x = batch.transpose();
    let scale = 1.0 / n as f64;
    let (z, grad) = flow.backprop(&x, |z| z * scale);
    let loss = 0.5 * z.norm_squared() * scale;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("flow loss or gradient".into()));
    }
    Ok(NllLoss {
        loss,
        nll: loss + 0.5 * flow.dim() as f64 * (2.0 * std::f64::consts::PI).ln(),
        grad,
    })
}

/// Mean negative log-likelihood without gradients.
fn full_nll(flow: &CouplingFlow, data: &DMatrix<f64>) -> f64 {
    let z = flow.forward_batch(&data.transpose());
    0.5 * z.norm_squared() / data.nrows() as f64 + 0.5 * flow.dim() as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub flow: CouplingFlow,
    /// Full-data negative log-likelihood before training and after every epoch.
    pub history: Vec<f64>,
    /// Largest probe round-trip error `|f^{-1}(f(x)) - x|_inf` per epoch.
    pub roundtrip: Vec<f64>,
}

/// Adam on shuffled minibatches of the rows of `data`, deterministic given `cfg.seed`.
pub fn train_flow(mut flow: CouplingFlow, data: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dim(flow.dim(), data.ncols())?;
    let n = data.nrows();
    if n < cfg.batch_size {
        return Err(Error::invalid(format!(
            "training needs at least batch_size = {} rows, got {n}",
            cfg.batch_size
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = flow.params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let probe = data.rows(0, cfg.probe_size.min(n)).transpose();
    let mut history = vec![full_nll(&flow, data)];
    let mut roundtrip = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select_rows(chunk);
            let mut step = match nll_loss(&flow, &batch) {
                Ok(l) => l.grad,
                Err(e) => {
                    return Err(Error::Diverged {
                        epoch,
                        reason: e.to_string(),
                        history,
                    })
                }
            };
            let norm = step.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                step.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut params, &step);
            flow.set_params(&params)?;
        }
        let nll = full_nll(&flow, data);
        if !nll.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("non-finite loss {nll}"),
                history,
            });
        }
        history.push(nll);
        let back = flow.inverse_batch(&flow.forward_batch(&probe));
        let err = (back - &probe).amax();
        if !(err <= 1e-6 * (1.0 + probe.amax())) {
            return Err(Error::Diverged {
                epoch,
                reason: format!("probe round-trip error {err:e}"),
                history,
            });
        }
        roundtrip.push(err);
    }
    Ok(TrainOutcome {
        flow,
        history,
        roundtrip,
    })
}
