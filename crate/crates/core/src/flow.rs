//! Real NVP density model over autoencoder latents.
//!
//! Each affine coupling layer keeps the masked dimensions and transforms the
//! rest:
//!
//! ```text
//! y = b⊙x + (1−b)⊙(x⊙exp(s(b⊙x)) + t(b⊙x)),   log|det| = Σ_(1−b) s
//! ```
//!
//! with the scale squashed to `s_max·tanh(raw/s_max)`. Latents are whitened
//! per dimension with training statistics before the first coupling, and the
//! density is reported in latent coordinates (the whitening Jacobian is
//! included).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numeric::dense::{backward_stack, forward_stack};
use crate::numeric::{Activation, AdamConfig, DenseLayer, LayerGrads, NetOptimizer, RngStream};

pub const STD_FLOOR: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub s_max: f64,
    pub adam: AdamConfig,
    /// Keep the parameters from the epoch with the lowest validation NLL
    /// instead of the last epoch.
    pub keep_best_val: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            num_layers: 8,
            hidden_dim: 64,
            s_max: 3.0,
            adam: AdamConfig::default(),
            keep_best_val: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    /// `true` marks pass-through dimensions.
    pub mask: Vec<bool>,
    pub scale_net: Vec<DenseLayer>,
    pub shift_net: Vec<DenseLayer>,
    pub s_max: f64,
}

struct CouplingCache {
    x: Vec<f64>,
    scale_acts: Vec<Vec<f64>>,
    shift_acts: Vec<Vec<f64>>,
    /// Clamped scales (zero on pass-through dims).
    s: Vec<f64>,
    exp_s: Vec<f64>,
}

/// Even/odd alternating mask for layer `k`.
pub fn alternating_mask(dim: usize, k: usize) -> Vec<bool> {
    (0..dim).map(|i| (i + k).is_multiple_of(2)).collect()
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    ensure(v.iter().all(|x| x.is_finite()), || format!("non-finite {what}"))
}

impl CouplingLayer {
    fn net(dim: usize, hidden: usize, mut make: impl FnMut(usize, usize, Activation) -> DenseLayer) -> Vec<DenseLayer> {
        vec![make(dim, hidden, Activation::Tanh), make(hidden, dim, Activation::Identity)]
    }

    pub fn new(mask: Vec<bool>, hidden: usize, s_max: f64, rng: &mut RngStream) -> Self {
        let dim = mask.len();
        let scale_net = Self::net(dim, hidden, |a, b, act| DenseLayer::init(a, b, act, rng));
        let shift_net = Self::net(dim, hidden, |a, b, act| DenseLayer::init(a, b, act, rng));
        Self {
            mask,
            scale_net,
            shift_net,
            s_max,
        }
    }

    /// Zero parameters: the identity map with zero log-determinant.
    pub fn zeros(mask: Vec<bool>, hidden: usize, s_max: f64) -> Self {
        let dim = mask.len();
        Self {
            scale_net: Self::net(dim, hidden, DenseLayer::zeros),
            shift_net: Self::net(dim, hidden, DenseLayer::zeros),
            mask,
            s_max,
        }
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.dim();
        ensure(self.mask.iter().any(|m| *m) && self.mask.iter().any(|m| !m), || {
            "coupling mask must be neither all-zero nor all-one".into()
        })?;
        ensure(self.s_max > 0.0 && self.s_max.is_finite(), || format!("invalid s_max {}", self.s_max))?;
        for net in [&self.scale_net, &self.shift_net] {
            ensure(net.len() == 2, || "coupling nets have exactly two layers".into())?;
            for l in net {
                l.validate()?;
            }
            ensure(net[0].in_dim == h && net[1].out_dim == h && net[0].out_dim == net[1].in_dim, || {
                "coupling net widths disagree with the mask".into()
            })?;
        }
        Ok(())
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.scale_net.iter().chain(&self.shift_net)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.scale_net.iter_mut().chain(self.shift_net.iter_mut())
    }

    fn masked(&self, x: &[f64]) -> Vec<f64> {
        let h = self.dim();
        x.iter()
            .enumerate()
            .map(|(k, v)| if self.mask[k % h] { *v } else { 0.0 })
            .collect()
    }

    /// Scale and shift for the conditioning input `xb` (already masked).
    fn conditioners(&self, xb: &[f64], batch: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
        let h = self.dim();
        let scale_acts = forward_stack(&self.scale_net, xb, batch)?;
        let shift_acts = forward_stack(&self.shift_net, xb, batch)?;
        let raw = scale_acts.last().expect("non-empty");
        let t_raw = shift_acts.last().expect("non-empty");
        let mut s = vec![0.0; batch * h];
        let mut t = vec![0.0; batch * h];
        for k in 0..batch * h {
            if !self.mask[k % h] {
                s[k] = self.s_max * (raw[k] / self.s_max).tanh();
                t[k] = t_raw[k];
            }
        }
        Ok((scale_acts, shift_acts, s, t))
    }

    fn forward_batch(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, Vec<f64>, CouplingCache)> {
        let h = self.dim();
        let xb = self.masked(x);
        let (scale_acts, shift_acts, s, t) = self.conditioners(&xb, batch)?;
        let exp_s: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let mut y = vec![0.0; batch * h];
        let mut log_det = vec![0.0; batch];
        for b in 0..batch {
            let mut ld = 0.0;
            for i in 0..h {
                let k = b * h + i;
                if self.mask[i] {
                    y[k] = x[k];
                } else {
                    y[k] = x[k] * exp_s[k] + t[k];
                    ld += s[k];
                }
            }
            log_det[b] = ld;
        }
        let cache = CouplingCache {
            x: x.to_vec(),
            scale_acts,
            shift_acts,
            s,
            exp_s,
        };
        Ok((y, log_det, cache))
    }

    /// Backward through one coupling. `grad_y` is `dL/dy`, `grad_log_det`
    /// the per-sample `dL/dlog_det`. Returns `dL/dx`.
    fn backward_batch(
        &self,
        cache: &CouplingCache,
        grad_y: &[f64],
        grad_log_det: &[f64],
        batch: usize,
        grads: &mut [LayerGrads],
    ) -> Result<Vec<f64>> {
        let h = self.dim();
        let mut grad_x = vec![0.0; batch * h];
        let mut grad_raw = vec![0.0; batch * h];
        let mut grad_t = vec![0.0; batch * h];
        for b in 0..batch {
            for i in 0..h {
                let k = b * h + i;
                if self.mask[i] {
                    grad_x[k] = grad_y[k];
                } else {
                    let es = cache.exp_s[k];
                    grad_x[k] = grad_y[k] * es;
                    let grad_s = grad_y[k] * cache.x[k] * es + grad_log_det[b];
                    let r = cache.s[k] / self.s_max;
                    grad_raw[k] = grad_s * (1.0 - r * r);
                    grad_t[k] = grad_y[k];
                }
            }
        }
        let (scale_grads, shift_grads) = grads.split_at_mut(2);
        let gxb_s = backward_stack(&self.scale_net, &cache.scale_acts, grad_raw, batch, scale_grads, true)?
            .expect("requested");
        let gxb_t = backward_stack(&self.shift_net, &cache.shift_acts, grad_t, batch, shift_grads, true)?
            .expect("requested");
        for k in 0..batch * h {
            if self.mask[k % h] {
                grad_x[k] += gxb_s[k] + gxb_t[k];
            }
        }
        Ok(grad_x)
    }

    fn inverse_batch(&self, y: &[f64], batch: usize) -> Result<Vec<f64>> {
        let h = self.dim();
        let yb = self.masked(y);
        let (_, _, s, t) = self.conditioners(&yb, batch)?;
        Ok((0..batch * h)
            .map(|k| {
                if self.mask[k % h] {
                    y[k]
                } else {
                    (y[k] - t[k]) * (-s[k]).exp()
                }
            })
            .collect())
    }
}

/// Forward map of one coupling layer: `(y, log|det ∂y/∂x|)`.
pub fn coupling_forward(layer: &CouplingLayer, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    ensure(x.len() == layer.dim(), || format!("coupling expects {} values, got {}", layer.dim(), x.len()))?;
    check_finite(x, "coupling input")?;
    let (y, ld, _) = layer.forward_batch(x, 1)?;
    Ok((y, ld[0]))
}

/// Exact inverse of [`coupling_forward`].
pub fn coupling_inverse(layer: &CouplingLayer, y: &[f64]) -> Result<Vec<f64>> {
    ensure(y.len() == layer.dim(), || format!("coupling expects {} values, got {}", layer.dim(), y.len()))?;
    check_finite(y, "coupling input")?;
    layer.inverse_batch(y, 1)
}

/// Per-dimension standardization with training-split statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Whitening {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation, std floored at [`STD_FLOOR`].
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        ensure(!samples.is_empty(), || "whitening needs at least one sample".into())?;
        let dim = samples[0].len();
        ensure(samples.iter().all(|s| s.len() == dim), || "latents differ in length".into())?;
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    fn log_det(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub dim: usize,
    pub layers: Vec<CouplingLayer>,
    pub whitening: Whitening,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub train_nll: Vec<f64>,
    pub val_nll: Vec<f64>,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub seed: u64,
}

impl FlowModel {
    pub fn new(dim: usize, num_layers: usize, hidden: usize, s_max: f64, rng: &mut RngStream) -> Self {
        let layers = (0..num_layers)
            .map(|k| CouplingLayer::new(alternating_mask(dim, k), hidden, s_max, rng))
            .collect();
        Self {
            dim,
            layers,
            whitening: Whitening::identity(dim),
        }
    }

    /// Zero-parameter couplings and identity whitening: a standard normal.
    pub fn identity(dim: usize, num_layers: usize, hidden: usize, s_max: f64) -> Self {
        let layers = (0..num_layers)
            .map(|k| CouplingLayer::zeros(alternating_mask(dim, k), hidden, s_max))
            .collect();
        Self {
            dim,
            layers,
            whitening: Whitening::identity(dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.dim > 0, || "flow dimension must be positive".into())?;
        ensure(self.whitening.mean.len() == self.dim && self.whitening.std.len() == self.dim, || {
            "whitening length differs from flow dimension".into()
        })?;
        ensure(
            self.whitening.std.iter().all(|s| *s >= STD_FLOOR && s.is_finite())
                && self.whitening.mean.iter().all(|m| m.is_finite()),
            || "whitening statistics must be finite with std >= 1e-6".into(),
        )?;
        for (k, l) in self.layers.iter().enumerate() {
            ensure(l.dim() == self.dim, || format!("coupling {k} has the wrong width"))?;
            l.validate()?;
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            ensure(pair[0].mask.iter().zip(&pair[1].mask).all(|(a, b)| a != b), || {
                format!("couplings {k} and {} must use complementary masks", k + 1)
            })?;
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn net_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().flat_map(|c| c.layers())
    }

    pub fn param_count(&self) -> usize {
        self.net_layers().map(DenseLayer::param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.net_layers()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure(flat.len() == self.param_count(), || "flat parameter length mismatch".into())?;
        let mut it = flat.iter().copied();
        for c in &mut self.layers {
            for l in c.layers_mut() {
                for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                    *p = it.next().expect("length checked");
                }
            }
        }
        Ok(())
    }

    fn whiten(&self, latent: &[f64]) -> Vec<f64> {
        let h = self.dim;
        latent
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.whitening.mean[k % h]) / self.whitening.std[k % h])
            .collect()
    }

    /// Whitened latent pushed through every coupling: `(z, per-layer log-dets)`.
    pub fn forward(&self, latent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure(latent.len() == self.dim, || {
            format!("flow expects {} values, got {}", self.dim, latent.len())
        })?;
        check_finite(latent, "latent")?;
        let mut u = self.whiten(latent);
        let mut log_dets = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let (y, ld, _) = layer.forward_batch(&u, 1)?;
            if !ld[0].is_finite() || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Scoring {
                    layer: k,
                    message: "non-finite coupling output".into(),
                });
            }
            u = y;
            log_dets.push(ld[0]);
        }
        Ok((u, log_dets))
    }

    /// Inverse of [`FlowModel::forward`], back to latent coordinates.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure(z.len() == self.dim, || format!("flow expects {} values, got {}", self.dim, z.len()))?;
        check_finite(z, "base sample")?;
        let mut u = z.to_vec();
        for layer in self.layers.iter().rev() {
            u = layer.inverse_batch(&u, 1)?;
        }
        Ok(u
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.whitening.std[k] + self.whitening.mean[k])
            .collect())
    }

    /// Exact log-density of a latent vector.
    pub fn log_prob(&self, latent: &[f64]) -> Result<f64> {
        let (z, log_dets) = self.forward(latent)?;
        let base = -(self.dim as f64) * HALF_LN_2PI - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        let lp = base + log_dets.iter().sum::<f64>() + self.whitening.log_det();
        if lp.is_finite() {
            Ok(lp)
        } else {
            Err(Error::Scoring {
                layer: self.layers.len(),
                message: "non-finite log-probability".into(),
            })
        }
    }

    /// Mean NLL over a batch and its gradient for every coupling net layer
    /// (per coupling: scale layers, then shift layers).
    pub fn nll_and_grads(&self, latents: &[f64], batch: usize) -> Result<(f64, Vec<LayerGrads>)> {
        let mut grads: Vec<LayerGrads> = self.net_layers().map(LayerGrads::zeros_like).collect();
        let nll = self.accumulate_grads(latents, batch, &mut grads)?;
        Ok((nll, grads))
    }

    fn accumulate_grads(&self, latents: &[f64], batch: usize, grads: &mut [LayerGrads]) -> Result<f64> {
        let h = self.dim;
        ensure(batch > 0 && latents.len() == batch * h, || "flow batch shape mismatch".into())?;
        let mut u = self.whiten(latents);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut log_det = vec![self.whitening.log_det(); batch];
        for layer in &self.layers {
            let (y, ld, cache) = layer.forward_batch(&u, batch)?;
            for (acc, v) in log_det.iter_mut().zip(&ld) {
                *acc += v;
            }
            caches.push(cache);
            u = y;
        }
        let mut nll = 0.0;
        for b in 0..batch {
            let z = &u[b * h..(b + 1) * h];
            let lp = -(h as f64) * HALF_LN_2PI - 0.5 * z.iter().map(|v| v * v).sum::<f64>() + log_det[b];
            nll -= lp;
        }
        nll /= batch as f64;

        let inv_b = 1.0 / batch as f64;
        let mut grad: Vec<f64> = u.iter().map(|v| v * inv_b).collect();
        let grad_ld = vec![-inv_b; batch];
        for (k, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward_batch(&caches[k], &grad, &grad_ld, batch, &mut grads[4 * k..4 * k + 4])?;
        }
        Ok(nll)
    }

    /// Mean NLL over a sample set.
    pub fn mean_nll(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            total -= self.log_prob(s)?;
        }
        Ok(total / samples.len() as f64)
    }
}

/// Log-density of `latent` under `flow`.
pub fn flow_log_prob(flow: &FlowModel, latent: &[f64]) -> Result<f64> {
    flow.log_prob(latent)
}

/// Maximum-likelihood training on normal latents. Whitening statistics come
/// from `train` only.
pub fn train_flow(train: &[Vec<f64>], val: &[Vec<f64>], cfg: &FlowConfig, seed: u64) -> Result<(FlowModel, FlowReport)> {
    ensure(!train.is_empty() && !val.is_empty(), || "flow training needs train and validation latents".into())?;
    ensure(cfg.batch_size > 0, || "batch_size must be positive".into())?;
    let dim = train[0].len();
    ensure(dim >= 2 || cfg.num_layers == 0, || "coupling layers need at least two dimensions".into())?;
    ensure(val.iter().all(|v| v.len() == dim), || "validation latents differ in length".into())?;

    let mut rng = RngStream::new(seed);
    let mut flow = FlowModel::new(dim, cfg.num_layers, cfg.hidden_dim, cfg.s_max, &mut rng);
    flow.whitening = Whitening::fit(train)?;
    let mut opt = NetOptimizer::new(cfg.adam, &flow.net_layers().collect::<Vec<_>>());
    let mut grads: Vec<LayerGrads> = flow.net_layers().map(LayerGrads::zeros_like).collect();

    let mut report = FlowReport {
        train_nll: Vec::with_capacity(cfg.epochs),
        val_nll: Vec::with_capacity(cfg.epochs),
        epochs_run: 0,
        selected_epoch: 0,
        seed,
    };
    let mut best: Option<(f64, FlowModel)> = None;
    let mut step = 0usize;
    let mut buf = Vec::with_capacity(cfg.batch_size * dim);
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(train.len());
        let mut epoch_nll = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            step += 1;
            buf.clear();
            for &i in idx {
                buf.extend_from_slice(&train[i]);
            }
            grads.iter_mut().for_each(LayerGrads::clear);
            let nll = flow.accumulate_grads(&buf, idx.len(), &mut grads)?;
            if !nll.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite NLL at epoch {}, batch {}", epoch + 1, bi + 1),
                });
            }
            epoch_nll += nll * idx.len() as f64;
            let grad_refs: Vec<&LayerGrads> = grads.iter().collect();
            let mut layer_refs: Vec<&mut DenseLayer> = flow.layers.iter_mut().flat_map(|c| c.layers_mut()).collect();
            opt.step(&mut layer_refs, &grad_refs).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training {
                    step,
                    message: format!("{message} at epoch {}, batch {}", epoch + 1, bi + 1),
                },
                other => other,
            })?;
        }
        report.train_nll.push(epoch_nll / train.len() as f64);
        let v = flow.mean_nll(val).map_err(|e| Error::Training {
            step,
            message: format!("validation NLL failed after epoch {}: {e}", epoch + 1),
        })?;
        report.val_nll.push(v);
        report.epochs_run += 1;
        if cfg.keep_best_val && best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, flow.clone()));
            report.selected_epoch = epoch + 1;
        }
    }
    if let Some((_, kept)) = best {
        flow = kept;
    } else {
        report.selected_epoch = report.epochs_run;
    }
    Ok((flow, report))
}
