//! Dense autoencoder trained on normal frames only.
//!
//! Encoder `input → hidden… → latent` with LeakyReLU hidden units and a linear
//! latent; the decoder mirrors it and ends in a sigmoid so reconstructions lie
//! in [0, 1].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{check_normal_only, Frame, FRAME_PIXELS};
use crate::error::{ensure, Error, Result};
use crate::numeric::dense::{backward_stack, forward_stack};
use crate::numeric::{Activation, AdamConfig, DenseLayer, LayerGrads, NetOptimizer, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            latent_dim: 64,
            hidden_dims: vec![512, 128],
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epochs_run: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

/// Layer widths from input to latent.
fn encoder_dims(input_dim: usize, hidden: &[usize], latent_dim: usize) -> Vec<usize> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(latent_dim);
    dims
}

fn build(dims: &[usize], mut make: impl FnMut(usize, usize, Activation) -> DenseLayer) -> (Vec<DenseLayer>, Vec<DenseLayer>) {
    let n = dims.len() - 1;
    let encoder = (0..n)
        .map(|i| {
            let act = if i + 1 == n { Activation::Identity } else { Activation::leaky() };
            make(dims[i], dims[i + 1], act)
        })
        .collect();
    let decoder = (0..n)
        .map(|i| {
            let (a, b) = (dims[n - i], dims[n - i - 1]);
            let act = if i + 1 == n { Activation::Sigmoid } else { Activation::leaky() };
            make(a, b, act)
        })
        .collect();
    (encoder, decoder)
}

impl AutoencoderModel {
    pub fn new(input_dim: usize, hidden: &[usize], latent_dim: usize, rng: &mut RngStream) -> Self {
        let dims = encoder_dims(input_dim, hidden, latent_dim);
        let (encoder, decoder) = build(&dims, |a, b, act| DenseLayer::init(a, b, act, rng));
        Self {
            input_dim,
            latent_dim,
            encoder,
            decoder,
        }
    }

    /// All parameters zero; encodes every input to the zero latent.
    pub fn zeros(input_dim: usize, hidden: &[usize], latent_dim: usize) -> Self {
        let dims = encoder_dims(input_dim, hidden, latent_dim);
        let (encoder, decoder) = build(&dims, DenseLayer::zeros);
        Self {
            input_dim,
            latent_dim,
            encoder,
            decoder,
        }
    }

    /// Widths of every layer boundary, encoder input through decoder output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.encoder.iter().chain(&self.decoder).map(|l| l.out_dim));
        dims
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.encoder.is_empty() && self.encoder.len() == self.decoder.len(), || {
            "encoder and decoder must have the same non-zero depth".into()
        })?;
        let dims = self.layer_dims();
        let layers: Vec<&DenseLayer> = self.encoder.iter().chain(&self.decoder).collect();
        for (i, l) in layers.iter().enumerate() {
            l.validate()?;
            ensure(l.in_dim == dims[i], || format!("layer {i} input width {} breaks the chain", l.in_dim))?;
        }
        ensure(self.encoder.last().map(|l| l.out_dim) == Some(self.latent_dim), || {
            "encoder output differs from latent_dim".into()
        })?;
        ensure(*dims.last().expect("dims") == self.input_dim, || "decoder output differs from input".into())?;
        ensure(self.decoder.last().map(|l| l.activation) == Some(Activation::Sigmoid), || {
            "decoder must end in a sigmoid".into()
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(DenseLayer::param_count).sum()
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder.iter().chain(&self.decoder)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure(flat.len() == self.param_count(), || "flat parameter length mismatch".into())?;
        let mut it = flat.iter().copied();
        for l in self.layers_mut() {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn encode_pixels(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        self.encode_batch(pixels, 1)
    }

    pub fn encode_batch(&self, pixels: &[f64], batch: usize) -> Result<Vec<f64>> {
        ensure(pixels.len() == batch * self.input_dim, || {
            format!("expected {} pixels per sample, got {} for batch {batch}", self.input_dim, pixels.len())
        })?;
        let acts = forward_stack(&self.encoder, pixels, batch)?;
        Ok(acts.into_iter().last().expect("non-empty"))
    }

    pub fn encode(&self, frame: &Frame) -> Result<Vec<f64>> {
        ensure(frame.pixels.len() == FRAME_PIXELS && self.input_dim == FRAME_PIXELS, || {
            format!(
                "frame {} has {} pixels; model expects {}",
                frame.source_id,
                frame.pixels.len(),
                self.input_dim
            )
        })?;
        self.encode_pixels(&frame.pixels)
    }

    /// Reconstruction for one latent, values in [0, 1].
    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        ensure(latent.len() == self.latent_dim, || {
            format!("latent has {} values, model uses {}", latent.len(), self.latent_dim)
        })?;
        let acts = forward_stack(&self.decoder, latent, 1)?;
        Ok(acts.into_iter().last().expect("non-empty"))
    }

    pub fn reconstruct_batch(&self, pixels: &[f64], batch: usize) -> Result<Vec<f64>> {
        let latent = self.encode_batch(pixels, batch)?;
        let acts = forward_stack(&self.decoder, &latent, batch)?;
        Ok(acts.into_iter().last().expect("non-empty"))
    }

    /// Mean squared error between `pixels` and their reconstruction.
    pub fn reconstruction_error_pixels(&self, pixels: &[f64]) -> Result<f64> {
        let recon = self.reconstruct_batch(pixels, 1)?;
        Ok(mse(pixels, &recon))
    }

    pub fn reconstruction_error(&self, frame: &Frame) -> Result<f64> {
        ensure(frame.pixels.len() == self.input_dim, || {
            format!("frame {} does not match model input width", frame.source_id)
        })?;
        self.reconstruction_error_pixels(&frame.pixels)
    }

    /// Mean MSE loss over a batch plus gradients for every layer
    /// (encoder layers first, then decoder layers).
    pub fn loss_and_grads(&self, pixels: &[f64], batch: usize) -> Result<(f64, Vec<LayerGrads>)> {
        let mut grads: Vec<LayerGrads> = self.layers().map(LayerGrads::zeros_like).collect();
        let loss = self.accumulate_grads(pixels, batch, &mut grads)?;
        Ok((loss, grads))
    }

    fn accumulate_grads(&self, pixels: &[f64], batch: usize, grads: &mut [LayerGrads]) -> Result<f64> {
        ensure(pixels.len() == batch * self.input_dim && batch > 0, || "batch shape mismatch".into())?;
        let enc_acts = forward_stack(&self.encoder, pixels, batch)?;
        let latent = enc_acts.last().expect("non-empty");
        let dec_acts = forward_stack(&self.decoder, latent, batch)?;
        let recon = dec_acts.last().expect("non-empty");

        let scale = 2.0 / (batch * self.input_dim) as f64;
        let grad_recon: Vec<f64> = recon.iter().zip(pixels).map(|(r, x)| scale * (r - x)).collect();
        let loss = mse(pixels, recon);

        let (enc_grads, dec_grads) = grads.split_at_mut(self.encoder.len());
        let grad_latent = backward_stack(&self.decoder, &dec_acts, grad_recon, batch, dec_grads, true)?
            .expect("input gradient requested");
        backward_stack(&self.encoder, &enc_acts, grad_latent, batch, enc_grads, false)?;
        Ok(loss)
    }
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// Mean loss over a sample set, in fixed-size chunks.
fn dataset_loss(model: &AutoencoderModel, samples: &[&[f64]], chunk: usize) -> Result<f64> {
    let mut total = 0.0;
    for group in samples.chunks(chunk.max(1)) {
        let flat: Vec<f64> = group.iter().flat_map(|s| s.iter().copied()).collect();
        let recon = model.reconstruct_batch(&flat, group.len())?;
        total += mse(&flat, &recon) * group.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains on raw pixel vectors; callers are responsible for the normal-only
/// check (see [`train_autoencoder`]).
pub fn train_autoencoder_on(
    train: &[&[f64]],
    val: &[&[f64]],
    input_dim: usize,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(AutoencoderModel, TrainReport)> {
    ensure(cfg.batch_size > 0 && cfg.latent_dim > 0, || "batch_size and latent_dim must be positive".into())?;
    ensure(
        train.iter().chain(val).all(|s| s.len() == input_dim),
        || format!("every sample must have {input_dim} values"),
    )?;
    let mut rng = RngStream::new(seed);
    let mut model = AutoencoderModel::new(input_dim, &cfg.hidden_dims, cfg.latent_dim, &mut rng);
    let mut opt = NetOptimizer::new(cfg.adam, &model.layers().collect::<Vec<_>>());
    let mut grads: Vec<LayerGrads> = model.layers().map(LayerGrads::zeros_like).collect();

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        epochs_run: 0,
        seed,
        warning: None,
    };
    let mut batch_buf = Vec::with_capacity(cfg.batch_size * input_dim);
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(train.len());
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            batch_buf.clear();
            for &i in idx {
                batch_buf.extend_from_slice(train[i]);
            }
            grads.iter_mut().for_each(LayerGrads::clear);
            let loss = model.accumulate_grads(&batch_buf, idx.len(), &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: epoch,
                    message: format!("non-finite reconstruction loss in epoch {}", epoch + 1),
                });
            }
            epoch_loss += loss * idx.len() as f64;
            let grad_refs: Vec<&LayerGrads> = grads.iter().collect();
            let mut layer_refs: Vec<&mut DenseLayer> = model.layers_mut().collect();
            opt.step(&mut layer_refs, &grad_refs)?;
        }
        report.train_loss.push(epoch_loss / train.len() as f64);
        report.val_loss.push(dataset_loss(&model, val, cfg.batch_size)?);
        report.epochs_run += 1;
    }
    if let (Some(first), Some(last)) = (report.val_loss.first(), report.val_loss.last()) {
        if last > first {
            report.warning = Some(format!(
                "validation loss rose from {first:.6} (epoch 1) to {last:.6} (epoch {})",
                report.epochs_run
            ));
        }
    }
    Ok((model, report))
}

/// Trains on normal train frames, monitoring the normal validation frames.
/// Any anomalous frame in either split is a protocol violation.
pub fn train_autoencoder(
    train: &[Frame],
    val: &[Frame],
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(AutoencoderModel, TrainReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::protocol(
            if train.is_empty() { "train" } else { "val" },
            "training requires non-empty train and validation splits",
        ));
    }
    check_normal_only(train, Path::new(""))?;
    check_normal_only(val, Path::new(""))?;
    let t: Vec<&[f64]> = train.iter().map(|f| f.pixels.as_slice()).collect();
    let v: Vec<&[f64]> = val.iter().map(|f| f.pixels.as_slice()).collect();
    train_autoencoder_on(&t, &v, FRAME_PIXELS, cfg, seed)
}
