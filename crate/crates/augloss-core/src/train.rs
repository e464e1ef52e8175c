//! Deterministic SGD training of the small classifier on augmented tuples.
//!
//! The recipe: SGD with Nesterov momentum, weight decay on weights only,
//! cosine-annealed learning rate by epoch, random horizontal flips, and
//! fixed per-channel input standardization computed once from the clean
//! training set. Training is bitwise reproducible given (dataset, configs,
//! seed).

use crate::augment::{augment_tuple, noaug_tuple, AugmentPolicy, AugmentedTuple};
use crate::data::LabeledImageDataset;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::loss::{augloss_objective, loss_gradient, LossSpec, Posterior, PosteriorTuple};
use crate::model::{Layer, ModelParams};
use crate::rng::{derive_seed, seeded_rng};
use rand::seq::SliceRandom;
use rand::Rng;

const INIT_STREAM: u64 = 0x10;
const SHUFFLE_STREAM: u64 = 0x11;
const FLIP_STREAM: u64 = 0x12;
const AUG_STREAM: u64 = 0x13;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub flip_prob: f64,
    pub standardize_inputs: bool,
    /// Hidden ReLU layer widths; at most two layers.
    pub hidden_sizes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr0: 0.1,
            lr_min: 1e-6,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            flip_prob: 0.5,
            standardize_inputs: true,
            hidden_sizes: vec![256],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr_min <= self.lr0) {
            return Err(Error::invalid("lr_min must not exceed lr0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip_prob must be in [0, 1]"));
        }
        if self.hidden_sizes.len() > 2 {
            return Err(Error::invalid("at most two hidden layers"));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden sizes must be positive"));
        }
        Ok(())
    }
}

/// Per-channel input standardization with statistics frozen at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Computes per-channel mean and standard deviation over every pixel of
    /// every image; a channel with zero spread falls back to std 1.
    pub fn fit(images: &[ImageTensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("cannot fit standardizer on an empty set"))?;
        let c = first.channels();
        let mut sum = vec![0.0; c];
        let mut sum_sq = vec![0.0; c];
        let mut count = vec![0usize; c];
        for img in images {
            for (i, &v) in img.data().iter().enumerate() {
                let ch = i % c;
                sum[ch] += v;
                sum_sq[ch] += v * v;
                count[ch] += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .zip(&count)
            .map(|((sq, m), &n)| {
                let var = (sq / n as f64 - m * m).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    /// Pass-through standardizer.
    pub fn identity(channels: usize) -> Self {
        Standardizer {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Flattens an image into a standardized feature vector.
    pub fn apply(&self, img: &ImageTensor) -> Vec<f64> {
        let c = img.channels();
        debug_assert_eq!(c, self.mean.len());
        img.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

/// Cosine annealing by epoch:
/// `lr_min + (lr0 - lr_min) * (1 + cos(pi * epoch / total)) / 2`.
/// Hits `lr0` at epoch 0 and `lr_min` at `epoch = total_epochs` exactly.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::invalid("total_epochs must be positive"));
    }
    if epoch > total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} beyond total {total_epochs}"
        )));
    }
    if epoch == 0 {
        return Ok(lr0);
    }
    if epoch == total_epochs {
        return Ok(lr_min);
    }
    let t = epoch as f64 / total_epochs as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Mirrors each image left-right independently with probability `prob`.
pub fn random_horizontal_flip(
    batch: &[ImageTensor],
    prob: f64,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::invalid(format!("prob must be in [0, 1], got {prob}")));
    }
    let mut rng = seeded_rng(derive_seed(seed, &[FLIP_STREAM]));
    Ok(batch
        .iter()
        .map(|img| {
            if rng.random_range(0.0..1.0) < prob {
                img.flip_horizontal()
            } else {
                img.clone()
            }
        })
        .collect())
}

/// Momentum buffers plus step bookkeeping; shapes mirror the model.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: Vec<Layer>,
    pub epoch: usize,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            velocity: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in, l.fan_out))
                .collect(),
            epoch: 0,
            step: 0,
        }
    }
}

/// Nesterov momentum update with weight decay added to the weight gradient
/// (biases are not decayed):
/// `g = grad + wd * w; v = mu * v + g; w -= lr * (g + mu * v)`.
pub fn sgd_nesterov_update(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    grads: &[Layer],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((layer, vel), grad) in params.layers.iter_mut().zip(&mut opt.velocity).zip(grads) {
        for ((w, v), &gw) in layer.weight.iter_mut().zip(&mut vel.weight).zip(&grad.weight) {
            let g = gw + weight_decay * *w;
            *v = momentum * *v + g;
            *w -= lr * (g + momentum * *v);
        }
        for ((b, v), &gb) in layer.bias.iter_mut().zip(&mut vel.bias).zip(&grad.bias) {
            let g = gb;
            *v = momentum * *v + g;
            *b -= lr * (g + momentum * *v);
        }
    }
}

fn zero_grads(params: &ModelParams) -> Vec<Layer> {
    params
        .layers
        .iter()
        .map(|l| Layer::zeros(l.fan_in, l.fan_out))
        .collect()
}

/// Backpropagates one logit-space gradient row through the network,
/// accumulating into `grads`.
fn backprop_into(
    params: &ModelParams,
    trace: &[Vec<f64>],
    logit_grad: &[f64],
    grads: &mut [Layer],
) {
    let mut dz = logit_grad.to_vec();
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let activations = &trace[li];
        let g = &mut grads[li];
        for (i, &a) in activations.iter().enumerate() {
            if a != 0.0 {
                let row = &mut g.weight[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (gw, &d) in row.iter_mut().zip(&dz) {
                    *gw += a * d;
                }
            }
        }
        for (gb, &d) in g.bias.iter_mut().zip(&dz) {
            *gb += d;
        }
        if li > 0 {
            let mut da = vec![0.0; layer.fan_in];
            for (i, dai) in da.iter_mut().enumerate() {
                let row = &layer.weight[i * layer.fan_out..(i + 1) * layer.fan_out];
                *dai = row.iter().zip(&dz).map(|(&w, &d)| w * d).sum();
            }
            // ReLU mask: trace[li] stores post-activation values
            for (dai, &a) in da.iter_mut().zip(&trace[li]) {
                if a == 0.0 {
                    *dai = 0.0;
                }
            }
            dz = da;
        }
    }
}

/// Mean objective and mean parameter gradient over a batch of tuples,
/// without touching the parameters.
///
/// The base loss flows through the original view only; the consistency term
/// flows through all three views. Degenerate tuples (all members identical)
/// and `lambda = 0` short-circuit to the single-view path, which is exact
/// because the consistency term and its gradient vanish there.
pub fn batch_gradient(
    params: &ModelParams,
    standardizer: &Standardizer,
    batch: &[(AugmentedTuple, usize)],
    spec: &LossSpec,
) -> Result<(f64, Vec<Layer>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut grads = zero_grads(params);
    let mut total_loss = 0.0;
    for (tuple, label) in batch {
        let degenerate = tuple.aug1 == tuple.orig && tuple.aug2 == tuple.orig;
        let single_view = spec.lambda == 0.0 || degenerate;
        let members: &[&ImageTensor] = if single_view {
            &[&tuple.orig][..]
        } else {
            &[&tuple.orig, &tuple.aug1, &tuple.aug2][..]
        };
        let mut traces = Vec::with_capacity(members.len());
        let mut logit_rows = Vec::with_capacity(members.len());
        for img in members {
            let features = standardizer.apply(img);
            let (trace, logits) = params.forward_trace(&features)?;
            traces.push(trace);
            logit_rows.push(logits);
        }
        let effective = if single_view {
            LossSpec {
                family: spec.family,
                lambda: 0.0,
            }
        } else {
            *spec
        };
        let posteriors: Vec<Posterior> = logit_rows
            .iter()
            .map(|row| Posterior::from_logits(row))
            .collect::<Result<_>>()?;
        let tuple_p = if single_view {
            let orig = posteriors[0].clone();
            PosteriorTuple::new(orig.clone(), vec![orig.clone(), orig])?
        } else {
            PosteriorTuple::new(posteriors[0].clone(), posteriors[1..].to_vec())?
        };
        // js_consistency of identical members is 0, so the objective equals
        // the single-view value exactly.
        total_loss += augloss_objective(&tuple_p, *label, spec)?;
        let logit_grads = loss_gradient(&effective, &logit_rows, *label)?;
        for (trace, row) in traces.iter().zip(&logit_grads) {
            backprop_into(params, trace, row, &mut grads);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in grads.iter_mut() {
        for w in g.weight.iter_mut() {
            *w *= scale;
        }
        for b in g.bias.iter_mut() {
            *b *= scale;
        }
    }
    Ok((total_loss * scale, grads))
}

/// One SGD step on a batch of augmented tuples; returns the batch mean loss.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &[(AugmentedTuple, usize)],
    spec: &LossSpec,
    lr: f64,
    config: &TrainConfig,
    standardizer: &Standardizer,
) -> Result<f64> {
    let (loss, grads) = batch_gradient(params, standardizer, batch, spec)?;
    if !loss.is_finite() {
        return Err(Error::Training {
            step: opt.step,
            message: format!("non-finite batch loss {loss}"),
        });
    }
    for g in &grads {
        if g.weight.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(Error::Training {
                step: opt.step,
                message: "non-finite gradient".into(),
            });
        }
    }
    sgd_nesterov_update(params, opt, &grads, lr, config.momentum, config.weight_decay);
    opt.step += 1;
    Ok(loss)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_error: Option<f64>,
    pub lr: f64,
}

/// Loss / validation history across epochs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<EpochStats>,
}

impl TrainHistory {
    /// CSV with header `epoch,mean_loss,val_error,lr`; `val_error` is empty
    /// when no validation set was supplied.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,val_error,lr\n");
        for row in &self.rows {
            let val = row
                .val_error
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{:.6},{},{:.8}\n",
                row.epoch, row.mean_loss, val, row.lr
            ));
        }
        out
    }
}

/// Everything needed to run inference later: parameters plus the frozen
/// input statistics.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub standardizer: Standardizer,
}

/// Full training loop: seeded shuffling, per-epoch cosine learning rate,
/// horizontal flips, fresh augmentation each epoch, and the Nesterov update.
/// `policy = None` trains without augmentation (degenerate tuples).
pub fn train(
    train_set: &LabeledImageDataset,
    val_set: Option<&LabeledImageDataset>,
    config: &TrainConfig,
    spec: &LossSpec,
    policy: Option<&AugmentPolicy>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if let Some(p) = policy {
        p.validate()?;
    }
    let (h, w, c) = train_set.images[0].shape();
    let input_dim = h * w * c;
    let mut sizes = vec![input_dim];
    sizes.extend(&config.hidden_sizes);
    sizes.push(train_set.k());

    let standardizer = if config.standardize_inputs {
        Standardizer::fit(&train_set.images)?
    } else {
        Standardizer::identity(c)
    };
    let mut params = ModelParams::init_he(&sizes, derive_seed(config.seed, &[INIT_STREAM]))?;
    let mut opt = OptimizerState::new(&params);
    let mut history = TrainHistory::default();

    let n = train_set.len();
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)?;
        let mut rng = seeded_rng(derive_seed(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let images: Vec<ImageTensor> = chunk
                .iter()
                .map(|&i| train_set.images[i].clone())
                .collect();
            let flipped = random_horizontal_flip(
                &images,
                config.flip_prob,
                derive_seed(config.seed, &[FLIP_STREAM, epoch as u64, batch_idx as u64]),
            )?;
            let batch: Vec<(AugmentedTuple, usize)> = flipped
                .iter()
                .zip(chunk)
                .map(|(img, &i)| {
                    let label = train_set.labels.labels()[i];
                    let tuple = match policy {
                        Some(p) => augment_tuple(
                            img,
                            p,
                            derive_seed(config.seed, &[AUG_STREAM, epoch as u64, i as u64]),
                        )?,
                        None => noaug_tuple(img),
                    };
                    Ok((tuple, label))
                })
                .collect::<Result<_>>()?;
            let loss = train_step(&mut params, &mut opt, &batch, spec, lr, config, &standardizer)?;
            loss_sum += loss * chunk.len() as f64;
        }
        opt.epoch = epoch + 1;

        let val_error = match val_set {
            Some(vs) => Some(crate::eval::clean_error(&params, &standardizer, vs)?),
            None => None,
        };
        history.rows.push(EpochStats {
            epoch,
            mean_loss: loss_sum / n as f64,
            val_error,
            lr,
        });
    }
    Ok(TrainOutcome {
        params,
        history,
        standardizer,
    })
}
