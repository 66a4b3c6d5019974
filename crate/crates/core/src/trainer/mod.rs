//! Embedding network, optimizer, mini-batch sampling, the training loop with
//! validation checkpointing, and pair-constrained fine-tuning.

mod checkpoint;
mod mlp;
mod sgd;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Architecture, Dense, ForwardCache, Gradients, MlpModel, INITIAL_B, LAYER_COUNT};
pub use sgd::{Momentum, MomentumVec};

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clusterer::{cut_threshold, hac_complete, select_threshold_on_validation, ClusterAssignment};
use crate::data::{embed_tracks, random_half_mean, PairSet, TrackDataset};
use crate::error::{Error, Result};
use crate::geometry::Matrix;
use crate::losses::{
    bcl_loss_with_policy, contrastive_loss, cross_entropy_loss, finetune_pair_loss, ldml_loss, prototypical_loss,
    triplet_loss, BallParams, Classifier, DegeneratePolicy, FinetunePair, LabeledBatch, LossKind, DEFAULT_ALPHA,
    DEFAULT_EPSILON, DEFAULT_TRIPLET_MARGIN,
};
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning-rate factor applied every 10 epochs.
    pub lr_decay: f64,
    /// The raw radius learns at this multiple of the current learning rate.
    pub radius_lr_scale: f64,
    /// Epochs during which the raw radius does not move.
    pub radius_freeze_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub triplet_margin: f64,
    /// Ball offsets of the prototypical loss.
    pub proto_b: f64,
    pub proto_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            momentum: 0.9,
            lr_decay: 0.9,
            radius_lr_scale: 0.1,
            radius_freeze_epochs: 5,
            batch_size: 2000,
            epochs: 100,
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            loss: LossKind::Bcl,
            triplet_margin: DEFAULT_TRIPLET_MARGIN,
            proto_b: 0.0,
            proto_gamma: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.lr_decay > 0.0) || !(self.radius_lr_scale >= 0.0) {
            return Err(Error::invalid(
                "lr decay must be positive and radius scale non-negative",
            ));
        }
        if !(self.epsilon >= 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha and epsilon must be non-negative"));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch.saturating_sub(1) / 10) as i32)
    }

    pub fn radius_lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.radius_freeze_epochs {
            0.0
        } else {
            self.lr_at(epoch) * self.radius_lr_scale
        }
    }
}

/// Network inputs of a mini-batch.
#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub inputs: Matrix,
    /// Dense `[0, K)` labels in order of first appearance.
    pub labels: Vec<usize>,
    /// Dataset identity labels.
    pub identities: Vec<usize>,
    pub tracks: Vec<usize>,
}

/// `size` distinct tracks drawn uniformly, one uniformly drawn frame each.
pub fn sample_batch(dataset: &TrackDataset, size: usize, rng: &mut impl Rng) -> Result<SampledBatch> {
    if size == 0 || size > dataset.len() {
        return Err(Error::invalid(format!(
            "batch of {size} tracks from a dataset of {}",
            dataset.len()
        )));
    }
    let tracks = sample(rng, dataset.len(), size).into_vec();
    let mut inputs = Matrix::zeros(size, dataset.input_dim());
    let mut identities = Vec::with_capacity(size);
    for (row, &t) in tracks.iter().enumerate() {
        let track = &dataset.tracks()[t];
        let f = rng.random_range(0..track.frames.len());
        for (dst, v) in inputs.row_mut(row).iter_mut().zip(&track.frames[f]) {
            *dst = *v as f64;
        }
        identities.push(track.label);
    }
    let labels = ClusterAssignment::from_labels(&identities).labels().to_vec();
    Ok(SampledBatch {
        inputs,
        labels,
        identities,
        tracks,
    })
}

/// Loss value and gradients of one mini-batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: Gradients,
    /// Classifier-head gradients for the cross-entropy loss.
    pub head: Option<(Matrix, Vec<f64>)>,
}

/// Forward, loss and backward for one batch. The model's raw radius is the
/// loss's trainable scalar where it has one.
pub fn loss_gradients(
    model: &MlpModel,
    batch: &SampledBatch,
    config: &TrainConfig,
    head: Option<&Classifier>,
) -> Result<StepOutput> {
    let cache = model.forward_cached(&batch.inputs)?;
    let space = model.space();
    let raw = model.raw_radius();
    let mut head_grads = None;
    let out = if config.loss == LossKind::Ce {
        let head = head.ok_or_else(|| Error::invalid("cross-entropy needs a classifier head"))?;
        let ce = cross_entropy_loss(cache.output(), &batch.identities, head)?;
        head_grads = Some((ce.grad_weights, ce.grad_bias));
        ce.loss
    } else {
        let lb = LabeledBatch::new(cache.output().clone(), batch.labels.clone())?;
        match config.loss {
            LossKind::Bcl => {
                let params = BallParams::new(raw, config.epsilon, config.alpha);
                bcl_loss_with_policy(&lb, &params, space, DegeneratePolicy::SkipCluster)?
            }
            LossKind::Contrastive => contrastive_loss(&lb, raw, space)?,
            LossKind::Ldml => ldml_loss(&lb, raw, space)?,
            LossKind::Triplet => triplet_loss(&lb, config.triplet_margin, space)?,
            LossKind::Proto => prototypical_loss(&lb, config.proto_b, config.proto_gamma, space)?,
            LossKind::Ce => unreachable!(),
        }
    };
    let grads = model.backward(&cache, &out.grad_embeddings, out.grad_raw)?;
    Ok(StepOutput {
        loss: out.value,
        grads,
        head: head_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub tau: f64,
    pub num_clusters: usize,
    pub nmi: f64,
    pub wcp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    /// Squared radius after the epoch.
    pub b: f64,
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the returned model: best validation NMI (earliest on ties),
    /// the last epoch without validation, 0 when no epoch ran.
    pub best_epoch: usize,
}

impl TrainReport {
    /// `epoch,loss,b,tau,num_clusters,nmi,wcp`; validation columns are empty
    /// when no validation set was given. Metrics are percentages.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,b,tau,num_clusters,nmi,wcp\n");
        for r in &self.epochs {
            let _ = write!(s, "{},{:?},{:?}", r.epoch, r.loss, r.b);
            match r.validation {
                Some(v) => {
                    let _ = writeln!(
                        s,
                        ",{:?},{},{:.4},{:.4}",
                        v.tau,
                        v.num_clusters,
                        100.0 * v.nmi,
                        100.0 * v.wcp
                    );
                }
                None => s.push_str(",,,,\n"),
            }
        }
        s
    }
}

/// Stopping threshold for clustering embeddings of a model trained with
/// `loss`: `4b` for the ball loss, otherwise the threshold that reproduces
/// the known number of identities on `embeddings`.
pub fn clustering_threshold(model: &MlpModel, loss: LossKind, embeddings: &Matrix, true_k: usize) -> Result<f64> {
    if loss.learns_threshold() {
        Ok(4.0 * model.b())
    } else {
        select_threshold_on_validation(embeddings, true_k)
    }
}

/// Embeds, clusters and scores a labelled dataset.
pub fn validate(model: &MlpModel, loss: LossKind, val: &TrackDataset) -> Result<ValidationRecord> {
    let emb = embed_tracks(model, val)?;
    let tau = clustering_threshold(model, loss, &emb, val.present_identities())?;
    let pred = cut_threshold(&hac_complete(&emb)?, tau);
    let m = metrics::evaluate(&pred, &val.labels())?;
    Ok(ValidationRecord {
        tau,
        num_clusters: m.num_clusters,
        nmi: m.nmi,
        wcp: m.wcp,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub report: TrainReport,
}

/// SGD with momentum over `config.epochs` epochs of `ceil(tracks / batch)`
/// freshly sampled batches each.
pub fn train(
    dataset: &TrackDataset,
    val: Option<&TrackDataset>,
    mut model: MlpModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if dataset.input_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: dataset.input_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head =
        (config.loss == LossKind::Ce).then(|| Classifier::init(dataset.identity_count(), model.output_dim(), &mut rng));
    let mut head_opt = head.as_ref().map(|h| {
        (
            MomentumVec::new(h.weights.as_slice().len(), config.momentum),
            MomentumVec::new(h.bias.len(), config.momentum),
        )
    });
    let mut opt = Momentum::new(&model, config.momentum);
    let batch_size = config.batch_size.min(dataset.len());
    let batches = dataset.len().div_ceil(batch_size);

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, MlpModel)> = None;
    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        let radius_lr = config.radius_lr_at(epoch);
        let mut total = 0.0;
        for batch_idx in 0..batches {
            let batch = sample_batch(dataset, batch_size, &mut rng)?;
            let mut step = loss_gradients(&model, &batch, config, head.as_ref())?;
            if !step.loss.is_finite() || !step.grads.is_finite() {
                return Err(Error::NumericalFailure {
                    epoch,
                    batch: batch_idx,
                    loss: step.loss,
                    param_norms: model.parameter_norms(),
                });
            }
            if radius_lr == 0.0 {
                step.grads.raw_radius = 0.0;
            }
            opt.step(&mut model, &step.grads, lr, radius_lr);
            if let (Some(h), Some((ow, ob)), Some((gw, gb))) = (head.as_mut(), head_opt.as_mut(), step.head.as_ref()) {
                ow.step(h.weights.as_mut_slice(), gw.as_slice(), lr);
                ob.step(&mut h.bias, gb, lr);
            }
            if !model.is_finite() {
                return Err(Error::NumericalFailure {
                    epoch,
                    batch: batch_idx,
                    loss: step.loss,
                    param_norms: model.parameter_norms(),
                });
            }
            debug_assert!(model.b() > 0.0);
            total += step.loss;
        }
        let validation = match val {
            Some(v) => Some(validate(&model, config.loss, v)?),
            None => None,
        };
        if let Some(v) = validation {
            if best.as_ref().is_none_or(|(nmi, _, _)| v.nmi > *nmi) {
                best = Some((v.nmi, epoch, model.clone()));
            }
        }
        records.push(EpochRecord {
            epoch,
            loss: total / batches as f64,
            b: model.b(),
            validation,
        });
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, config.epochs),
    };
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            epochs: records,
            best_epoch,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub epsilon: f64,
    /// Upper bound on pairs per iteration, split evenly between positives and
    /// negatives.
    pub pairs_per_iteration: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0003,
            momentum: 0.9,
            iterations: 2000,
            epsilon: DEFAULT_EPSILON,
            pairs_per_iteration: 64,
            seed: 0,
        }
    }
}

/// SGD on the pair loss with the radius frozen at `tau = 4b`. Each
/// iteration redraws the inputs: two random-half means for a positive, one
/// random frame per track for a negative.
pub fn finetune(
    mut model: MlpModel,
    dataset: &TrackDataset,
    pairs: &PairSet,
    config: &FinetuneConfig,
) -> Result<MlpModel> {
    if pairs.is_empty() {
        return Err(Error::invalid("fine-tuning needs at least one pair"));
    }
    if !(config.learning_rate > 0.0) || !(0.0..1.0).contains(&config.momentum) || config.pairs_per_iteration < 2 {
        return Err(Error::invalid("bad fine-tuning configuration"));
    }
    let n = dataset.len();
    let in_range = |t: usize| t < n;
    if !pairs
        .positives
        .iter()
        .all(|p| in_range(p.track_a) && in_range(p.track_b))
        || !pairs
            .negatives
            .iter()
            .all(|&(a, b)| in_range(a) && in_range(b) && a != b)
    {
        return Err(Error::invalid(
            "pair refers to a missing track or pairs a track with itself",
        ));
    }
    let tau = 4.0 * model.b();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Momentum::new(&model, config.momentum);
    let half = config.pairs_per_iteration / 2;
    let tracks = dataset.tracks();
    for it in 0..config.iterations {
        let pos: Vec<usize> = pick(pairs.positives.len(), half, &mut rng);
        let neg: Vec<usize> = pick(pairs.negatives.len(), half, &mut rng);
        let rows = 2 * (pos.len() + neg.len());
        let mut inputs = Matrix::zeros(rows, dataset.input_dim());
        let mut constraints = Vec::with_capacity(rows / 2);
        let mut r = 0;
        for &p in &pos {
            let pair = pairs.positives[p];
            inputs
                .row_mut(r)
                .copy_from_slice(&random_half_mean(&tracks[pair.track_a], &mut rng));
            inputs
                .row_mut(r + 1)
                .copy_from_slice(&random_half_mean(&tracks[pair.track_b], &mut rng));
            constraints.push(FinetunePair {
                a: r,
                b: r + 1,
                positive: true,
                orig_sq_dist: pair.orig_sq_dist,
            });
            r += 2;
        }
        for &q in &neg {
            let (a, b) = pairs.negatives[q];
            for (row, t) in [(r, a), (r + 1, b)] {
                let track = &tracks[t];
                let f = rng.random_range(0..track.frames.len());
                for (dst, v) in inputs.row_mut(row).iter_mut().zip(&track.frames[f]) {
                    *dst = *v as f64;
                }
            }
            constraints.push(FinetunePair {
                a: r,
                b: r + 1,
                positive: false,
                orig_sq_dist: 0.0,
            });
            r += 2;
        }
        let cache = model.forward_cached(&inputs)?;
        let out = finetune_pair_loss(cache.output(), &constraints, tau, config.epsilon)?;
        let grads = model.backward(&cache, &out.grad_embeddings, 0.0)?;
        if !out.value.is_finite() || !grads.is_finite() {
            return Err(Error::NumericalFailure {
                epoch: 0,
                batch: it,
                loss: out.value,
                param_norms: model.parameter_norms(),
            });
        }
        opt.step(&mut model, &grads, config.learning_rate, 0.0);
    }
    Ok(model)
}

/// `min(len, k)` distinct indices in increasing order.
fn pick(len: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    let mut v = sample(rng, len, k).into_vec();
    v.sort_unstable();
    v
}
