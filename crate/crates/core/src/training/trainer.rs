use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentationConfig};
use super::loss::{focal_loss_on_tape, present_class_weights, FocalLossConfig};
use super::optimizer::{RmsProp, RmsPropConfig};
use crate::domain::{QualityLabel, SliceImage, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nrnet::{Checkpoint, Mode, NRNet, NRNetConfig};
use crate::tensor::{Tape, Tensor};

/// Every hyperparameter of a training run; serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NRNetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of each class held out for validation.
    pub validation_fraction: f64,
    pub optimizer: RmsPropConfig,
    pub loss: FocalLossConfig,
    pub augmentation: AugmentationConfig,
    /// Slices per inference batch during evaluation.
    pub eval_batch: usize,
}

impl TrainConfig {
    /// Optimizer and loss defaults at full scale (256x256 canvas).
    pub fn standard() -> Self {
        TrainConfig {
            network: NRNetConfig::tiny(256),
            epochs: 30,
            batch_size: 16,
            validation_fraction: 0.1,
            optimizer: RmsPropConfig::default(),
            loss: FocalLossConfig::default(),
            augmentation: AugmentationConfig::default(),
            eval_batch: 64,
        }
    }

    /// Desk-scale run: tiny network on `input_size` canvases with a larger
    /// step size, since a few thousand slices and a few epochs are far too
    /// little for the full-scale rate.
    pub fn desk(input_size: usize) -> Self {
        TrainConfig {
            network: NRNetConfig::tiny(input_size),
            epochs: 8,
            optimizer: RmsPropConfig {
                learning_rate: 1e-3,
                ..RmsPropConfig::default()
            },
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.augmentation.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config(
                "epochs and batch sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0,1)".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-class stratified split. Each class contributes `round(n_c * fraction)`
/// samples to the validation side; both sides keep input order.
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[QualityLabel],
    fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut val = Vec::new();
    for class in QualityLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let take = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..take]);
    }
    val.sort_unstable();
    let mut is_val = vec![false; labels.len()];
    val.iter().for_each(|&i| is_val[i] = true);
    let train = (0..labels.len()).filter(|&i| !is_val[i]).collect();
    (train, val)
}

pub fn label_counts(labels: impl IntoIterator<Item = QualityLabel>) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    labels.into_iter().for_each(|l| counts[l.index()] += 1);
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchResult {
    pub loss: f64,
    pub correct: usize,
}

/// One network plus its optimizer state and loss settings.
pub struct Trainer {
    pub network: NRNet<f32>,
    pub optimizer: RmsProp<f32>,
    pub loss: FocalLossConfig,
    pub alpha: [f64; NUM_CLASSES],
}

impl Trainer {
    pub fn new(
        network: NRNet<f32>,
        optimizer: RmsPropConfig,
        loss: FocalLossConfig,
        alpha: [f64; NUM_CLASSES],
    ) -> Self {
        let optimizer = RmsProp::new(optimizer, network.params());
        Trainer {
            network,
            optimizer,
            loss,
            alpha,
        }
    }

    /// Forward, loss, backward and one optimizer step on a batch; batchnorm
    /// running statistics are updated from the batch. Returns the loss before
    /// the step.
    pub fn train_batch(
        &mut self,
        images: &[&SliceImage],
        labels: &[QualityLabel],
    ) -> Result<BatchResult> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(Error::invalid(
                "batch needs matching, non-empty images and labels",
            ));
        }
        let batch = self.network.batch_tensor(images)?;
        let mut tape = Tape::new();
        let vars = self.network.bind(&mut tape);
        let x = tape.leaf(batch);
        let out = self.network.forward(&mut tape, x, &vars, Mode::Train)?;
        let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let weight_vars: Vec<_> = self
            .network
            .weight_ids()
            .into_iter()
            .map(|i| vars[i])
            .collect();
        let loss = focal_loss_on_tape(
            &mut tape,
            out.probs,
            &targets,
            &self.alpha,
            &self.loss,
            &weight_vars,
        )?;
        let loss_value = tape.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::invalid("training loss diverged"));
        }
        let correct = tape
            .value(out.probs)
            .data()
            .chunks_exact(NUM_CLASSES)
            .zip(&targets)
            .filter(|(p, &t)| argmax_f32(p) == t)
            .count();
        let grads = tape.backward(loss)?;
        let params = self.network.params_mut();
        params.iter_mut().for_each(|p| p.zero_grad());
        for (id, g) in grads.params() {
            params[id].grad = g.clone();
        }
        self.optimizer.step(params)?;
        self.network.update_running_stats(&out.batch_stats)?;
        Ok(BatchResult {
            loss: loss_value,
            correct,
        })
    }
}

fn argmax_f32(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode predictions in batches of `batch`. Batches are spread over
/// the available cores; the result does not depend on the thread count since
/// the batch boundaries are fixed and inference is per-sample.
pub fn predict_all(
    network: &NRNet<f32>,
    images: &[&SliceImage],
    batch: usize,
) -> Result<Vec<crate::domain::SlicePrediction>> {
    let batches: Vec<&[&SliceImage]> = images.chunks(batch.max(1)).collect();
    if batches.is_empty() {
        return Ok(Vec::new());
    }
    let workers = std::thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(batches.len());
    let per_worker = batches.len().div_ceil(workers);
    let parts: Vec<Result<Vec<_>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batches
            .chunks(per_worker)
            .map(|group| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for b in group {
                        out.extend(network.predict_batch(b)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(images.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Accuracy and mean unregularized focal loss against `labels`.
pub fn evaluate(
    network: &NRNet<f32>,
    images: &[&SliceImage],
    labels: &[QualityLabel],
    config: &TrainConfig,
    alpha: &[f64; NUM_CLASSES],
) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let preds = predict_all(network, images, config.eval_batch)?;
    let mut correct = 0;
    let mut loss = 0.0;
    for (p, &l) in preds.iter().zip(labels) {
        correct += usize::from(p.label() == l);
        loss += crate::tensor::focal_term(p.probability(l), alpha[l.index()], config.loss.kappa).0;
    }
    let n = images.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

impl EpochMetrics {
    pub fn to_key_values(&self) -> String {
        format!(
            "epoch={} train_loss={:.6} train_accuracy={:.4} val_loss={:.6} val_accuracy={:.4} lr={:.3e}",
            self.epoch, self.train_loss, self.train_accuracy, self.val_loss, self.val_accuracy, self.learning_rate
        )
    }
}

pub struct TrainOutcome {
    /// Weights of the epoch with the best validation accuracy (ties go to the
    /// lower validation loss, then the later epoch).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainOutcome {
    pub fn history_text(&self) -> String {
        let mut s = String::new();
        for m in &self.history {
            let _ = writeln!(s, "{}", m.to_key_values());
        }
        s
    }

    pub fn best(&self) -> &EpochMetrics {
        &self.history[self.best_epoch - 1]
    }
}

/// Trains on `images`/`labels` with a stratified hold-out split, starting
/// from `init` when given (fine-tuning) or fresh weights otherwise.
pub fn train(
    images: &[&SliceImage],
    labels: &[QualityLabel],
    config: &TrainConfig,
    init: Option<NRNet<f32>>,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if images.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, val_idx) = stratified_split(labels, config.validation_fraction, &mut rng);
    run(images, labels, train_idx, val_idx, config, init, rng, seed)
}

/// Like [`train`] but with a caller-chosen validation set; every image in
/// `images` is used for training.
pub fn train_with_validation(
    images: &[&SliceImage],
    labels: &[QualityLabel],
    val_images: &[&SliceImage],
    val_labels: &[QualityLabel],
    config: &TrainConfig,
    init: Option<NRNet<f32>>,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if images.len() != labels.len() || val_images.len() != val_labels.len() {
        return Err(Error::invalid("image and label counts differ"));
    }
    let all: Vec<&SliceImage> = images.iter().chain(val_images).copied().collect();
    let all_labels: Vec<QualityLabel> = labels.iter().chain(val_labels).copied().collect();
    let train_idx = (0..images.len()).collect();
    let val_idx = (images.len()..all.len()).collect();
    run(
        &all,
        &all_labels,
        train_idx,
        val_idx,
        config,
        init,
        ChaCha8Rng::seed_from_u64(seed),
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
fn run(
    images: &[&SliceImage],
    labels: &[QualityLabel],
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    config: &TrainConfig,
    init: Option<NRNet<f32>>,
    mut rng: ChaCha8Rng,
    seed: u64,
) -> Result<TrainOutcome> {
    let alpha = present_class_weights(label_counts(train_idx.iter().map(|&i| labels[i])))?;
    let network = match init {
        Some(net) => {
            if net.config().input_size != config.network.input_size {
                return Err(Error::shape("initial network has a different input size"));
            }
            net
        }
        None => NRNet::new(config.network.clone(), rng.random())?,
    };
    let mut trainer = Trainer::new(network, config.optimizer, config.loss, alpha);
    let val_images: Vec<&SliceImage> = val_idx.iter().map(|&i| images[i]).collect();
    let val_labels: Vec<QualityLabel> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, f64, NRNet<f32>)> = None;
    let mut order = train_idx.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0, 0);
        let lr = trainer.optimizer.lr_at(trainer.optimizer.steps());
        for chunk in order.chunks(config.batch_size) {
            let augmented: Vec<SliceImage> = chunk
                .iter()
                .map(|&i| augment(images[i], &config.augmentation, &mut rng))
                .collect();
            let refs: Vec<&SliceImage> = augmented.iter().collect();
            let batch_labels: Vec<QualityLabel> = chunk.iter().map(|&i| labels[i]).collect();
            let r = trainer.train_batch(&refs, &batch_labels)?;
            loss_sum += r.loss;
            correct += r.correct;
            batches += 1;
        }
        let (val_accuracy, val_loss) =
            evaluate(&trainer.network, &val_images, &val_labels, config, &alpha)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            train_accuracy: correct as f64 / order.len().max(1) as f64,
            val_loss,
            val_accuracy,
            learning_rate: lr,
        });
        // without a validation set the latest epoch wins
        let better = match &best {
            None => true,
            Some(_) if val_images.is_empty() => true,
            Some((_, acc, loss, _)) => {
                val_accuracy > *acc || (val_accuracy == *acc && val_loss <= *loss)
            }
        };
        if better {
            best = Some((epoch, val_accuracy, val_loss, trainer.network.clone()));
        }
    }
    let (best_epoch, _, _, network) = best.expect("at least one epoch");
    let mut checkpoint = Checkpoint::new(network);
    let settings = [
        ("epochs", config.epochs.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("learning_rate", config.optimizer.learning_rate.to_string()),
        ("lr_decay", config.optimizer.decay.to_string()),
        ("rmsprop_rho", config.optimizer.rho.to_string()),
        ("rmsprop_epsilon", config.optimizer.epsilon.to_string()),
        ("focal_kappa", config.loss.kappa.to_string()),
        ("l2_lambda", config.loss.lambda_reg.to_string()),
        ("seed", seed.to_string()),
        ("best_epoch", best_epoch.to_string()),
    ];
    for (k, v) in settings {
        checkpoint.settings.insert(k.to_string(), v);
    }
    Ok(TrainOutcome {
        checkpoint,
        history,
        best_epoch,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Convenience for callers holding owned images.
pub fn refs(images: &[SliceImage]) -> Vec<&SliceImage> {
    images.iter().collect()
}

/// Stacks slices into an `[n, 1, h, w]` `f64` tensor.
pub fn to_tensor64(images: &[&SliceImage]) -> Result<Tensor<f64>> {
    let first = images.first().ok_or_else(|| Error::invalid("no images"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::shape("images differ in size"));
        }
        data.extend(img.data().iter().map(|&v| v as f64));
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified() {
        let mut labels = vec![QualityLabel::Pass; 50];
        labels.extend(vec![QualityLabel::Questionable; 30]);
        labels.extend(vec![QualityLabel::Fail; 20]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, val) = stratified_split(&labels, 0.1, &mut rng);
        assert_eq!(train.len() + val.len(), 100);
        assert_eq!(label_counts(val.iter().map(|&i| labels[i])), [5, 3, 2]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig::desk(32);
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn single_class_is_degenerate() {
        let img = SliceImage::zeros(16, 16);
        let images = vec![&img; 4];
        let labels = vec![QualityLabel::Pass; 4];
        let mut cfg = TrainConfig::desk(16);
        cfg.epochs = 1;
        assert!(matches!(
            train(&images, &labels, &cfg, None, 0),
            Err(Error::DegenerateClass(_))
        ));
    }
}
