use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, AdamW, OptimizerState};
use super::{cosine_lr, smooth_targets, TrainConfig, TrainError};
use crate::backbone::StageModel;
use crate::data::{train_transforms, val_transforms, Sample, Split};
use crate::labels::Stage;
use crate::metrics::{report, ClassificationReport};
use crate::tensor::{GradTape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// CSV with columns `epoch,lr,train_loss,val_acc,val_macro_f1`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}

pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub model: StageModel<f32>,
    pub history: TrainHistory,
    /// 1-based epoch the model was taken from.
    pub best_epoch: usize,
}

fn check_labels(samples: &[Sample], split: Split) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    match samples.iter().find(|s| s.label > 1) {
        Some(s) => Err(TrainError::Label(s.label)),
        None => Ok(()),
    }
}

/// Argmax predictions over `samples` with validation preprocessing. Exact
/// ties go to the lower class index.
pub fn predict(model: &StageModel<f32>, samples: &[Sample], batch_size: usize) -> Result<Vec<usize>, TrainError> {
    let res = model.config().input_resolution;
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut images = Vec::with_capacity(chunk.len());
        for s in chunk {
            let img = s.image.load()?;
            images.push(val_transforms(&img, res));
        }
        let logits = model.forward(&Tensor::stack(&images)?)?;
        preds.extend(logits.data().chunks(2).map(|l| usize::from(l[1] > l[0])));
    }
    Ok(preds)
}

pub fn evaluate(
    model: &StageModel<f32>,
    stage: Stage,
    samples: &[Sample],
    batch_size: usize,
) -> Result<ClassificationReport, TrainError> {
    let preds = predict(model, samples, batch_size)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(report(&preds, &truth, &stage.class_names())?)
}

/// Trains `model` for `cfg.epochs` epochs and returns the parameters of the
/// epoch with the best validation accuracy (then macro-F1, then earliest).
pub fn train_stage(
    stage: Stage,
    mut model: StageModel<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_labels(train, Split::Train)?;
    check_labels(val, Split::Val)?;
    model.set_stage(Some(stage));
    if cfg.head_only {
        model.freeze_backbone();
    } else {
        model.unfreeze_all();
    }
    let res = model.config().input_resolution;
    let opt = AdamW::new(cfg.weight_decay);
    let mut state = OptimizerState::new(model.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let targets: Vec<Vec<f32>> = (0..2)
        .map(|c| smooth_targets(c, 2, cfg.label_smoothing).map(|t| t.into_iter().map(|v| v as f32).collect()))
        .collect::<Result<_, _>>()?;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, f64, usize, StageModel<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch as f64, cfg)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let mut soft = Vec::with_capacity(2 * batch.len());
            for &i in batch {
                let img = train[i].image.load()?;
                images.push(train_transforms(&img, res, &cfg.augment, &mut rng));
                soft.extend_from_slice(&targets[train[i].label]);
            }
            let tape = GradTape::new();
            let params = model.params().bind(&tape, true);
            let x = tape.constant(Tensor::stack(&images)?);
            let logits = model.forward_on(&tape, &params, &x)?;
            let loss = tape.soft_cross_entropy(&logits, &Tensor::new([batch.len(), 2], soft)?)?;
            let grads = tape.backward(&loss)?;
            let grads: Vec<_> = params.vars().iter().map(|v| grads.get(v).cloned()).collect();
            adamw_step(model.params_mut(), &grads, &mut state, lr, &opt)?;
            loss_sum += loss.value().item().expect("scalar loss") as f64 * batch.len() as f64;
        }
        let rep = evaluate(&model, stage, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_acc: rep.accuracy,
            val_macro_f1: rep.macro_avg.f1,
        };
        log::info!(
            "{stage} epoch {:>2}: lr {:.3e} loss {:.4} val acc {:.4} macro-F1 {:.4}",
            record.epoch,
            record.lr,
            record.train_loss,
            record.val_acc,
            record.val_macro_f1
        );
        let better = best.as_ref().map_or(true, |(acc, f1, _, _)| (record.val_acc, record.val_macro_f1) > (*acc, *f1));
        if better {
            best = Some((record.val_acc, record.val_macro_f1, record.epoch, model.clone()));
        }
        history.epochs.push(record);
    }
    let (_, _, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, history, best_epoch })
}
