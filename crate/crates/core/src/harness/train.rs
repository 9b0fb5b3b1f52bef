use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::MetricsReport;
use super::model::{argmax, Model, PreparedFact};
use super::optim::Adam;
use crate::data::{CaseRecord, KnowledgeTree};
use crate::diffcore::{ParamGrads, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_mr: f64,
    pub val_maf1: f64,
    pub val_mif1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Scores plus the mean cross-entropy over the evaluated set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub loss: f64,
    pub predictions: Vec<usize>,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    mix(mix(mix(seed) ^ epoch as u64) ^ index as u64)
}

/// Trains on `train`, selecting the epoch with the best validation macro
/// F1 (ties broken by lower validation loss). `on_epoch` sees each log
/// line as it is produced.
pub fn train(
    config: &TrainConfig,
    train: &[CaseRecord],
    validation: &[CaseRecord],
    knowledge: &KnowledgeTree,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Usage("training and validation sets must be non-empty".into()));
    }
    let mut model = Model::build(config, train, knowledge)?;
    let train_set = model.prepare_records(train)?;
    let val_set = model.prepare_records(validation)?;
    let mut adam = Adam::new(&model.store, config.learning_rate);

    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, crate::diffcore::ParamStore<f32>)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch, usize::MAX)));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&(PreparedFact, usize)> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (grads, loss) = batch_gradients(&model, &batch, derive_seed(config.seed, epoch, b))?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut model.store, &grads);
        }
        let eval = evaluate_prepared(&model, &val_set)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_acc: eval.report.accuracy,
            val_mr: eval.report.macro_recall,
            val_maf1: eval.report.macro_f1,
            val_mif1: eval.report.micro_f1,
        };
        on_epoch(&entry);
        log.push(entry);

        let improved = match &best {
            None => true,
            Some((f1, loss, _, _)) => eval.report.macro_f1 > *f1 || (eval.report.macro_f1 == *f1 && eval.loss < *loss),
        };
        if improved {
            best = Some((eval.report.macro_f1, eval.loss, epoch, model.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, _, best_epoch, store) = best.expect("at least one epoch ran");
    model.store = store;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}

/// Mean-loss gradients for one batch and the mean loss.
///
/// Knowledge rows are computed once on their own tape; each example then
/// runs on a separate tape with those rows as an input, and the summed row
/// gradients are pushed back through the knowledge tape.
pub fn batch_gradients(model: &Model, batch: &[&(PreparedFact, usize)], seed: u64) -> Result<(ParamGrads<f32>, f64)> {
    let scale = 1.0 / batch.len() as f32;
    let mut ktape = Tape::new(&model.store);
    let c = model.layout.knowledge_rows(&mut ktape, &model.encoded)?;
    let c_value: Option<Tensor<f32>> = c.map(|c| ktape.value(c).detached());
    let mut total = ParamGrads::empty(model.store.len());
    let mut dc = c_value.as_ref().map(|t| vec![0f32; t.len()]);
    let mut loss_sum = 0.0;

    for (i, (fact, gold)) in batch.iter().enumerate() {
        let mut tape = Tape::training(&model.store, mix(seed ^ i as u64));
        let c_node = c_value.as_ref().map(|t| tape.input(t.clone())).transpose()?;
        let out = model.layout.forward(&mut tape, fact, c_node)?;
        let loss = tape.cross_entropy(out.logits, &[*gold])?;
        loss_sum += Scalar::to_f64(tape.scalar(loss)?);
        let grads = tape.backward(loss)?;
        if let (Some(acc), Some(node)) = (dc.as_mut(), c_node) {
            if let Some(g) = grads.node(node) {
                acc.iter_mut().zip(g).for_each(|(a, &x)| *a += x);
            }
        }
        total.add_assign(grads.params());
    }
    if let (Some(c), Some(dc)) = (c, dc) {
        total.add_assign(ktape.backward_from(c, &dc)?.params());
    }
    total.scale(scale);
    Ok((total, loss_sum / batch.len() as f64))
}

/// Mean cross-entropy of `records` under inference mode.
pub fn mean_loss<F: Scalar>(model: &Model<F>, records: &[CaseRecord]) -> Result<f64> {
    let set = model.prepare_records(records)?;
    Ok(evaluate_prepared(model, &set)?.loss)
}

pub fn evaluate<F: Scalar>(model: &Model<F>, records: &[CaseRecord]) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::Usage("nothing to evaluate".into()));
    }
    let set = model.prepare_records(records)?;
    evaluate_prepared(model, &set)
}

fn evaluate_prepared<F: Scalar>(model: &Model<F>, set: &[(PreparedFact, usize)]) -> Result<Evaluation> {
    let knowledge = model.knowledge_tensor()?;
    let mut golds = Vec::with_capacity(set.len());
    let mut predictions = Vec::with_capacity(set.len());
    let mut loss = 0.0;
    for (fact, gold) in set {
        let (logits, _) = model.infer(fact, knowledge.as_ref())?;
        let z: Vec<f64> = logits.iter().map(|&x| Scalar::to_f64(x)).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - z[*gold];
        golds.push(*gold);
        predictions.push(argmax(&logits));
    }
    let report = MetricsReport::compute(&golds, &predictions, model.num_charges())?;
    Ok(Evaluation {
        report,
        loss: loss / set.len() as f64,
        predictions,
    })
}
