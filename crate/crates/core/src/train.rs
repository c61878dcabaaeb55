//! Training loop and dataset-level evaluation.
//!
//! Sequences are visited in a seeded shuffled order. A batch sums the
//! per-sequence losses (each already normalized by its own length) before
//! one Adam step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SimilaritySource};
use crate::data::SequenceSample;
use crate::error::{DestError, Result};
use crate::eval::{EvalReport, Evaluator};
use crate::loss::{frame_features, similarity_weights, total_loss};
use crate::model::{argmax_columns, DestModel, Prediction};
use crate::tensor::{Adam, Tape, Tensor};

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sequence total loss over the epoch.
    pub loss: f64,
    pub acc: f64,
    pub edit: f64,
    #[serde(rename = "f1@10")]
    pub f1_10: f64,
    #[serde(rename = "f1@25")]
    pub f1_25: f64,
    #[serde(rename = "f1@50")]
    pub f1_50: f64,
}

impl EpochLog {
    fn new(epoch: usize, loss: f64, r: &EvalReport) -> Self {
        EpochLog {
            epoch,
            loss,
            acc: r.acc,
            edit: r.edit,
            f1_10: r.f1_10,
            f1_25: r.f1_25,
            f1_50: r.f1_50,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub logs: Vec<EpochLog>,
    /// Set when an early-stop target was confirmed by a clean evaluation pass.
    pub stopped_early: Option<EvalReport>,
}

/// Loss and gradients for one sequence; gradients are added into the store.
pub fn sequence_step(model: &mut DestModel, run: &RunConfig, sample: &SequenceSample) -> Result<(f64, Vec<usize>)> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let x = tape.leaf(&sample.coords);
    let out = model.forward(&mut tape, &bound, x)?;
    let feats = match run.loss.similarity_source {
        SimilaritySource::Input => frame_features(&sample.coords)?,
        SimilaritySource::Hidden => tape.tensor(out.features),
    };
    let weights = similarity_weights(&feats, run.loss.gs_sigma)?;
    let terms = total_loss(
        &mut tape,
        &out.class_log_probs,
        &out.boundary_probs,
        &sample.labels,
        &weights,
        &run.loss,
    )?;
    let loss = tape.scalar(terms.total);
    if !loss.is_finite() {
        return Err(DestError::Numerical(format!(
            "non-finite loss {loss} on sequence {}",
            sample.id
        )));
    }
    tape.backward(terms.total)?;
    model.store.accumulate_grads(&tape, &bound)?;
    let pred = argmax_columns(&tape.tensor(*out.class_probs.last().expect("initial head")));
    Ok((loss, pred))
}

pub fn check_dataset(model: &DestModel, data: &[SequenceSample]) -> Result<()> {
    let c = &model.config;
    for s in data {
        if s.channels() != c.in_channels || s.joints() != c.joints {
            return Err(DestError::Config(format!(
                "sequence {} has C = {}, V = {}; the model expects C = {}, V = {}",
                s.id,
                s.channels(),
                s.joints(),
                c.in_channels,
                c.joints
            )));
        }
        if let Some(&l) = s.labels.iter().find(|&&l| l >= c.classes) {
            return Err(DestError::Data(format!(
                "sequence {} has label {l}, but C_o = {}",
                s.id, c.classes
            )));
        }
    }
    Ok(())
}

/// Runs `run.optim.epochs` epochs. `on_epoch` sees every log line and the
/// updated model, and may write checkpoints.
pub fn train(
    model: &mut DestModel,
    run: &RunConfig,
    data: &[SequenceSample],
    mut on_epoch: impl FnMut(&EpochLog, &DestModel) -> Result<()>,
) -> Result<TrainSummary> {
    run.validate()?;
    if data.is_empty() {
        return Err(DestError::Data("training set is empty".into()));
    }
    check_dataset(model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.optim.seed);
    let mut adam = Adam::new(model.store.tensors(), run.optim.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::new();
    for epoch in 0..run.optim.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut ev = Evaluator::new();
        for batch in order.chunks(run.optim.batch_size) {
            model.store.zero_grad();
            for &i in batch {
                let (loss, pred) = sequence_step(model, run, &data[i])?;
                total += loss;
                ev.add(&pred, &data[i].labels)?;
            }
            adam.step(model.store.tensors_mut())?;
        }
        model.store.zero_grad();
        let log = EpochLog::new(epoch, total / data.len() as f64, &ev.report());
        log::debug!("{}", log.to_json());
        on_epoch(&log, model)?;
        logs.push(log);
        if targets_met(run, logs.last().unwrap()) {
            let clean = evaluate_dataset(model, data, None)?;
            if targets_met(run, &EpochLog::new(epoch, 0.0, &clean)) {
                return Ok(TrainSummary {
                    logs,
                    stopped_early: Some(clean),
                });
            }
        }
    }
    Ok(TrainSummary {
        logs,
        stopped_early: None,
    })
}

fn targets_met(run: &RunConfig, log: &EpochLog) -> bool {
    let o = &run.optim;
    if o.stop_at_acc.is_none() && o.stop_at_f1_50.is_none() {
        return false;
    }
    o.stop_at_acc.map_or(true, |a| log.acc >= a) && o.stop_at_f1_50.map_or(true, |f| log.f1_50 >= f)
}

/// Final-stage framewise predictions, optionally boundary-refined.
pub fn predict_labels(model: &DestModel, coords: &Tensor, refine: Option<f64>) -> Result<Vec<usize>> {
    let p = model.predict(coords)?;
    Ok(match refine {
        Some(th) => p.refined(th),
        None => p.labels(),
    })
}

/// Predictions for every sequence, computed on all available cores.
/// Output order follows `data`.
pub fn predict_dataset(model: &DestModel, data: &[SequenceSample]) -> Result<Vec<Prediction>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(data.len().max(1));
    let chunk = data.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = data
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| model.predict(&s.coords)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(data.len());
        for h in handles {
            out.extend(h.join().expect("prediction worker panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate_dataset(model: &DestModel, data: &[SequenceSample], refine: Option<f64>) -> Result<EvalReport> {
    check_dataset(model, data)?;
    let mut ev = Evaluator::new();
    for (s, p) in data.iter().zip(predict_dataset(model, data)?) {
        let labels = match refine {
            Some(th) => p.refined(th),
            None => p.labels(),
        };
        ev.add(&labels, &s.labels)?;
    }
    Ok(ev.report())
}
