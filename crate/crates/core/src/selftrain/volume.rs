use super::selection::{
    all_pruned, can_retrain, converged, select, IterationRecord, SelfTrainConfig, Stage,
};
use crate::domain::QualityLabel;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, predict_labels, Forest, ForestConfig};
use crate::seed::derive;

const FOREST_STREAM: u64 = 0x71;

pub struct VolumeSelfTrainOutcome {
    /// Forest fitted on the initial labels.
    pub initial: Forest,
    /// Initial or refitted forest with the best validation accuracy, ties
    /// going to the later one.
    pub forest: Forest,
    pub trace: Vec<IterationRecord>,
    /// Indices of the volumes still in training, with their labels.
    pub active: Vec<(usize, QualityLabel)>,
}

fn fit(
    x: &[Vec<f64>],
    labels: &[QualityLabel],
    config: &ForestConfig,
    seed: u64,
    iteration: usize,
) -> Result<Forest> {
    fit_forest(x, labels, config, seed).map_err(|e| match e {
        Error::DegenerateClass(msg) => Error::Protocol(format!(
            "volume self-training iteration {iteration} left one class: {msg}"
        )),
        other => other,
    })
}

fn accuracy(forest: &Forest, x: &[Vec<f64>], labels: &[QualityLabel]) -> Result<f64> {
    if x.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = predict_labels(forest, x)?;
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / x.len() as f64)
}

/// Fits a forest on the initial volume labels, then runs rounds that keep
/// volumes whose forest prediction equals their current label with
/// confidence at least `p_volume` and refit on the kept volumes.
/// `validation` (features, labels) feeds the trace and the stopping rule;
/// without it the trace reports NaN.
pub fn volume_self_train(
    x: &[Vec<f64>],
    initial_labels: &[QualityLabel],
    validation: Option<(&[Vec<f64>], &[QualityLabel])>,
    config: &SelfTrainConfig,
    forest_config: &ForestConfig,
    seed: u64,
) -> Result<VolumeSelfTrainOutcome> {
    config.validate()?;
    let (vx, vy) = validation.unwrap_or((&[], &[]));
    let initial = fit(
        x,
        initial_labels,
        forest_config,
        derive(seed, FOREST_STREAM, 0),
        0,
    )?;
    let mut forest = initial.clone();
    let mut acc = accuracy(&forest, vx, vy)?;
    let mut best = (acc, forest.clone());
    let mut active: Vec<(usize, QualityLabel)> =
        initial_labels.iter().copied().enumerate().collect();
    let mut trace = Vec::new();
    for iteration in 1..=config.rounds(config.volume_iterations) {
        let preds = active
            .iter()
            .map(|&(i, _)| forest.predict(&x[i]))
            .collect::<Result<Vec<_>>>()?;
        let previous: Vec<QualityLabel> = active.iter().map(|&(_, l)| l).collect();
        let selection = select(&previous, &preds, config.p_volume)?;
        if selection.kept_count() == 0 {
            return Err(all_pruned(Stage::Volume, iteration, &selection));
        }
        let next: Vec<(usize, QualityLabel)> = selection
            .kept()
            .map(|r| (active[r.id].0, r.predicted))
            .collect();
        let record = IterationRecord {
            stage: Stage::Volume,
            iteration,
            active: active.len(),
            kept: selection.kept_count(),
            relabeled: selection.relabeled_count(),
            pruned: selection.pruned_count(),
            validation_accuracy: acc,
            retrained: false,
        };
        if !can_retrain(next.iter().map(|&(_, l)| l)) {
            trace.push(record);
            break;
        }
        let kx: Vec<Vec<f64>> = next.iter().map(|&(i, _)| x[i].clone()).collect();
        let ky: Vec<QualityLabel> = next.iter().map(|&(_, l)| l).collect();
        forest = fit(
            &kx,
            &ky,
            forest_config,
            derive(seed, FOREST_STREAM, iteration as u64),
            iteration,
        )?;
        let new_acc = accuracy(&forest, vx, vy)?;
        if !(new_acc < best.0) {
            best = (new_acc, forest.clone());
        }
        trace.push(IterationRecord {
            validation_accuracy: new_acc,
            retrained: true,
            ..record
        });
        active = next;
        let stop = converged(iteration, acc, new_acc, config.min_improvement);
        acc = new_acc;
        if stop {
            break;
        }
    }
    Ok(VolumeSelfTrainOutcome {
        initial,
        forest: best.1,
        trace,
        active,
    })
}
