//! Data preparation and training runs shared by `train` and `ablate`.

use std::path::Path;

use rayon::prelude::*;
use serde_json::json;
use thermoforge::data::{sample_layout, sample_stream, CaseConfig, Dataset, Split};
use thermoforge::fdm::{solve_fdm, SolverConfig};
use thermoforge::grid::{LayoutSpec, ScalarField};
use thermoforge::metrics::{component_mask, evaluate_pair, MetricSet};
use thermoforge::net::{Checkpoint, NetworkConfig, ParameterSet, PredictionHead, UNet};
use thermoforge::trainer::{predict, train_physics, train_supervised, EpochRecord, TrainConfig, TrainMode, TrainReport};
use thermoforge::{Error, Result};

/// Mixed into the run seed for the stream that samples in-memory layouts.
const DATA_SALT: u64 = 0xda7a_5eed;

pub type Labelled = Vec<(LayoutSpec, ScalarField)>;

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<LayoutSpec>,
    /// FDM labels of the training layouts when they are known.
    pub train_labels: Option<Vec<ScalarField>>,
    pub val: Labelled,
    pub test: Labelled,
}

fn label_all(case: &CaseConfig, layouts: Vec<LayoutSpec>, solver: &SolverConfig) -> Result<Labelled> {
    layouts
        .into_par_iter()
        .map(|l| {
            let (t, report) = solve_fdm(&case.problem(l.clone())?, solver)?;
            if !report.converged {
                return Err(Error::Config(format!(
                    "FDM label did not converge (residual {:e}); raise --max-iters or --tol",
                    report.final_residual
                )));
            }
            Ok((l, t))
        })
        .collect()
}

/// Samples train/val/test layouts in memory from `seed` and labels the
/// validation and test layouts.
pub fn sample_splits(case: &CaseConfig, counts: (usize, usize, usize), seed: u64, solver: &SolverConfig) -> Result<Splits> {
    let (ntr, nva, nte) = counts;
    let layouts = (0..ntr + nva + nte)
        .into_par_iter()
        .map(|i| sample_layout(case, &mut sample_stream(seed ^ DATA_SALT, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut rest = layouts;
    let test = rest.split_off(ntr + nva);
    let val = rest.split_off(ntr);
    Ok(Splits {
        train: rest,
        train_labels: None,
        val: label_all(case, val, solver)?,
        test: label_all(case, test, solver)?,
    })
}

/// Splits of a generated dataset. Missing validation or test labels are
/// solved on the fly.
pub fn dataset_splits(ds: &Dataset, solver: &SolverConfig) -> Result<Splits> {
    let labelled = |split: Split| -> Result<Labelled> {
        let mut known = Vec::new();
        let mut unknown = Vec::new();
        for e in ds.manifest.entries(split) {
            match e.temperature {
                Some(_) => known.push((ds.layout(e)?, ds.label(e)?)),
                None => unknown.push(ds.layout(e)?),
            }
        }
        known.extend(label_all(ds.case(), unknown, solver)?);
        Ok(known)
    };
    let entries: Vec<_> = ds.manifest.entries(Split::Train).collect();
    let train = entries.iter().map(|e| ds.layout(e)).collect::<Result<Vec<_>>>()?;
    let train_labels = if entries.iter().all(|e| e.temperature.is_some()) {
        Some(entries.iter().map(|e| ds.label(e)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    Ok(Splits {
        train,
        train_labels,
        val: labelled(Split::Val)?,
        test: labelled(Split::Test)?,
    })
}

pub struct RunOutcome {
    pub params: ParameterSet<f32>,
    pub report: TrainReport,
    pub test: Option<MetricSet>,
}

/// Mean metrics of the network over a labelled set.
pub fn test_metrics(net: &UNet, params: &ParameterSet<f32>, case: &CaseConfig, data: &Labelled) -> Result<MetricSet> {
    let sets = data
        .par_iter()
        .map(|(layout, label)| {
            let pred = predict(net, params, case, layout)?;
            evaluate_pair(&pred, label, &component_mask(&case.problem(layout.clone())?.intensity()?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSet::mean(&sets))
}

/// Trains in the configured mode. Supervised runs use the first `labels`
/// training layouts, solving their labels when the splits lack them.
pub fn run(
    net: &UNet,
    case: &CaseConfig,
    splits: &Splits,
    config: &TrainConfig,
    labels: Option<usize>,
    solver: &SolverConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunOutcome> {
    let (params, report) = match config.mode {
        TrainMode::Physics => train_physics(net, case, &splits.train, &splits.val, config, observer)?,
        TrainMode::Supervised => {
            let n = labels.unwrap_or(splits.train.len()).min(splits.train.len());
            let data = match &splits.train_labels {
                Some(ls) => splits.train[..n].iter().cloned().zip(ls[..n].iter().cloned()).collect(),
                None => label_all(case, splits.train[..n].to_vec(), solver)?,
            };
            train_supervised(net, case, &data, &splits.val, config, observer)?
        }
    };
    let test = if splits.test.is_empty() {
        None
    } else {
        Some(test_metrics(net, &params, case, &splits.test)?)
    };
    Ok(RunOutcome { params, report, test })
}

pub fn checkpoint(config: &NetworkConfig, head: PredictionHead, params: ParameterSet<f32>, metadata: serde_json::Value) -> Checkpoint {
    Checkpoint {
        config: config.clone(),
        head,
        params,
        metadata,
    }
}

pub fn run_metadata(case: &CaseConfig, config: &TrainConfig, counts: (usize, usize, usize), dataset: Option<&Path>, labels: Option<usize>) -> serde_json::Value {
    json!({
        "case": case,
        "training": config,
        "data": {
            "dataset": dataset.map(|p| p.display().to_string()),
            "train": counts.0,
            "val": counts.1,
            "test": counts.2,
            "labels": labels,
        },
    })
}
