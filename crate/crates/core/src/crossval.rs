//! Stratified k-fold cross-validation with several independently seeded
//! trainings per fold and best-run selection.

use std::cmp::Ordering;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{require_both_classes, Label, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, ConfusionCounts, MetricsReport};
use crate::network::{Network, NetworkConfig};
use crate::train::{predict, train_subset, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValPlan {
    pub fold_count: usize,
    pub runs_per_fold: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for CrossValPlan {
    fn default() -> Self {
        CrossValPlan {
            fold_count: 10,
            runs_per_fold: 5,
            stratified: true,
            seed: 0,
        }
    }
}

impl CrossValPlan {
    pub fn validate(&self) -> Result<()> {
        if self.fold_count < 2 {
            return Err(Error::Config("crossval.fold_count must be at least 2".into()));
        }
        if self.runs_per_fold == 0 {
            return Err(Error::Config("crossval.runs_per_fold must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed for one training, mixed from the plan seed, fold and run.
    pub fn run_seed(&self, fold: usize, run: usize) -> u64 {
        let mut z = self.seed ^ ((fold as u64) << 32 | run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split into disjoint test folds that cover every index once.
/// Stratified splits deal each shuffled class round-robin, continuing the
/// rotation across classes so fold sizes differ by at most one.
pub fn kfold_split(labels: &[Label], plan: &CrossValPlan) -> Result<Vec<Fold>> {
    plan.validate()?;
    if labels.len() < plan.fold_count {
        return Err(Error::Dataset(format!(
            "{} samples cannot fill {} folds",
            labels.len(),
            plan.fold_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let groups: Vec<Vec<usize>> = if plan.stratified {
        [Label::Healthy, Label::Glaucoma]
            .iter()
            .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut tests = vec![Vec::new(); plan.fold_count];
    let mut slot = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for i in group {
            tests[slot].push(i);
            slot = (slot + 1) % plan.fold_count;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
            Fold { train, test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    pub epochs: usize,
    pub final_train_error: f64,
    pub converged: bool,
    pub confusion: ConfusionCounts,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub fold: usize,
    pub index: usize,
    pub truth: Label,
    pub predicted: Label,
    pub scores: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub runs: Vec<RunResult>,
    pub selected_run: usize,
    pub confusion: ConfusionCounts,
    pub metrics: MetricsReport,
    /// Test-fold predictions of the selected run.
    pub predictions: Vec<SamplePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub plan: CrossValPlan,
    pub trainings: usize,
    pub folds: Vec<FoldResult>,
    /// Confusion counts pooled over the selected runs of every fold.
    pub aggregate_confusion: ConfusionCounts,
    pub aggregate_metrics: MetricsReport,
}

pub const PREDICTIONS_HEADER: &str = "fold,index,truth,predicted,score0,score1";

impl CrossValReport {
    pub fn predictions(&self) -> impl Iterator<Item = &SamplePrediction> {
        self.folds.iter().flat_map(|f| &f.predictions)
    }

    pub fn predictions_csv(&self) -> String {
        let mut s = format!("{PREDICTIONS_HEADER}\n");
        for p in self.predictions() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.fold,
                p.index,
                p.truth.index(),
                p.predicted.index(),
                p.scores[0],
                p.scores[1]
            ));
        }
        s
    }

    pub fn write_predictions_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.predictions_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Orders runs by fold-test F1, then accuracy; undefined metrics rank lowest.
fn better(a: &RunResult, b: &RunResult) -> bool {
    let key = |r: &RunResult| {
        (
            r.metrics.f1.unwrap_or(f64::NEG_INFINITY),
            r.metrics.accuracy.unwrap_or(f64::NEG_INFINITY),
        )
    };
    key(a).partial_cmp(&key(b)) == Some(Ordering::Greater)
}

/// Index of the best run; ties keep the earliest.
pub fn select_run(runs: &[RunResult]) -> Option<usize> {
    (0..runs.len()).reduce(|best, i| if better(&runs[i], &runs[best]) { i } else { best })
}

struct Trial {
    result: RunResult,
    predictions: Vec<SamplePrediction>,
}

fn run_trial(
    data: &[Sample],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    plan: &CrossValPlan,
    fold_idx: usize,
    fold: &Fold,
    run: usize,
) -> Result<Trial> {
    let seed = plan.run_seed(fold_idx, run);
    let mut net = Network::build(net_cfg, seed)?;
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let outcome = train_subset(&mut net, data, &fold.train, &cfg)?;
    let mut confusion = ConfusionCounts::default();
    let predictions = predict(&net, data, &fold.test)?
        .into_iter()
        .zip(&fold.test)
        .map(|((scores, predicted), &index)| {
            confusion.record(predicted, data[index].label);
            SamplePrediction {
                fold: fold_idx,
                index,
                truth: data[index].label,
                predicted,
                scores: [scores[0], scores[1]],
            }
        })
        .collect();
    let last = outcome.history.last().copied();
    log::info!("fold {fold_idx} run {run}: {} epochs", outcome.history.epochs.len());
    Ok(Trial {
        result: RunResult {
            fold: fold_idx,
            run,
            seed,
            epochs: last.map_or(0, |e| e.epoch),
            final_train_error: last.map_or(f64::NAN, |e| e.train_error),
            converged: outcome.converged,
            confusion,
            metrics: compute_metrics(&confusion),
        },
        predictions,
    })
}

/// Runs every fold x run training on a pool of `jobs` workers and collects
/// results in fold/run order, so the report does not depend on `jobs`.
pub fn cross_validate(
    data: &[Sample],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    plan: &CrossValPlan,
    jobs: usize,
) -> Result<CrossValReport> {
    net_cfg.validate()?;
    train_cfg.validate()?;
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    let folds = kfold_split(&labels, plan)?;
    for (i, f) in folds.iter().enumerate() {
        require_both_classes(f.train.iter().map(|&j| &labels[j]))
            .map_err(|_| Error::Dataset(format!("fold {i} training split holds a single class")))?;
    }
    let tasks: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..plan.runs_per_fold).map(move |r| (f, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let trials: Vec<Trial> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(f, r)| run_trial(data, net_cfg, train_cfg, plan, f, &folds[f], r))
            .collect::<Result<_>>()
    })?;

    let mut trials = trials.into_iter();
    let mut results = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let fold_trials: Vec<Trial> = trials.by_ref().take(plan.runs_per_fold).collect();
        let runs: Vec<RunResult> = fold_trials.iter().map(|t| t.result.clone()).collect();
        let selected = select_run(&runs).expect("runs_per_fold is positive");
        let confusion = runs[selected].confusion;
        let predictions = fold_trials.into_iter().nth(selected).map(|t| t.predictions).unwrap_or_default();
        results.push(FoldResult {
            fold: i,
            train_size: fold.train.len(),
            test_size: fold.test.len(),
            runs,
            selected_run: selected,
            confusion,
            metrics: compute_metrics(&confusion),
            predictions,
        });
    }
    let aggregate_confusion: ConfusionCounts = results.iter().map(|f| f.confusion).sum();
    Ok(CrossValReport {
        plan: plan.clone(),
        trainings: tasks.len(),
        folds: results,
        aggregate_confusion,
        aggregate_metrics: compute_metrics(&aggregate_confusion),
    })
}
