//! Subcommand bodies. Each writes its artifacts under the run directory and
//! returns the summary its caller prints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use selfonn::crossval::cross_validate;
use selfonn::data::synthetic::{generate, raw_image};
use selfonn::data::{
    load_image, load_sample, preprocess, read_manifest_csv, scan_dataset, write_manifest_csv, Label, Layout,
    ManifestEntry, Sample,
};
use selfonn::evaluation::{
    complexity, compute_metrics, emit_report, ConfusionCounts, ExperimentReport, ReportFormat,
};
use selfonn::tensor::{write_tensor_file, Dtype};
use selfonn::train::{
    encode_target, gradient_check, load_checkpoint, predict, save_checkpoint, train, Checkpoint, GradCheckOptions,
};
use selfonn::{Error, Network, NetworkConfig, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, LayoutKind};

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const CACHE_MANIFEST: &str = "manifest.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

/// Creates the run directory and stores the resolved configuration there.
pub fn prepare_run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn image_size(net: &NetworkConfig) -> (usize, usize) {
    net.input_size
}

/// Resolves the configured dataset source into preprocessed samples.
pub fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    let size = image_size(&cfg.network);
    let ds = &cfg.dataset;
    if let Some(cache) = &ds.cache {
        let entries = read_manifest_csv(&cache.join(CACHE_MANIFEST))?;
        return entries
            .into_iter()
            .map(|e| {
                let path = cache.join(&e.path);
                let image = load_image(&path)?;
                let image = if image.shape() == [cfg.network.input_channels, size.0, size.1] {
                    image
                } else {
                    preprocess(&image, size)?
                };
                Ok(Sample {
                    image,
                    label: e.label,
                    source: path,
                })
            })
            .collect();
    }
    if let Some(spec) = &ds.synthetic {
        let samples = generate(spec)?;
        if (spec.size, spec.size) == size {
            return Ok(samples);
        }
        return samples
            .into_iter()
            .map(|s| {
                Ok(Sample {
                    image: preprocess(&s.image, size)?,
                    ..s
                })
            })
            .collect();
    }
    let manifest = match ds.layout {
        LayoutKind::ClassFolders => {
            let root = ds
                .root
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.root is required for the class-folders layout".into()))?;
            scan_dataset(root, &Layout::ClassFolders)?
        }
        LayoutKind::Manifest => {
            let csv = ds
                .manifest
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.manifest is required for the manifest layout".into()))?;
            let root = ds.root.clone().or_else(|| csv.parent().map(Path::to_path_buf)).unwrap_or_default();
            scan_dataset(&root, &Layout::Manifest(csv.clone()))?
        }
    };
    selfonn::data::load_dataset(&manifest, size)
}

pub struct TrainSummary {
    pub epochs: usize,
    pub final_train_error: f64,
    pub converged: bool,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let data = load_samples(cfg)?;
    let dir = prepare_run_dir(cfg)?;
    let mut net = Network::build(&cfg.network, cfg.training.seed)?;
    let outcome = train(&mut net, &data, &cfg.training)?;
    let checkpoint = dir.join("checkpoint.sonn");
    save_checkpoint(
        &checkpoint,
        &Checkpoint {
            network: net.clone(),
            adam: Some(outcome.adam),
        },
    )?;
    outcome.history.write_csv(&dir.join("history.csv"))?;
    let all: Vec<usize> = (0..data.len()).collect();
    write_predictions(&dir.join("train_predictions.csv"), &net, &data, &all)?;
    let last = outcome.history.last().copied();
    Ok(TrainSummary {
        epochs: last.map_or(0, |e| e.epoch),
        final_train_error: last.map_or(f64::NAN, |e| e.train_error),
        converged: outcome.converged,
        checkpoint,
    })
}

/// Per-sample CSV: `index,path,truth,predicted,score0,score1`. Returns the
/// confusion table it implies.
fn write_predictions(path: &Path, net: &Network, data: &[Sample], indices: &[usize]) -> Result<ConfusionCounts> {
    let mut out = String::from("index,path,truth,predicted,score0,score1\n");
    let mut counts = ConfusionCounts::default();
    for (&i, (scores, predicted)) in indices.iter().zip(predict(net, data, indices)?) {
        let s = &data[i];
        counts.record(predicted, s.label);
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            s.source.display(),
            s.label.index(),
            predicted.index(),
            scores[0],
            scores[1]
        );
    }
    write(path, out)?;
    Ok(counts)
}

pub fn cmd_crossval(cfg: &ExperimentConfig, jobs: usize) -> Result<selfonn::crossval::CrossValReport> {
    let data = load_samples(cfg)?;
    let dir = prepare_run_dir(cfg)?;
    let report = cross_validate(&data, &cfg.network, &cfg.training, &cfg.crossval, jobs)?;
    write_json(&dir.join("crossval.json"), &report)?;
    report.write_predictions_csv(&dir.join("predictions.csv"))?;
    let mut rows: Vec<ExperimentReport> = report
        .folds
        .iter()
        .map(|f| ExperimentReport::new(format!("fold{}", f.fold + 1)).with_metrics(f.metrics))
        .collect();
    rows.push(ExperimentReport::new("aggregate").with_metrics(report.aggregate_metrics));
    emit_report(&rows, ReportFormat::Csv, &dir.join("metrics.csv"))?;
    Ok(report)
}

pub fn cmd_analyze(cfg: &ExperimentConfig, sweep: bool) -> Result<Vec<ExperimentReport>> {
    let dir = prepare_run_dir(cfg)?;
    let qs: Vec<usize> = if sweep { vec![1, 3, 5, 7, 9] } else { vec![cfg.network.q] };
    let reports = qs
        .into_iter()
        .map(|q| {
            let net = NetworkConfig { q, ..cfg.network.clone() };
            Ok(ExperimentReport::new(format!("Self-ONN (Q={q})")).with_complexity(&net, &complexity(&net)?))
        })
        .collect::<Result<Vec<_>>>()?;
    emit_report(&reports, ReportFormat::Json, &dir.join("complexity.json"))?;
    Ok(reports)
}

pub fn cmd_gradcheck(
    cfg: &ExperimentConfig,
    samples_per_buffer: Option<usize>,
    corrupt_backward: bool,
) -> Result<selfonn::train::GradCheckReport> {
    let dir = prepare_run_dir(cfg)?;
    let mut net = Network::build(&cfg.network, cfg.training.seed)?;
    net.set_backward_fault(corrupt_backward);
    let (h, w) = image_size(&cfg.network);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let raw = raw_image(Label::Glaucoma, h.max(w), &mut rng);
    let mut input = preprocess(&raw, (h, w))?;
    if cfg.network.input_channels != 3 {
        let plane = input.channel(0).to_vec();
        let data = plane.repeat(cfg.network.input_channels);
        input = selfonn::Tensor::new(vec![cfg.network.input_channels, h, w], data)?;
    }
    let opts = GradCheckOptions {
        samples_per_buffer,
        seed: cfg.training.seed,
        ..Default::default()
    };
    let report = gradient_check(&net, &input, &encode_target(Label::Glaucoma), &opts)?;
    write_json(&dir.join("gradcheck.json"), &report)?;
    Ok(report)
}

pub struct PredictRow {
    pub path: PathBuf,
    pub label: Label,
    pub scores: [f64; 2],
}

pub fn cmd_predict(checkpoint: &Path, images: &[PathBuf]) -> Result<Vec<PredictRow>> {
    let net = load_checkpoint(checkpoint)?.network;
    let size = image_size(net.config());
    images
        .iter()
        .map(|p| {
            let s = load_sample(p, Label::Healthy, size)?;
            let scores = net.forward(&s.image)?;
            Ok(PredictRow {
                path: p.clone(),
                label: selfonn::train::predict_label(&scores),
                scores: [scores[0], scores[1]],
            })
        })
        .collect()
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path, manifest: Option<&Path>) -> Result<ExperimentReport> {
    let net = load_checkpoint(checkpoint)?.network;
    let size = image_size(net.config());
    let data = match manifest {
        Some(csv) => {
            let base = csv.parent().unwrap_or(Path::new("."));
            read_manifest_csv(csv)?
                .into_iter()
                .map(|ManifestEntry { path, label }| load_sample(&base.join(path), label, size))
                .collect::<Result<Vec<_>>>()?
        }
        None => load_samples(&ExperimentConfig {
            network: net.config().clone(),
            ..cfg.clone()
        })?,
    };
    let dir = prepare_run_dir(cfg)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let counts = write_predictions(&dir.join("predictions.csv"), &net, &data, &all)?;
    let report = ExperimentReport::new(format!("Self-ONN (Q={})", net.config().q)).with_metrics(compute_metrics(&counts));
    emit_report(std::slice::from_ref(&report), ReportFormat::Json, &dir.join("metrics.json"))?;
    Ok(report)
}

/// Writes preprocessed tensors plus a manifest that `dataset.cache` can use.
pub fn cmd_cache(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let data = load_samples(&ExperimentConfig {
        dataset: crate::config::DatasetConfig {
            cache: None,
            ..cfg.dataset.clone()
        },
        ..cfg.clone()
    })?;
    let dir = prepare_run_dir(cfg)?.join("cache");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut entries = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        let name = PathBuf::from(format!("{i:05}.sotn"));
        write_tensor_file(&dir.join(&name), &s.image, Dtype::F64)?;
        entries.push(ManifestEntry {
            path: name,
            label: s.label,
        });
    }
    write_manifest_csv(&dir.join(CACHE_MANIFEST), &entries)?;
    Ok(dir)
}
