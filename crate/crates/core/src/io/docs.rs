//! JSON result documents and the dataset-in-a-container convention.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{concatenate, s, ArrayView2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gesture::{EvalReport, TrainConfig, WindowedDataset};
use crate::signal::{
    rms_per_channel, two_sample_ttest, zscore_outliers, ChannelStats, Recording, TTestResult,
    TTestVariant,
};
use crate::synth::{GroundTruth, MuapTemplate, SpikeTrain, SynthConfig};

pub const GROUND_TRUTH_SCHEMA_VERSION: u32 = 1;
pub const QC_SCHEMA_VERSION: u32 = 1;

/// Pretty JSON with a trailing newline. Floats use the shortest text that
/// parses back to the identical double.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(value)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Synthesis ground truth stored next to the recording container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDoc {
    pub schema_version: u32,
    pub config: SynthConfig,
    pub trains: Vec<SpikeTrain>,
    pub templates: Vec<MuapTemplate>,
}

impl GroundTruthDoc {
    pub fn from_ground_truth(gt: &GroundTruth) -> Self {
        Self {
            schema_version: GROUND_TRUTH_SCHEMA_VERSION,
            config: gt.config.clone(),
            trains: gt.trains.clone(),
            templates: gt.templates.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcInput {
    pub name: String,
    /// Active channel indices; `stats` entries follow this order.
    pub channels: Vec<usize>,
    pub mean_rms: f64,
    pub stats: ChannelStats,
}

/// Electrode quality summary, optionally comparing two recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub schema_version: u32,
    pub inputs: Vec<QcInput>,
    pub ttest: Option<TTestResult>,
    pub alpha: f64,
    pub significant: Option<bool>,
}

pub const CROSSVAL_SCHEMA_VERSION: u32 = 1;

/// Pooled summary plus the per-fold reports of one cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationDoc {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub summary: EvalReport,
    pub folds: Vec<EvalReport>,
}

/// Single-recording quality control: RMS per active channel and z-score outliers.
pub fn qc_input(name: &str, rec: &Recording, threshold: f64) -> Result<QcInput> {
    let channels = rec.active_channels();
    let rms = rms_per_channel(rec)?;
    let values: Vec<f64> = channels.iter().map(|&c| rms[c]).collect();
    let stats = zscore_outliers(&values, threshold)?;
    let kept: Vec<f64> = stats.retained().iter().map(|&i| values[i]).collect();
    Ok(QcInput {
        name: name.to_string(),
        channels,
        mean_rms: kept.iter().sum::<f64>() / kept.len() as f64,
        stats,
    })
}

/// Builds the report; two inputs add a t-test on their retained channel RMS values.
pub fn qc_report(inputs: Vec<QcInput>, variant: TTestVariant, alpha: f64) -> Result<QcReport> {
    let ttest = match inputs.as_slice() {
        [a, b] => {
            let kept = |q: &QcInput| -> Vec<f64> { q.stats.retained().iter().map(|&i| q.stats.rms[i]).collect() };
            Some(two_sample_ttest(&kept(a), &kept(b), variant)?)
        }
        _ => None,
    };
    Ok(QcReport {
        schema_version: QC_SCHEMA_VERSION,
        significant: ttest.as_ref().map(|t| t.p_value < alpha),
        inputs,
        ttest,
        alpha,
    })
}

pub const DATASET_KIND: &str = "windowed-dataset";

fn meta_get<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::invalid(format!("dataset container lacks metadata key `{key}`")))
}

/// Stacks the windows along time and records labels and geometry in the metadata.
pub fn dataset_to_recording(ds: &WindowedDataset) -> Result<Recording> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot store an empty dataset"));
    }
    let views: Vec<ArrayView2<'_, f64>> = ds.windows().iter().map(|w| w.view()).collect();
    let stacked = concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rec = Recording::new(ds.sample_rate(), stacked)?;
    let meta = rec.meta_mut();
    meta.insert("kind".into(), DATASET_KIND.into());
    meta.insert("window_samples".into(), ds.window_samples().to_string());
    meta.insert("num_classes".into(), ds.num_classes().to_string());
    meta.insert("labels".into(), serde_json::to_string(ds.labels())?);
    meta.insert("class_names".into(), serde_json::to_string(ds.class_names())?);
    Ok(rec)
}

pub fn recording_to_dataset(rec: &Recording) -> Result<WindowedDataset> {
    let meta = rec.meta();
    if meta_get(meta, "kind")? != DATASET_KIND {
        return Err(Error::invalid("container does not hold a windowed dataset"));
    }
    let parse_err = |k: &str| Error::invalid(format!("malformed dataset metadata `{k}`"));
    let window: usize = meta_get(meta, "window_samples")?
        .parse()
        .map_err(|_| parse_err("window_samples"))?;
    let num_classes: usize = meta_get(meta, "num_classes")?
        .parse()
        .map_err(|_| parse_err("num_classes"))?;
    let labels: Vec<usize> =
        serde_json::from_str(meta_get(meta, "labels")?).map_err(|_| parse_err("labels"))?;
    let names: Vec<String> =
        serde_json::from_str(meta_get(meta, "class_names")?).map_err(|_| parse_err("class_names"))?;
    if window == 0 || window * labels.len() != rec.num_samples() {
        return Err(Error::invalid(format!(
            "{} labels of {window} samples do not tile {} samples",
            labels.len(),
            rec.num_samples()
        )));
    }
    let windows = (0..labels.len())
        .map(|i| rec.samples().slice(s![i * window..(i + 1) * window, ..]).to_owned())
        .collect();
    WindowedDataset::new(windows, labels, num_classes, rec.sample_rate(), names)
}
