//! Core signal types, IIR filtering and channel statistics.

mod filter;
mod stats;

pub use filter::{
    apply_filter, preprocess_baseline, preprocess_gesture, Biquad, FilterKind, FilterSpec,
    FILTER_CHAIN_KEY,
};
pub use stats::{
    overall_rms, regularized_incomplete_beta, rms_per_channel, student_t_two_sided_p,
    two_sample_ttest, zscore_outliers, ChannelStats, TTestResult, TTestVariant,
};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use crate::error::{Error, Result};

/// A multichannel sampled signal.
///
/// `samples` is time-major: row `t` holds one value per channel, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    sample_rate: f64,
    samples: Array2<f64>,
    channel_mask: Vec<bool>,
    meta: BTreeMap<String, String>,
}

impl Recording {
    /// Builds a recording with every channel active and empty metadata.
    pub fn new(sample_rate: f64, samples: Array2<f64>) -> Result<Self> {
        let m = samples.ncols();
        Self::with_mask(sample_rate, samples, vec![true; m], BTreeMap::new())
    }

    pub fn with_mask(
        sample_rate: f64,
        samples: Array2<f64>,
        channel_mask: Vec<bool>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate must be positive and finite, got {sample_rate}"
            )));
        }
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::invalid(format!(
                "recording must have at least one sample and one channel, got {}x{}",
                samples.nrows(),
                samples.ncols()
            )));
        }
        if channel_mask.len() != samples.ncols() {
            return Err(Error::invalid(format!(
                "channel mask has {} entries for {} channels",
                channel_mask.len(),
                samples.ncols()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite sample at flat index {pos}"
            )));
        }
        Ok(Self {
            sample_rate,
            samples,
            channel_mask,
            meta,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn duration_secs(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn channel(&self, index: usize) -> ArrayView1<'_, f64> {
        self.samples.column(index)
    }

    pub fn channel_mask(&self) -> &[bool] {
        &self.channel_mask
    }

    pub fn active_channels(&self) -> Vec<usize> {
        self.channel_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    pub fn set_channel_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.num_channels() {
            return Err(Error::invalid(format!(
                "channel mask has {} entries for {} channels",
                mask.len(),
                self.num_channels()
            )));
        }
        self.channel_mask = mask;
        Ok(())
    }

    /// Returns a copy carrying `samples` but keeping rate, mask and metadata.
    pub fn with_samples(&self, samples: Array2<f64>) -> Result<Self> {
        Self::with_mask(
            self.sample_rate,
            samples,
            self.channel_mask.clone(),
            self.meta.clone(),
        )
    }

    /// Decomposes into `(sample_rate, samples, mask, meta)`.
    pub fn into_parts(self) -> (f64, Array2<f64>, Vec<bool>, BTreeMap<String, String>) {
        (self.sample_rate, self.samples, self.channel_mask, self.meta)
    }
}
