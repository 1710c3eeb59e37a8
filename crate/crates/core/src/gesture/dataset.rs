use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Recording;

pub const GESTURE_NAMES: [&str; 7] = [
    "flexion",
    "extension",
    "radial deviation",
    "ulnar deviation",
    "pronation",
    "supination",
    "hand closing",
];

pub const DEFAULT_WINDOW_MS: f64 = 250.0;

/// Equal-shape labeled windows, each `window_samples x num_channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    windows: Vec<Array2<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
    sample_rate: f64,
    class_names: Vec<String>,
}

impl WindowedDataset {
    pub fn new(
        windows: Vec<Array2<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
        sample_rate: f64,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if windows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} windows but {} labels",
                windows.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be at least 1"));
        }
        if let Some(first) = windows.first() {
            if let Some(w) = windows.iter().find(|w| w.dim() != first.dim()) {
                return Err(Error::invalid(format!(
                    "window shape {:?} differs from {:?}",
                    w.dim(),
                    first.dim()
                )));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {l} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            windows,
            labels,
            num_classes,
            sample_rate,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows(&self) -> &[Array2<f64>] {
        &self.windows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn window_samples(&self) -> usize {
        self.windows.first().map_or(0, |w| w.nrows())
    }

    pub fn num_channels(&self) -> usize {
        self.windows.first().map_or(0, |w| w.ncols())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            sample_rate: self.sample_rate,
            class_names: self.class_names.clone(),
        }
    }

    /// Applies `f` to every window, keeping labels.
    pub fn map_windows(
        &self,
        mut f: impl FnMut(&Array2<f64>) -> Result<Array2<f64>>,
    ) -> Result<Self> {
        let windows = self.windows.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(
            windows,
            self.labels.clone(),
            self.num_classes,
            self.sample_rate,
            self.class_names.clone(),
        )
    }
}

/// Half-open sample range `[start, end)` carrying one class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInterval {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

/// Cuts consecutive non-overlapping windows from the start of the recording.
///
/// A window is kept when one labeled interval encloses it; the trailing
/// remainder is dropped.
pub fn segment_windows(
    rec: &Recording,
    window_ms: f64,
    labels: &[LabeledInterval],
    num_classes: usize,
) -> Result<WindowedDataset> {
    let window = (window_ms * 1e-3 * rec.sample_rate()).round() as usize;
    if window == 0 || rec.num_samples() < window {
        return Err(Error::invalid(format!(
            "recording of {} samples holds no full {window}-sample window",
            rec.num_samples()
        )));
    }
    let mut windows = Vec::new();
    let mut out_labels = Vec::new();
    for k in 0..rec.num_samples() / window {
        let (start, end) = (k * window, (k + 1) * window);
        if let Some(iv) = labels.iter().find(|iv| iv.start <= start && end <= iv.end) {
            windows.push(rec.samples().slice(s![start..end, ..]).to_owned());
            out_labels.push(iv.label);
        }
    }
    let names = super::GESTURE_NAMES
        .iter()
        .take(num_classes)
        .map(|s| s.to_string())
        .collect();
    WindowedDataset::new(windows, out_labels, num_classes, rec.sample_rate(), names)
}

/// Seeded shuffle of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Shuffled partition of window indices into `(train, test)` with `round(frac * N)` training windows.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 windows to split, got {n}")));
    }
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::invalid(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let idx = shuffled_indices(n, seed);
    let n_train = (train_frac * n as f64).round() as usize;
    let test = idx[n_train..].to_vec();
    let mut train = idx;
    train.truncate(n_train);
    Ok((train, test))
}

pub fn split_dataset(
    ds: &WindowedDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let (train, test) = split_indices(ds.len(), train_frac, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(n: usize) -> Recording {
        Recording::new(2000.0, Array2::from_shape_fn((n, 3), |(t, c)| (t * 3 + c) as f64)).unwrap()
    }

    fn whole(n: usize) -> Vec<LabeledInterval> {
        vec![LabeledInterval {
            start: 0,
            end: n,
            label: 2,
        }]
    }

    #[test]
    fn ten_seconds_make_forty_windows() {
        let ds = segment_windows(&recording(20_000), 250.0, &whole(20_000), 7).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.window_samples(), 500);
        assert!(ds.labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn too_short_for_a_window() {
        assert!(segment_windows(&recording(499), 250.0, &whole(499), 7).is_err());
    }

    #[test]
    fn windows_do_not_overlap() {
        let ds = segment_windows(&recording(1000), 250.0, &whole(1000), 7).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.windows()[0][[0, 0]], 0.0);
        assert_eq!(ds.windows()[1][[0, 0]], 1500.0);
    }

    #[test]
    fn label_comes_from_enclosing_interval() {
        let labels = [
            LabeledInterval { start: 0, end: 1000, label: 0 },
            LabeledInterval { start: 1000, end: 1700, label: 1 },
        ];
        // windows [0,500) [500,1000) -> 0, [1000,1500) -> 1, [1500,2000) straddles -> dropped
        let ds = segment_windows(&recording(2000), 250.0, &labels, 2).unwrap();
        assert_eq!(ds.labels(), &[0, 0, 1]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (tr, te) = split_indices(10, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.8, 3).unwrap(), (tr.clone(), te));
        let differs = (4..9).any(|s| split_indices(10, 0.8, s).unwrap().0 != tr);
        assert!(differs);
        assert!(split_indices(1, 0.8, 0).is_err());
    }
}
