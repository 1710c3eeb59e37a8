use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Local maxima of `activity^2`, suppressed greedily from the highest down
/// so that accepted peaks are at least `min_distance` samples apart.
///
/// Returned indices are ascending. Ties in height favour the earlier sample.
pub fn detect_peaks_samples(activity: &[f64], min_distance: usize) -> Vec<usize> {
    let n = activity.len();
    let h = |i: usize| activity[i] * activity[i];
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = h(i);
            v > 0.0 && (i == 0 || v > h(i - 1)) && (i + 1 == n || v >= h(i + 1))
        })
        .collect();
    candidates.sort_by(|&a, &b| h(b).total_cmp(&h(a)).then(a.cmp(&b)));

    let mut accepted = BTreeSet::new();
    for i in candidates {
        let lo = i.saturating_sub(min_distance.saturating_sub(1));
        let hi = i + min_distance.saturating_sub(1);
        if accepted.range(lo..=hi).next().is_none() {
            accepted.insert(i);
        }
    }
    accepted.into_iter().collect()
}

pub fn detect_peaks(activity: &[f64], min_distance_ms: f64, sample_rate: f64) -> Vec<usize> {
    let min_distance = (min_distance_ms * 1e-3 * sample_rate).round() as usize;
    detect_peaks_samples(activity, min_distance)
}

/// Two-cluster split of scalar peak heights.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakClasses {
    /// Indices into the height slice, ascending, of the high-centroid class.
    pub spike: Vec<usize>,
    pub noise: Vec<usize>,
    pub spike_centroid: f64,
    pub noise_centroid: f64,
    pub sil: f64,
    /// Within-cluster sum of squares of the split.
    pub sse: f64,
}

/// Separation score of a two-cluster split.
///
/// `(between - within) / max(between, within)` over the spike (high) class:
/// `within` sums squared distances of its points to their own centroid and
/// `between` to the noise centroid.
pub fn silhouette(heights: &[f64], in_high: &[bool]) -> (f64, f64, f64) {
    let (mut s_hi, mut n_hi, mut s_lo, mut n_lo) = (0.0, 0usize, 0.0, 0usize);
    for (&h, &hi) in heights.iter().zip(in_high) {
        if hi {
            s_hi += h;
            n_hi += 1;
        } else {
            s_lo += h;
            n_lo += 1;
        }
    }
    let (c_hi, c_lo) = (s_hi / n_hi as f64, s_lo / n_lo as f64);
    let (mut within, mut between) = (0.0, 0.0);
    for (&h, _) in heights.iter().zip(in_high).filter(|(_, &hi)| hi) {
        within += (h - c_hi).powi(2);
        between += (h - c_lo).powi(2);
    }
    let sil = (between - within) / between.max(within);
    (sil, c_hi, c_lo)
}

/// Optimal two-means clustering of scalar heights.
///
/// In one dimension the optimal partition is a threshold on the sorted
/// values, so every threshold between distinct values is scored exactly
/// (prefix sums) and the lowest within-cluster sum of squares wins. Ties go
/// to the higher silhouette, then to the larger spike class.
pub fn classify_peaks(heights: &[f64]) -> Result<PeakClasses> {
    let n = heights.len();
    if n < 2 {
        return Err(Error::DegenerateCluster(format!(
            "need at least 2 peaks, got {n}"
        )));
    }
    if heights.iter().any(|h| !h.is_finite()) {
        return Err(Error::invalid("non-finite peak height"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| heights[a].total_cmp(&heights[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| heights[i]).collect();

    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, &v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse_range = |a: usize, b: usize| {
        let cnt = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a] - s * s / cnt).max(0.0)
    };

    let splits: Vec<(usize, f64)> = (1..n)
        .filter(|&k| sorted[k - 1] < sorted[k])
        .map(|k| (k, sse_range(0, k) + sse_range(k, n)))
        .collect();
    let Some(min_sse) = splits.iter().map(|&(_, s)| s).min_by(f64::total_cmp) else {
        return Err(Error::DegenerateCluster("all peak heights are equal".into()));
    };
    let scale = prefix_sq[n].max(f64::MIN_POSITIVE);
    let mut best: Option<(usize, f64, f64)> = None;
    for &(k, sse) in &splits {
        if sse - min_sse > 1e-12 * scale {
            continue;
        }
        let in_high: Vec<bool> = (0..n).map(|i| i >= k).collect();
        let (sil, _, _) = silhouette(&sorted, &in_high);
        if best.is_none_or(|(_, _, s)| sil > s) {
            best = Some((k, sse, sil));
        }
    }
    let (k, sse, sil) = best.expect("at least one optimal split");

    let mut spike: Vec<usize> = order[k..].to_vec();
    let mut noise: Vec<usize> = order[..k].to_vec();
    spike.sort_unstable();
    noise.sort_unstable();
    Ok(PeakClasses {
        spike,
        noise,
        spike_centroid: (prefix[n] - prefix[k]) / (n - k) as f64,
        noise_centroid: prefix[k] / k as f64,
        sil,
        sse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_train_is_recovered() {
        let mut a = vec![0.0; 1000];
        for i in (50..1000).step_by(100) {
            a[i] = 1.0;
        }
        let expected: Vec<usize> = (50..1000).step_by(100).collect();
        assert_eq!(detect_peaks_samples(&a, 50), expected);
    }

    #[test]
    fn close_peaks_keep_the_larger() {
        let mut a = vec![0.0; 200];
        a[100] = 2.0;
        a[110] = -3.0;
        assert_eq!(detect_peaks_samples(&a, 50), vec![110]);
        assert!(detect_peaks_samples(&[0.0; 64], 5).is_empty());
    }

    #[test]
    fn ms_variant_converts_distance() {
        let mut a = vec![0.0; 400];
        a[100] = 1.0;
        a[130] = 0.5;
        a[200] = 1.0;
        // 20 ms at 2000 Hz = 40 samples
        assert_eq!(detect_peaks(&a, 20.0, 2000.0), vec![100, 200]);
    }

    #[test]
    fn separated_clusters_have_unit_silhouette() {
        let c = classify_peaks(&[10.0, 10.0, 1.0, 10.0, 1.0, 1.0]).unwrap();
        assert_eq!(c.spike, vec![0, 1, 3]);
        assert_eq!(c.noise, vec![2, 4, 5]);
        assert_eq!(c.sil, 1.0);
    }

    #[test]
    fn equal_heights_are_degenerate() {
        assert!(matches!(
            classify_peaks(&[1.0; 4]),
            Err(Error::DegenerateCluster(_))
        ));
        assert!(classify_peaks(&[1.0]).is_err());
    }

    #[test]
    fn small_instance_matches_contiguous_enumeration() {
        let h = [9.0, 10.0, 11.0, 1.0, 2.0, 3.0];
        let c = classify_peaks(&h).unwrap();
        assert_eq!(c.spike, vec![0, 1, 2]);
        // centroids 10 and 2: within = 2, between = 49 + 64 + 81 = 194
        assert!((c.sil - 192.0 / 194.0).abs() < 1e-12);
    }
}
