//! Spike-train statistics, cleaning thresholds, duplicate removal and
//! agreement with ground truth.
//!
//! Interspike-interval variability is reported in percent with the `n - 1`
//! standard deviation. Firing rate is `(N - 1) / (t_last - t_first)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Units at or above this interspike-interval CoV (percent) are discarded.
pub const MAX_COV_ISI_PERCENT: f64 = 30.0;
/// Units at or above this firing rate (Hz) are discarded.
pub const MAX_FIRING_RATE_HZ: f64 = 35.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorUnit {
    pub spikes: Vec<usize>,
    pub sample_rate: f64,
    pub sil: f64,
    pub cov_isi: f64,
    pub firing_rate: f64,
}

impl MotorUnit {
    /// Computes the discharge statistics for a spike train (needs at least 3 spikes).
    pub fn new(spikes: Vec<usize>, sample_rate: f64, sil: f64) -> Result<Self> {
        if !spikes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("spike indices must be strictly increasing"));
        }
        let cov_isi = cov_isi(&spikes, sample_rate)?;
        let firing_rate = firing_rate(&spikes, sample_rate)?;
        Ok(Self {
            spikes,
            sample_rate,
            sil,
            cov_isi,
            firing_rate,
        })
    }
}

fn check_count(spikes: &[usize], needed: usize) -> Result<()> {
    if spikes.len() < needed {
        return Err(Error::InsufficientSpikes {
            needed,
            got: spikes.len(),
        });
    }
    Ok(())
}

/// Coefficient of variation of the interspike intervals, in percent.
pub fn cov_isi(spikes: &[usize], sample_rate: f64) -> Result<f64> {
    check_count(spikes, 3)?;
    let isi: Vec<f64> = spikes
        .windows(2)
        .map(|w| (w[1] as f64 - w[0] as f64) / sample_rate)
        .collect();
    let n = isi.len() as f64;
    let mean = isi.iter().sum::<f64>() / n;
    let var = isi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(100.0 * var.sqrt() / mean)
}

/// Mean discharge rate in Hz over the span of the train.
pub fn firing_rate(spikes: &[usize], sample_rate: f64) -> Result<f64> {
    check_count(spikes, 2)?;
    let span = (spikes[spikes.len() - 1] as f64 - spikes[0] as f64) / sample_rate;
    if span <= 0.0 {
        return Err(Error::invalid("spikes must span a positive duration"));
    }
    Ok((spikes.len() - 1) as f64 / span)
}

/// Keeps units with CoV below 30 % and firing rate below 35 Hz, in input order.
pub fn clean_units(units: &[MotorUnit]) -> Vec<MotorUnit> {
    units
        .iter()
        .filter(|u| u.cov_isi < MAX_COV_ISI_PERCENT && u.firing_rate < MAX_FIRING_RATE_HZ)
        .cloned()
        .collect()
}

pub fn ms_to_samples(ms: f64, sample_rate: f64) -> usize {
    (ms * 1e-3 * sample_rate).round() as usize
}

/// Size of a maximum one-to-one matching where `a[i]` and `b[j] + lag` pair
/// when they differ by at most `tol` samples.
///
/// Both inputs must be sorted ascending. A two-pointer sweep is optimal for
/// interval-tolerance matching on the line.
pub fn matched_count(a: &[usize], b: &[usize], tol: usize, lag: i64) -> usize {
    let (mut i, mut j, mut matched) = (0, 0, 0);
    let tol = tol as i64;
    while i < a.len() && j < b.len() {
        let d = a[i] as i64 - (b[j] as i64 + lag);
        if d.abs() <= tol {
            matched += 1;
            i += 1;
            j += 1;
        } else if d < 0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    matched
}

/// `matched / (matched + missed + false positives)` for sorted spike lists.
pub fn rate_of_agreement(est: &[usize], truth: &[usize], tol: usize) -> f64 {
    agreement_from_counts(matched_count(est, truth, tol, 0), est.len(), truth.len())
}

fn agreement_from_counts(matched: usize, n_est: usize, n_truth: usize) -> f64 {
    let denom = n_est + n_truth - matched;
    if denom == 0 {
        1.0
    } else {
        matched as f64 / denom as f64
    }
}

/// Rate of agreement after shifting `est` by the constant lag in
/// `[-max_lag, max_lag]` that maximizes matches (smallest `|lag|` on ties).
///
/// Returns `(roa, lag)` where `est[i] - lag` is compared against `truth`.
pub fn rate_of_agreement_aligned(
    est: &[usize],
    truth: &[usize],
    tol: usize,
    max_lag: usize,
) -> (f64, i64) {
    let (matched, lag) = best_lag(truth, est, tol, max_lag);
    (agreement_from_counts(matched, est.len(), truth.len()), lag)
}

/// Aligned rate of agreement that ignores truth spikes the lag would place
/// outside `[0, num_samples)`, since no estimate can observe them.
///
/// The lag maximizing the agreement wins (smallest `|lag|` on ties); it has
/// the same meaning as in [`rate_of_agreement_aligned`].
pub fn rate_of_agreement_observed(
    est: &[usize],
    truth: &[usize],
    tol: usize,
    max_lag: usize,
    num_samples: usize,
) -> (f64, i64) {
    let mut best = (f64::NEG_INFINITY, 0i64);
    let max_lag = max_lag as i64;
    for mag in 0..=max_lag {
        for lag in if mag == 0 { vec![0] } else { vec![-mag, mag] } {
            let visible: Vec<usize> = truth
                .iter()
                .copied()
                .filter(|&t| (0..num_samples as i64).contains(&(t as i64 + lag)))
                .collect();
            let matched = matched_count(est, &visible, tol, lag);
            let roa = agreement_from_counts(matched, est.len(), visible.len());
            if roa > best.0 {
                best = (roa, lag);
            }
        }
    }
    best
}

fn best_lag(a: &[usize], b: &[usize], tol: usize, max_lag: usize) -> (usize, i64) {
    let max_lag = max_lag as i64;
    let mut best = (matched_count(a, b, tol, 0), 0i64);
    for mag in 1..=max_lag {
        for lag in [-mag, mag] {
            // b[j] + lag is compared to a[i]; report the shift applied to `b`.
            let m = matched_count(a, b, tol, lag);
            if m > best.0 {
                best = (m, -lag);
            }
        }
    }
    best
}

/// Fraction of the smaller train's spikes that the other train also contains.
pub fn shared_fraction(a: &[usize], b: &[usize], tol: usize, max_lag: usize) -> f64 {
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        return 0.0;
    }
    best_lag(a, b, tol, max_lag).0 as f64 / smaller as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupParams {
    /// Pairs sharing more than this fraction of the smaller train are duplicates.
    pub share_threshold: f64,
    pub tol_ms: f64,
    /// Largest constant offset searched when comparing trains; 0 disables the search.
    pub max_lag_ms: f64,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            share_threshold: 0.3,
            tol_ms: 0.5,
            max_lag_ms: 0.0,
        }
    }
}

/// Indices (ascending) of the trains that survive duplicate removal.
///
/// Trains are visited in descending SIL order (ties by index); a train is
/// kept unless it shares more than the threshold with an already kept one.
pub fn dedup_indices(
    trains: &[&[usize]],
    sils: &[f64],
    sample_rate: f64,
    params: &DedupParams,
) -> Vec<usize> {
    let tol = ms_to_samples(params.tol_ms, sample_rate);
    let max_lag = ms_to_samples(params.max_lag_ms, sample_rate);
    let mut order: Vec<usize> = (0..trains.len()).collect();
    order.sort_by(|&a, &b| sils[b].total_cmp(&sils[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let duplicate = kept.iter().any(|&k| {
            shared_fraction(trains[k], trains[idx], tol, max_lag) > params.share_threshold
        });
        if !duplicate {
            kept.push(idx);
        }
    }
    kept.sort_unstable();
    kept
}

pub fn dedup_units(units: &[MotorUnit], params: &DedupParams) -> Vec<MotorUnit> {
    let Some(first) = units.first() else {
        return Vec::new();
    };
    let trains: Vec<&[usize]> = units.iter().map(|u| u.spikes.as_slice()).collect();
    let sils: Vec<f64> = units.iter().map(|u| u.sil).collect();
    dedup_indices(&trains, &sils, first.sample_rate, params)
        .into_iter()
        .map(|i| units[i].clone())
        .collect()
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub sample_rate: f64,
    pub count_before_cleaning: usize,
    pub count_after_cleaning: usize,
    pub mean_sil: f64,
    pub mean_cov_isi: f64,
    pub mean_firing_rate: f64,
    pub units: Vec<MotorUnit>,
}

impl DecompositionReport {
    /// Cleans `units` and summarizes the survivors.
    pub fn from_units(units: &[MotorUnit], sample_rate: f64, config_hash: String) -> Self {
        let cleaned = clean_units(units);
        let mean = |f: fn(&MotorUnit) -> f64| {
            if cleaned.is_empty() {
                0.0
            } else {
                cleaned.iter().map(f).sum::<f64>() / cleaned.len() as f64
            }
        };
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash,
            sample_rate,
            count_before_cleaning: units.len(),
            count_after_cleaning: cleaned.len(),
            mean_sil: mean(|u| u.sil),
            mean_cov_isi: mean(|u| u.cov_isi),
            mean_firing_rate: mean(|u| u.firing_rate),
            units: cleaned,
        }
    }
}

pub const AGREEMENT_SCHEMA_VERSION: u32 = 1;

/// Best ground-truth partner of one estimated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMatch {
    pub unit: usize,
    pub truth_unit: Option<usize>,
    pub roa: f64,
    /// Constant offset of the estimate relative to the truth, in samples.
    pub lag_samples: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgreementParams {
    pub tol_samples: usize,
    pub max_lag_ms: f64,
    /// A truth unit counts as recovered when some estimate reaches this RoA.
    pub recovery_roa: f64,
    pub dedup: DedupParams,
}

impl Default for AgreementParams {
    fn default() -> Self {
        Self {
            tol_samples: 1,
            max_lag_ms: 25.0,
            recovery_roa: 0.9,
            dedup: DedupParams {
                max_lag_ms: 25.0,
                ..DedupParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub schema_version: u32,
    pub params: AgreementParams,
    pub count_input: usize,
    pub count_after_cleaning: usize,
    pub count_after_dedup: usize,
    pub matches: Vec<UnitMatch>,
    /// Distinct truth units matched at or above `recovery_roa`.
    pub recovered: usize,
    pub num_truth_units: usize,
}

/// Pairs each unit with the truth train of highest observed RoA (lowest index on ties).
pub fn match_units(
    units: &[MotorUnit],
    truths: &[&[usize]],
    tol: usize,
    max_lag: usize,
    num_samples: usize,
) -> Vec<UnitMatch> {
    units
        .iter()
        .enumerate()
        .map(|(unit, u)| {
            let mut best = UnitMatch {
                unit,
                truth_unit: None,
                roa: 0.0,
                lag_samples: 0,
            };
            for (k, t) in truths.iter().enumerate() {
                let (roa, lag) = rate_of_agreement_observed(&u.spikes, t, tol, max_lag, num_samples);
                if roa > best.roa {
                    best = UnitMatch {
                        unit,
                        truth_unit: Some(k),
                        roa,
                        lag_samples: lag,
                    };
                }
            }
            best
        })
        .collect()
}

/// Cleans and deduplicates `units`, then scores them against ground-truth trains.
pub fn assess_against_truth(
    units: &[MotorUnit],
    truths: &[&[usize]],
    num_samples: usize,
    params: &AgreementParams,
) -> AgreementReport {
    let cleaned = clean_units(units);
    let kept = dedup_units(&cleaned, &params.dedup);
    let fs = kept.first().map_or(1.0, |u| u.sample_rate);
    let matches = match_units(
        &kept,
        truths,
        params.tol_samples,
        ms_to_samples(params.max_lag_ms, fs),
        num_samples,
    );
    let mut hit = vec![false; truths.len()];
    for m in &matches {
        if let Some(k) = m.truth_unit.filter(|_| m.roa >= params.recovery_roa) {
            hit[k] = true;
        }
    }
    AgreementReport {
        schema_version: AGREEMENT_SCHEMA_VERSION,
        params: *params,
        count_input: units.len(),
        count_after_cleaning: cleaned.len(),
        count_after_dedup: kept.len(),
        matches,
        recovered: hit.iter().filter(|&&h| h).count(),
        num_truth_units: truths.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 1000.0;

    fn unit(spikes: Vec<usize>, sil: f64) -> MotorUnit {
        MotorUnit::new(spikes, FS, sil).unwrap()
    }

    #[test]
    fn cov_of_periodic_train_is_zero() {
        let s: Vec<usize> = (0..20).map(|i| 100 * i).collect();
        assert!(cov_isi(&s, FS).unwrap().abs() < 1e-9);
    }

    #[test]
    fn cov_hand_example() {
        // ISIs 100, 100, 200 ms
        let c = cov_isi(&[0, 100, 200, 400], FS).unwrap();
        assert!((c - 43.301_270_189_221_93).abs() < 1e-9, "{c}");
    }

    #[test]
    fn too_few_spikes() {
        assert!(matches!(
            cov_isi(&[0, 10], FS),
            Err(Error::InsufficientSpikes { needed: 3, got: 2 })
        ));
        assert!(matches!(
            firing_rate(&[5], FS),
            Err(Error::InsufficientSpikes { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn firing_rate_examples() {
        let s: Vec<usize> = (0..21).map(|i| 100 * i).collect();
        assert!((firing_rate(&s, FS).unwrap() - 10.0).abs() < 1e-12);
        assert!((firing_rate(&[0, 500], FS).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cleaning_thresholds() {
        let good = MotorUnit {
            spikes: vec![],
            sample_rate: FS,
            sil: 0.92,
            cov_isi: 22.8,
            firing_rate: 12.46,
        };
        let irregular = unit(vec![0, 100, 200, 400], 0.9);
        let fast = unit((0..50).map(|i| 25 * i).collect(), 0.9);
        let kept = clean_units(&[irregular, good.clone(), fast]);
        assert_eq!(kept, vec![good]);
        assert!(clean_units(&[]).is_empty());
    }

    #[test]
    fn roa_examples() {
        assert_eq!(rate_of_agreement(&[1, 5, 9], &[1, 5, 9], 0), 1.0);
        assert_eq!(rate_of_agreement(&[1, 5, 9], &[100, 200], 2), 0.0);
        let roa = rate_of_agreement(&[101, 205, 400], &[100, 200, 300], 2);
        assert!((roa - 0.2).abs() < 1e-12);
    }

    #[test]
    fn aligned_roa_finds_constant_offset() {
        let truth: Vec<usize> = (1..30).map(|i| 97 * i).collect();
        let est: Vec<usize> = truth.iter().map(|s| s + 7).collect();
        assert!(rate_of_agreement(&est, &truth, 1) < 0.1);
        let (roa, lag) = rate_of_agreement_aligned(&est, &truth, 0, 10);
        assert_eq!(roa, 1.0);
        assert_eq!(lag, 7);
    }

    #[test]
    fn dedup_keeps_higher_sil() {
        let s: Vec<usize> = (0..20).map(|i| 100 * i + 3).collect();
        let a = unit(s.clone(), 0.9);
        let b = unit(s, 0.95);
        let kept = dedup_units(&[a, b.clone()], &DedupParams::default());
        assert_eq!(kept, vec![b]);

        let c = unit((0..20).map(|i| 100 * i + 50).collect(), 0.5);
        let d = unit((0..20).map(|i| 100 * i).collect(), 0.6);
        assert_eq!(dedup_units(&[c, d], &DedupParams::default()).len(), 2);
    }

    #[test]
    fn dedup_chain_keeps_far_end() {
        // A~B and B~C share half their spikes, A and C share none.
        let a: Vec<usize> = (0..10).map(|i| 100 * i).collect();
        let mut b: Vec<usize> = (0..5).map(|i| 100 * i).collect();
        b.extend((5..10).map(|i| 100 * i + 50));
        let mut c: Vec<usize> = (0..5).map(|i| 100 * i + 30).collect();
        c.extend((5..10).map(|i| 100 * i + 50));
        c.sort_unstable();
        let units = [unit(a.clone(), 0.95), unit(b, 0.9), unit(c.clone(), 0.8)];
        let kept = dedup_units(&units, &DedupParams::default());
        let kept_spikes: Vec<Vec<usize>> = kept.into_iter().map(|u| u.spikes).collect();
        assert_eq!(kept_spikes, vec![a, c]);
    }

    fn train_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::btree_set(0usize..5000, 3..60).prop_map(|s| s.into_iter().collect())
    }

    #[test]
    fn truth_matching_picks_the_best_partner_and_counts_recoveries() {
        let a: Vec<usize> = (1..20).map(|i| 100 * i).collect();
        let b: Vec<usize> = (1..20).map(|i| 100 * i + 37).collect();
        let est = vec![unit(b.iter().map(|v| v + 3).collect(), 0.9), unit(a.clone(), 0.95)];
        let m = match_units(&est, &[&a, &b], 0, 5, 3000);
        assert_eq!((m[0].truth_unit, m[0].roa, m[0].lag_samples), (Some(1), 1.0, 3));
        assert_eq!((m[1].truth_unit, m[1].roa), (Some(0), 1.0));
        let report = assess_against_truth(&est, &[&a, &b], 3000, &AgreementParams::default());
        assert_eq!(report.recovered, 2);
        assert_eq!(report.count_after_dedup, 2);
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_time_shift(s in train_strategy(), shift in 0usize..10_000) {
            prop_assume!(s[0] != s[s.len() - 1]);
            let shifted: Vec<usize> = s.iter().map(|v| v + shift).collect();
            prop_assert!((cov_isi(&s, FS).unwrap() - cov_isi(&shifted, FS).unwrap()).abs() < 1e-9);
            prop_assert!((firing_rate(&s, FS).unwrap() - firing_rate(&shifted, FS).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn roa_is_symmetric(a in train_strategy(), b in train_strategy(), tol in 0usize..5) {
            prop_assert_eq!(rate_of_agreement(&a, &b, tol), rate_of_agreement(&b, &a, tol));
            prop_assert_eq!(rate_of_agreement(&a, &a, tol), 1.0);
        }

        #[test]
        fn cleaning_and_dedup_are_idempotent(trains in prop::collection::vec(train_strategy(), 0..6)) {
            let units: Vec<MotorUnit> = trains
                .into_iter()
                .enumerate()
                .filter_map(|(i, s)| MotorUnit::new(s, FS, 0.5 + 0.05 * i as f64).ok())
                .collect();
            let cleaned = clean_units(&units);
            prop_assert_eq!(clean_units(&cleaned), cleaned.clone());
            let params = DedupParams { share_threshold: 0.3, tol_ms: 5.0, max_lag_ms: 0.0 };
            let once = dedup_units(&units, &params);
            prop_assert_eq!(dedup_units(&once, &params), once.clone());
        }
    }
}
