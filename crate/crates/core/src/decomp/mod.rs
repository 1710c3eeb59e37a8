//! Convolutive blind source separation of multichannel EMG into motor-unit spike trains.
//!
//! Pipeline: delay-extend the channels, whiten, then repeatedly extract one
//! source with a deflated fixed-point iteration, refine it by spike-triggered
//! averaging and keep it when its silhouette clears the cutoff.

mod extend;
mod fastica;
mod peaks;
mod whiten;

pub use extend::extend;
pub use fastica::{deflate, fixed_point_converge, fixed_point_iterate, normalize};
pub use peaks::{classify_peaks, detect_peaks, detect_peaks_samples, silhouette, PeakClasses};
pub use whiten::{covariance, whiten, WhitenRegularization, Whitened};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::config_hash;
use crate::metrics::{dedup_indices, DecompositionReport, DedupParams, MotorUnit};
use crate::signal::Recording;

/// Fewest spikes a refined source may carry.
pub const MIN_SPIKES: usize = 8;
/// Fewest active channels `decompose` accepts.
pub const MIN_CHANNELS: usize = 8;
/// Target extended dimension when the extension factor is left to the default.
pub const TARGET_EXTENDED_ROWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompParams {
    /// Delays per channel; `None` picks `round(1000 / m) - 1`.
    pub extension_factor: Option<usize>,
    pub max_sources: usize,
    pub sil_cutoff: f64,
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
    pub refine_max_iters: usize,
    pub whiten_reg: WhitenRegularization,
    pub min_peak_distance_ms: f64,
    /// Refined sources with a less regular discharge than this are rejected.
    pub max_cov_isi_percent: f64,
    /// Radius around used initializations and accepted spikes excluded from later initializations.
    pub init_exclusion_ms: f64,
    /// Duplicate removal among accepted sources (lag-aware).
    pub dedup: DedupParams,
    pub seed: u64,
}

impl Default for DecompParams {
    fn default() -> Self {
        Self {
            extension_factor: None,
            max_sources: 200,
            sil_cutoff: 0.85,
            fixed_point_tol: 1e-4,
            max_fixed_point_iters: 100,
            refine_max_iters: 20,
            whiten_reg: WhitenRegularization::LowerHalfMean,
            min_peak_distance_ms: 20.0,
            max_cov_isi_percent: 40.0,
            init_exclusion_ms: 5.0,
            dedup: DedupParams {
                max_lag_ms: 25.0,
                ..DedupParams::default()
            },
            seed: 0,
        }
    }
}

impl DecompParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sil_cutoff > 0.0 && self.sil_cutoff < 1.0) {
            return Err(Error::invalid(format!(
                "sil_cutoff {} outside (0, 1)",
                self.sil_cutoff
            )));
        }
        if self.max_sources == 0 || self.max_fixed_point_iters == 0 || self.refine_max_iters == 0 {
            return Err(Error::invalid("iteration budgets must be at least 1"));
        }
        if !(self.fixed_point_tol > 0.0) {
            return Err(Error::invalid("fixed_point_tol must be positive"));
        }
        if !(self.max_cov_isi_percent > 0.0) {
            return Err(Error::invalid("max_cov_isi_percent must be positive"));
        }
        if !(self.min_peak_distance_ms >= 0.0) || !(self.init_exclusion_ms >= 0.0) {
            return Err(Error::invalid("distances must be non-negative"));
        }
        Ok(())
    }

    pub fn extension_for(&self, channels: usize) -> usize {
        self.extension_factor.unwrap_or_else(|| {
            ((TARGET_EXTENDED_ROWS as f64 / channels.max(1) as f64).round() as usize).saturating_sub(1)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceEstimate {
    /// Projected source, one value per sample, sign-canonicalized.
    pub activity: Vec<f64>,
    /// Strictly increasing sample indices.
    pub spikes: Vec<usize>,
    pub sil: f64,
    /// Unit-norm separation vector in whitened space.
    pub vector: Array1<f64>,
    pub cov_isi: f64,
}

/// Whitened data plus the bookkeeping that maps it back to the recording.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub whitened: Whitened,
    pub extension: usize,
    pub channels: Vec<usize>,
}

/// Extends and whitens the active channels of a recording.
pub fn prepare(rec: &Recording, params: &DecompParams) -> Result<Prepared> {
    let channels = rec.active_channels();
    let m = channels.len();
    if m < MIN_CHANNELS {
        return Err(Error::invalid(format!(
            "{m} active channels, decomposition needs at least {MIN_CHANNELS}"
        )));
    }
    let extension = params.extension_for(m);
    let rows = (extension + 1) * m;
    if rec.num_samples() <= 10 * rows {
        return Err(Error::invalid(format!(
            "{} samples are too few for {rows} extended rows",
            rec.num_samples()
        )));
    }
    let x = rec.samples().select(Axis(1), &channels);
    let whitened = whiten(extend(x.view(), extension)?, params.whiten_reg)?;
    Ok(Prepared {
        whitened,
        extension,
        channels,
    })
}

fn cov_isi_percent(spikes: &[usize]) -> f64 {
    let isi: Vec<f64> = spikes.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let n = isi.len() as f64;
    let mean = isi.iter().sum::<f64>() / n;
    let var = isi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    100.0 * var.sqrt() / mean
}

struct Projection {
    activity: Vec<f64>,
    spikes: Vec<usize>,
    sil: f64,
}

fn project(w: &Array1<f64>, z: &Array2<f64>, min_distance: usize) -> Result<Projection> {
    let activity = z.dot(w).to_vec();
    let peaks = detect_peaks_samples(&activity, min_distance);
    if peaks.len() < MIN_SPIKES {
        return Err(Error::SourceRejected(format!(
            "{} peaks, need {MIN_SPIKES}",
            peaks.len()
        )));
    }
    let heights: Vec<f64> = peaks.iter().map(|&p| activity[p] * activity[p]).collect();
    let classes = classify_peaks(&heights)
        .map_err(|e| Error::SourceRejected(e.to_string()))?;
    let spikes: Vec<usize> = classes.spike.iter().map(|&i| peaks[i]).collect();
    if spikes.len() < MIN_SPIKES {
        return Err(Error::SourceRejected(format!(
            "{} spikes, need {MIN_SPIKES}",
            spikes.len()
        )));
    }
    Ok(Projection {
        activity,
        spikes,
        sil: classes.sil,
    })
}

/// Refines a converged separation vector by spike-triggered averaging.
///
/// Each round projects the source, detects and classifies peaks, and replaces
/// `w` by the normalized mean of the whitened samples at the spikes
/// (deflated against `prior`). The last estimate before the CoV of ISI stops
/// decreasing is returned, sign-flipped so spikes are positive. Sources
/// with fewer than [`MIN_SPIKES`] spikes or an implausibly irregular
/// discharge are rejected.
pub fn refine_source(
    w: &Array1<f64>,
    z: &Array2<f64>,
    prior: &[Array1<f64>],
    params: &DecompParams,
    sample_rate: f64,
) -> Result<SourceEstimate> {
    let min_distance = (params.min_peak_distance_ms * 1e-3 * sample_rate).round() as usize;
    let mut w = w.clone();
    let mut best: Option<SourceEstimate> = None;
    for _ in 0..params.refine_max_iters {
        let proj = match project(&w, z, min_distance) {
            Ok(p) => p,
            Err(e) if best.is_none() => return Err(e),
            Err(_) => break,
        };
        let cov = cov_isi_percent(&proj.spikes);
        if best.as_ref().is_some_and(|b| cov >= b.cov_isi) {
            break;
        }
        let mut next = Array1::zeros(z.ncols());
        for &t in &proj.spikes {
            next += &z.row(t);
        }
        best = Some(SourceEstimate {
            activity: proj.activity,
            spikes: proj.spikes,
            sil: proj.sil,
            vector: w,
            cov_isi: cov,
        });
        deflate(&mut next, prior);
        if normalize(&mut next).is_err() {
            break;
        }
        w = next;
    }
    let mut est = best.expect("first round either succeeds or returns");
    if est.cov_isi >= params.max_cov_isi_percent {
        return Err(Error::SourceRejected(format!(
            "CoV of ISI {:.1}% exceeds {}%",
            est.cov_isi, params.max_cov_isi_percent
        )));
    }
    let spike_mean: f64 =
        est.spikes.iter().map(|&t| est.activity[t]).sum::<f64>() / est.spikes.len() as f64;
    if spike_mean < 0.0 {
        est.vector.mapv_inplace(|v| -v);
        est.activity.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(est)
}

fn random_unit(k: usize, rng: &mut ChaCha8Rng, prior: &[Array1<f64>]) -> Result<Array1<f64>> {
    let mut w = Array1::from_shape_simple_fn(k, || StandardNormal.sample(rng));
    deflate(&mut w, prior);
    normalize(&mut w)?;
    Ok(w)
}

/// Runs `max_sources` extraction attempts on a prepared recording.
pub fn decompose_prepared(
    prepared: &Prepared,
    sample_rate: f64,
    params: &DecompParams,
) -> Result<Vec<SourceEstimate>> {
    params.validate()?;
    let z = &prepared.whitened.data;
    let (t_len, k) = z.dim();
    let energy: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut excluded = vec![false; t_len];
    let radius = (params.init_exclusion_ms * 1e-3 * sample_rate).round() as usize;
    let exclude = |excluded: &mut Vec<bool>, t: usize| {
        let hi = (t + radius + 1).min(t_len);
        excluded[t.saturating_sub(radius)..hi].fill(true);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut accepted: Vec<SourceEstimate> = Vec::new();

    for _ in 0..params.max_sources {
        if basis.len() >= k {
            break;
        }
        let init_t = (0..t_len)
            .filter(|&t| !excluded[t])
            .fold(None, |best: Option<usize>, t| match best {
                Some(b) if energy[b] >= energy[t] => Some(b),
                _ => Some(t),
            })
            .unwrap_or_else(|| rng.random_range(0..t_len));
        exclude(&mut excluded, init_t);

        let mut init = z.row(init_t).to_owned();
        deflate(&mut init, &basis);
        if normalize(&mut init).is_err() {
            init = random_unit(k, &mut rng, &basis)?;
        }
        let mut converged = None;
        for _ in 0..3 {
            match fixed_point_converge(
                init.clone(),
                z,
                &basis,
                params.fixed_point_tol,
                params.max_fixed_point_iters,
            ) {
                Ok((w, _)) => {
                    converged = Some(w);
                    break;
                }
                Err(_) => init = random_unit(k, &mut rng, &basis)?,
            }
        }
        let Some(w) = converged else { continue };
        let est = match refine_source(&w, z, &basis, params, sample_rate) {
            Ok(e) => e,
            Err(_) => continue,
        };
        if est.sil < params.sil_cutoff {
            continue;
        }
        for &s in &est.spikes {
            exclude(&mut excluded, s);
        }
        basis.push(est.vector.clone());
        accepted.push(est);
    }

    let trains: Vec<&[usize]> = accepted.iter().map(|e| e.spikes.as_slice()).collect();
    let sils: Vec<f64> = accepted.iter().map(|e| e.sil).collect();
    let keep = dedup_indices(&trains, &sils, sample_rate, &params.dedup);
    Ok(keep.into_iter().map(|i| accepted[i].clone()).collect())
}

/// Decomposes a preprocessed recording into motor-unit source estimates.
///
/// Only channels enabled in the recording's mask are used. Every returned
/// estimate has `sil >= params.sil_cutoff`; an empty list is a valid result.
pub fn decompose(rec: &Recording, params: &DecompParams) -> Result<Vec<SourceEstimate>> {
    params.validate()?;
    let prepared = prepare(rec, params)?;
    decompose_prepared(&prepared, rec.sample_rate(), params)
}

/// Turns accepted estimates into motor units and the cleaned summary report.
pub fn build_report(
    estimates: &[SourceEstimate],
    sample_rate: f64,
    params: &DecompParams,
) -> Result<DecompositionReport> {
    let units = estimates
        .iter()
        .map(|e| MotorUnit::new(e.spikes.clone(), sample_rate, e.sil))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecompositionReport::from_units(&units, sample_rate, config_hash(params)?))
}
