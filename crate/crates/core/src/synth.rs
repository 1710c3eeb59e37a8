//! Ground-truth EMG generator.
//!
//! Each motor unit fires a renewal spike train whose intervals are Gaussian
//! around `1 / rate` (truncated at a 20 ms refractory period). Its action
//! potential is a first-derivative-of-Gaussian waveform spread over
//! neighbouring channels with a Gaussian spatial gain and a small per-channel
//! conduction delay. The recording is the sum over units of spike train
//! convolved with template, plus white Gaussian noise at a requested SNR.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, purpose,
//! index)`, so units can be generated in any order with identical results.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::{WindowedDataset, GESTURE_NAMES};
use crate::signal::Recording;

pub const REFRACTORY_MS: f64 = 20.0;
pub const MAX_SYNTH_RATE_HZ: f64 = 35.0;

/// Derives an independent stream seed; order of derivation does not matter.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ purpose) ^ index)
}

pub(crate) fn rng_for(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

const STREAM_TRAIN: u64 = 1;
const STREAM_MUAP: u64 = 2;
const STREAM_UNIT_PARAMS: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_GESTURE_CLASS: u64 = 5;
const STREAM_GESTURE_WINDOW: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub spike_samples: Vec<usize>,
    pub sample_rate: f64,
    pub duration_samples: usize,
}

impl SpikeTrain {
    pub fn new(spike_samples: Vec<usize>, sample_rate: f64, duration_samples: usize) -> Result<Self> {
        if !spike_samples.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("spike indices must be strictly increasing"));
        }
        if spike_samples.last().is_some_and(|&s| s >= duration_samples) {
            return Err(Error::invalid("spike index beyond train duration"));
        }
        Ok(Self {
            spike_samples,
            sample_rate,
            duration_samples,
        })
    }

    pub fn len(&self) -> usize {
        self.spike_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spike_samples.is_empty()
    }
}

/// Renewal spike train with truncated-Gaussian interspike intervals.
pub fn generate_spike_train(
    rate_hz: f64,
    isi_cov_percent: f64,
    duration_s: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<SpikeTrain> {
    if !(rate_hz > 0.0 && duration_s > 0.0 && sample_rate > 0.0) {
        return Err(Error::invalid(format!(
            "rate ({rate_hz} Hz), duration ({duration_s} s) and sample rate must be positive"
        )));
    }
    if !(1.0..=MAX_SYNTH_RATE_HZ).contains(&rate_hz) {
        return Err(Error::invalid(format!(
            "firing rate {rate_hz} Hz outside [1, {MAX_SYNTH_RATE_HZ}] Hz"
        )));
    }
    if !(0.0..=50.0).contains(&isi_cov_percent) {
        return Err(Error::invalid(format!(
            "ISI CoV {isi_cov_percent}% outside [0, 50]%"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_isi = 1.0 / rate_hz;
    let isi_dist = Normal::new(mean_isi, mean_isi * isi_cov_percent / 100.0)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let refractory = REFRACTORY_MS * 1e-3;
    let duration_samples = (duration_s * sample_rate).round() as usize;

    let mut spikes = Vec::with_capacity((duration_s * rate_hz * 1.2) as usize + 2);
    let mut t = rng.random::<f64>() * mean_isi;
    loop {
        let idx = (t * sample_rate).round() as usize;
        if idx >= duration_samples {
            break;
        }
        spikes.push(idx);
        let isi = loop {
            let v = isi_dist.sample(&mut rng);
            if v >= refractory {
                break v;
            }
        };
        t += isi;
    }
    SpikeTrain::new(spikes, sample_rate, duration_samples)
}

/// Multichannel action-potential template: `waveforms[[channel, lag]]` in µV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuapTemplate {
    pub waveforms: Vec<Vec<f64>>,
    pub center_channel: usize,
}

impl MuapTemplate {
    pub fn from_array(waveforms: &Array2<f64>) -> Result<Self> {
        if waveforms.ncols() == 0 || waveforms.nrows() == 0 {
            return Err(Error::invalid("template must have at least one channel and lag"));
        }
        if waveforms.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("template contains non-finite values"));
        }
        let energy: Vec<f64> = waveforms
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        let center_channel = (0..energy.len())
            .max_by(|&a, &b| energy[a].total_cmp(&energy[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        if energy[center_channel] == 0.0 {
            return Err(Error::invalid("template has no energy on any channel"));
        }
        Ok(Self {
            waveforms: waveforms.rows().into_iter().map(|r| r.to_vec()).collect(),
            center_channel,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.waveforms.len()
    }

    pub fn len(&self) -> usize {
        self.waveforms.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.num_channels(), self.len()), |(c, l)| self.waveforms[c][l])
    }
}

/// Biphasic template centred on `center_channel` with peak `|amplitude|` there.
///
/// Channel `c` carries the base waveform scaled by
/// `exp(-(c - center)^2 / (2 spread^2))` and a per-channel gain jitter in
/// `[0.7, 1]`, delayed by a seed-dependent conduction offset proportional to
/// the channel distance. The centre channel is undelayed and exactly
/// odd-symmetric, so its samples sum to zero.
pub fn generate_muap(
    num_channels: usize,
    length: usize,
    center_channel: usize,
    spread: f64,
    amplitude: f64,
    seed: u64,
) -> Result<MuapTemplate> {
    if length < 8 {
        return Err(Error::invalid(format!("template length {length} below 8 lags")));
    }
    if center_channel >= num_channels {
        return Err(Error::invalid(format!(
            "center channel {center_channel} out of range for {num_channels} channels"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("spatial spread must be positive, got {spread}")));
    }
    if amplitude == 0.0 || !amplitude.is_finite() {
        return Err(Error::invalid(format!("template amplitude must be nonzero, got {amplitude}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = length as f64 / 6.0;
    let mid = (length as f64 - 1.0) / 2.0;
    let base = |t: f64| -t / sigma * (-(t * t) / (2.0 * sigma * sigma)).exp();
    let peak = (0..length)
        .map(|l| base(l as f64 - mid).abs())
        .fold(0.0, f64::max);

    let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let velocity = direction * rng.random_range(0.2..0.8);
    let max_shift = length as f64 / 8.0;

    let mut waveforms = Array2::zeros((num_channels, length));
    for c in 0..num_channels {
        let jitter = if c == center_channel {
            1.0
        } else {
            rng.random_range(0.7..1.0)
        };
        let dist = c as f64 - center_channel as f64;
        let gain = (-(dist * dist) / (2.0 * spread * spread)).exp() * jitter;
        let shift = (velocity * dist).clamp(-max_shift, max_shift);
        for l in 0..length {
            waveforms[[c, l]] = amplitude * gain * base(l as f64 - mid - shift) / peak;
        }
    }
    MuapTemplate::from_array(&waveforms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixLayout {
    pub num_channels: usize,
    pub num_samples: usize,
    pub sample_rate: f64,
}

/// Noise-free convolutive mixture, time-major.
pub fn mix_clean(
    layout: &MixLayout,
    trains: &[SpikeTrain],
    templates: &[MuapTemplate],
) -> Result<Array2<f64>> {
    if trains.len() != templates.len() {
        return Err(Error::invalid(format!(
            "{} spike trains for {} templates",
            trains.len(),
            templates.len()
        )));
    }
    let mut clean = Array2::zeros((layout.num_samples, layout.num_channels));
    for (train, template) in trains.iter().zip(templates) {
        if template.num_channels() != layout.num_channels {
            return Err(Error::invalid(format!(
                "template has {} channels, layout has {}",
                template.num_channels(),
                layout.num_channels
            )));
        }
        for &k in &train.spike_samples {
            for (c, row) in template.waveforms.iter().enumerate() {
                for (l, &v) in row.iter().enumerate() {
                    if k + l < layout.num_samples {
                        clean[[k + l, c]] += v;
                    }
                }
            }
        }
    }
    Ok(clean)
}

/// Standard deviation of the additive noise for a clean signal and SNR.
///
/// A silent clean signal gets `noise_floor_rms`; an infinite SNR disables noise.
pub fn noise_sigma(clean: &Array2<f64>, snr_db: f64, noise_floor_rms: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len().max(1) as f64;
    if power == 0.0 {
        noise_floor_rms
    } else {
        (power / 10f64.powf(snr_db / 10.0)).sqrt()
    }
}

/// Convolutive mixture plus white Gaussian noise at `snr_db`.
pub fn mix(
    layout: &MixLayout,
    trains: &[SpikeTrain],
    templates: &[MuapTemplate],
    snr_db: f64,
    noise_floor_rms: f64,
    seed: u64,
) -> Result<Recording> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("invalid SNR {snr_db} dB")));
    }
    let mut data = mix_clean(layout, trains, templates)?;
    let sigma = noise_sigma(&data, snr_db, noise_floor_rms);
    if sigma > 0.0 {
        let mut rng = rng_for(seed, STREAM_NOISE, 0);
        for v in data.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    Recording::new(layout.sample_rate, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_channels: usize,
    pub num_units: usize,
    pub sample_rate: f64,
    pub duration_s: f64,
    pub rate_min_hz: f64,
    pub rate_max_hz: f64,
    pub isi_cov_percent: f64,
    pub muap_length_ms: f64,
    /// Standard deviation of the spatial gain, in channels.
    pub spatial_spread: f64,
    pub amplitude_min_uv: f64,
    pub amplitude_max_uv: f64,
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    /// Noise RMS used when there is no clean signal to reference the SNR against.
    pub noise_floor_uv: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_channels: 64,
            num_units: 8,
            sample_rate: 2048.0,
            duration_s: 20.0,
            rate_min_hz: 8.0,
            rate_max_hz: 15.0,
            isi_cov_percent: 15.0,
            muap_length_ms: 15.0,
            spatial_spread: 2.5,
            amplitude_min_uv: 50.0,
            amplitude_max_uv: 150.0,
            snr_db: Some(20.0),
            noise_floor_uv: 5.0,
            seed: 0,
        }
    }
}

/// Extra SNR of a gelled electrode over a dry one.
pub const WET_SNR_GAIN_DB: f64 = 3.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_channels == 0 {
            return Err(Error::invalid("num_channels must be at least 1"));
        }
        if !(self.rate_min_hz > 0.0 && self.rate_min_hz <= self.rate_max_hz) {
            return Err(Error::invalid("firing-rate range must satisfy 0 < min <= max"));
        }
        if !(self.amplitude_min_uv > 0.0 && self.amplitude_min_uv <= self.amplitude_max_uv) {
            return Err(Error::invalid("amplitude range must satisfy 0 < min <= max"));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::invalid("snr_db must be finite"));
            }
        }
        Ok(())
    }

    pub fn muap_length_samples(&self) -> usize {
        (self.muap_length_ms * 1e-3 * self.sample_rate).round() as usize
    }

    /// The same configuration with `WET_SNR_GAIN_DB` more SNR.
    pub fn wet(&self) -> Self {
        Self {
            snr_db: self.snr_db.map(|s| s + WET_SNR_GAIN_DB),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub recording: Recording,
    pub trains: Vec<SpikeTrain>,
    pub templates: Vec<MuapTemplate>,
    pub config: SynthConfig,
}

fn lerp(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generates spike trains, templates and the mixed recording for `config`.
pub fn generate(config: &SynthConfig) -> Result<GroundTruth> {
    config.validate()?;
    let n = config.num_units;
    let m = config.num_channels;
    let length = config.muap_length_samples();
    let mut trains = Vec::with_capacity(n);
    let mut templates = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(config.seed, STREAM_UNIT_PARAMS, i as u64);
        let rate = lerp(&mut rng, config.rate_min_hz, config.rate_max_hz);
        let amplitude = lerp(&mut rng, config.amplitude_min_uv, config.amplitude_max_uv);
        let center = (((i as f64 + 0.5) * m as f64 / n as f64) as usize).min(m - 1);
        trains.push(generate_spike_train(
            rate,
            config.isi_cov_percent,
            config.duration_s,
            config.sample_rate,
            derive_seed(config.seed, STREAM_TRAIN, i as u64),
        )?);
        templates.push(generate_muap(
            m,
            length,
            center,
            config.spatial_spread,
            amplitude,
            derive_seed(config.seed, STREAM_MUAP, i as u64),
        )?);
    }
    let layout = MixLayout {
        num_channels: m,
        num_samples: (config.duration_s * config.sample_rate).round() as usize,
        sample_rate: config.sample_rate,
    };
    let mut recording = mix(
        &layout,
        &trains,
        &templates,
        config.snr_db.unwrap_or(f64::INFINITY),
        config.noise_floor_uv,
        config.seed,
    )?;
    let meta: &mut BTreeMap<String, String> = recording.meta_mut();
    meta.insert("source".into(), "synth".into());
    meta.insert("seed".into(), config.seed.to_string());
    meta.insert("num_units".into(), n.to_string());
    if let Some(snr) = config.snr_db {
        meta.insert("snr_db".into(), snr.to_string());
    }
    Ok(GroundTruth {
        recording,
        trains,
        templates,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GestureSynthConfig {
    pub num_classes: usize,
    pub windows_per_class: usize,
    pub num_channels: usize,
    pub window_ms: f64,
    pub sample_rate: f64,
    pub snr_db: f64,
    pub units_per_class: usize,
    pub muap_length_ms: f64,
    pub rate_min_hz: f64,
    pub rate_max_hz: f64,
    pub seed: u64,
}

impl Default for GestureSynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 7,
            windows_per_class: 240,
            num_channels: 60,
            window_ms: 250.0,
            sample_rate: 2000.0,
            snr_db: 30.0,
            units_per_class: 4,
            muap_length_ms: 15.0,
            rate_min_hz: 10.0,
            rate_max_hz: 25.0,
            seed: 0,
        }
    }
}

/// Labeled 250 ms windows where each gesture class activates its own block of channels.
///
/// Class `g` owns channels `[g*m/C, (g+1)*m/C)`; its motor units have
/// templates confined to that block. Windows are ordered class by class.
pub fn synth_gesture_dataset(config: &GestureSynthConfig) -> Result<WindowedDataset> {
    let c = config.num_classes;
    let m = config.num_channels;
    if c < 2 {
        return Err(Error::invalid("need at least 2 gesture classes"));
    }
    if m < c {
        return Err(Error::invalid(format!("{m} channels cannot host {c} classes")));
    }
    if config.units_per_class == 0 || config.windows_per_class == 0 {
        return Err(Error::invalid("units and windows per class must be at least 1"));
    }
    let fs = config.sample_rate;
    let window = (config.window_ms * 1e-3 * fs).round() as usize;
    let length = (config.muap_length_ms * 1e-3 * fs).round() as usize;
    if window < length {
        return Err(Error::invalid(format!(
            "window of {window} samples is shorter than one {length}-sample MUAP"
        )));
    }
    let span = window + length;
    let layout = MixLayout {
        num_channels: m,
        num_samples: span,
        sample_rate: fs,
    };

    let mut windows = Vec::with_capacity(c * config.windows_per_class);
    let mut labels = Vec::with_capacity(c * config.windows_per_class);
    for g in 0..c {
        let (lo, hi) = (g * m / c, (g + 1) * m / c);
        let block = hi - lo;
        let mut class_rng = rng_for(config.seed, STREAM_GESTURE_CLASS, g as u64);
        let mut templates = Vec::with_capacity(config.units_per_class);
        let mut rates = Vec::with_capacity(config.units_per_class);
        for u in 0..config.units_per_class {
            let center = lo + (((u as f64 + 0.5) * block as f64 / config.units_per_class as f64)
                as usize)
                .min(block - 1);
            let amplitude = class_rng.random_range(50.0..150.0);
            let spread = (block as f64 / 4.0).max(1.0);
            let t = generate_muap(m, length, center, spread, amplitude, class_rng.random())?;
            let mut w = t.to_array();
            w.slice_mut(s![..lo, ..]).fill(0.0);
            w.slice_mut(s![hi.., ..]).fill(0.0);
            templates.push(MuapTemplate::from_array(&w)?);
            rates.push(lerp(&mut class_rng, config.rate_min_hz, config.rate_max_hz));
        }
        for w in 0..config.windows_per_class {
            let index = (g * config.windows_per_class + w) as u64;
            let mut rng = rng_for(config.seed, STREAM_GESTURE_WINDOW, index);
            let trains = rates
                .iter()
                .map(|&r| generate_spike_train(r, 20.0, span as f64 / fs, fs, rng.random()))
                .collect::<Result<Vec<_>>>()?;
            let rec = mix(&layout, &trains, &templates, config.snr_db, 1.0, rng.random())?;
            windows.push(rec.samples().slice(s![length.., ..]).to_owned());
            labels.push(g);
        }
    }
    WindowedDataset::new(
        windows,
        labels,
        c,
        fs,
        GESTURE_NAMES.iter().take(c).map(|s| s.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cov_isi;

    #[test]
    fn zero_cov_train_is_periodic() {
        let t = generate_spike_train(10.0, 0.0, 2.0, 2000.0, 3).unwrap();
        assert!((19..=21).contains(&t.len()), "{}", t.len());
        let isi: Vec<usize> = t.spike_samples.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(isi.iter().all(|&d| (199..=201).contains(&d)), "{isi:?}");
    }

    #[test]
    fn train_cov_matches_target() {
        let t = generate_spike_train(12.0, 15.0, 20.0, 2048.0, 11).unwrap();
        let c = cov_isi(&t.spike_samples, 2048.0).unwrap();
        assert!((10.0..=20.0).contains(&c), "{c}");
        let rate = t.len() as f64 / 20.0;
        assert!((rate - 12.0).abs() <= 0.15 * 12.0, "{rate}");
    }

    #[test]
    fn train_respects_refractory_period() {
        let t = generate_spike_train(35.0, 50.0, 30.0, 2048.0, 5).unwrap();
        let min_gap = (REFRACTORY_MS * 1e-3 * 2048.0).floor() as usize;
        assert!(t.spike_samples.windows(2).all(|w| w[1] - w[0] >= min_gap));
    }

    #[test]
    fn train_is_deterministic_and_validates() {
        let a = generate_spike_train(9.0, 20.0, 5.0, 2048.0, 42).unwrap();
        let b = generate_spike_train(9.0, 20.0, 5.0, 2048.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(generate_spike_train(0.0, 10.0, 5.0, 2048.0, 1).is_err());
        assert!(generate_spike_train(10.0, 10.0, -1.0, 2048.0, 1).is_err());
        assert!(generate_spike_train(40.0, 10.0, 1.0, 2048.0, 1).is_err());
    }

    #[test]
    fn narrow_spread_concentrates_energy() {
        let t = generate_muap(16, 31, 5, 0.1, 80.0, 1).unwrap();
        let e: Vec<f64> = t.waveforms.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
        let total: f64 = e.iter().sum();
        assert!(e[5] / total >= 0.99);
        assert_eq!(t.center_channel, 5);
    }

    #[test]
    fn center_row_is_biphasic_with_requested_peak() {
        let amp = 120.0;
        let t = generate_muap(8, 40, 3, 2.0, amp, 9).unwrap();
        let row = &t.waveforms[3];
        let sum: f64 = row.iter().sum();
        assert!(sum.abs() < 1e-6 * amp * 40.0, "{sum}");
        let peak = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((peak - amp).abs() < 1e-9);
    }

    #[test]
    fn muap_rejects_degenerate_inputs() {
        assert!(generate_muap(8, 40, 3, 2.0, 0.0, 1).is_err());
        assert!(generate_muap(8, 40, 3, 0.0, 10.0, 1).is_err());
        assert!(generate_muap(8, 4, 3, 2.0, 10.0, 1).is_err());
        assert!(generate_muap(8, 40, 8, 2.0, 10.0, 1).is_err());
    }

    fn layout(n: usize) -> MixLayout {
        MixLayout {
            num_channels: 4,
            num_samples: n,
            sample_rate: 1000.0,
        }
    }

    #[test]
    fn single_spike_places_template() {
        let tmpl = generate_muap(4, 10, 1, 1.0, 50.0, 2).unwrap();
        let train = SpikeTrain::new(vec![7], 1000.0, 40).unwrap();
        let rec = mix(&layout(40), &[train], &[tmpl.clone()], f64::INFINITY, 1.0, 0).unwrap();
        for c in 0..4 {
            for t in 0..40 {
                let expected = if (7..17).contains(&t) {
                    tmpl.waveforms[c][t - 7]
                } else {
                    0.0
                };
                assert_eq!(rec.samples()[[t, c]], expected);
            }
        }
    }

    #[test]
    fn no_units_gives_noise_floor() {
        let rec = mix(&layout(50_000), &[], &[], 20.0, 5.0, 4).unwrap();
        for r in crate::signal::rms_per_channel(&rec).unwrap() {
            assert!((r - 5.0).abs() < 0.05 * 5.0, "{r}");
        }
    }

    #[test]
    fn mixing_is_linear_without_noise() {
        let ta = generate_muap(4, 12, 0, 1.5, 40.0, 1).unwrap();
        let tb = generate_muap(4, 12, 3, 1.5, 70.0, 2).unwrap();
        let sa = generate_spike_train(20.0, 10.0, 1.0, 1000.0, 3).unwrap();
        let sb = generate_spike_train(15.0, 10.0, 1.0, 1000.0, 4).unwrap();
        let l = layout(1000);
        let both = mix_clean(&l, &[sa.clone(), sb.clone()], &[ta.clone(), tb.clone()]).unwrap();
        let a = mix_clean(&l, &[sa], &[ta]).unwrap();
        let b = mix_clean(&l, &[sb], &[tb]).unwrap();
        let diff = (&both - &a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12);
        assert!(mix_clean(&l, &[], &[generate_muap(4, 12, 0, 1.5, 40.0, 1).unwrap()]).is_err());
    }

    #[test]
    fn configured_snr_is_measured_snr() {
        let cfg = SynthConfig {
            num_channels: 16,
            num_units: 3,
            duration_s: 10.0,
            snr_db: Some(12.0),
            seed: 8,
            ..SynthConfig::default()
        };
        let gt = generate(&cfg).unwrap();
        let layout = MixLayout {
            num_channels: 16,
            num_samples: gt.recording.num_samples(),
            sample_rate: cfg.sample_rate,
        };
        let clean = mix_clean(&layout, &gt.trains, &gt.templates).unwrap();
        let noise = gt.recording.samples() - &clean;
        let p = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        let snr = 10.0 * (p(&clean) / p(&noise)).log10();
        assert!((snr - 12.0).abs() < 0.5, "{snr}");
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = SynthConfig {
            num_channels: 8,
            num_units: 2,
            duration_s: 2.0,
            seed: 77,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.recording, b.recording);
        assert_eq!(a.trains, b.trains);
        assert_eq!(a.templates, b.templates);
    }

    fn small_gesture_config(classes: usize) -> GestureSynthConfig {
        GestureSynthConfig {
            num_classes: classes,
            windows_per_class: 12,
            num_channels: 16,
            seed: 5,
            ..GestureSynthConfig::default()
        }
    }

    #[test]
    fn gesture_dataset_shape_and_determinism() {
        let cfg = small_gesture_config(3);
        let ds = synth_gesture_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds.window_samples(), 500);
        assert_eq!(ds.num_channels(), 16);
        let again = synth_gesture_dataset(&cfg).unwrap();
        assert_eq!(ds, again);
        let short = GestureSynthConfig {
            window_ms: 5.0,
            ..cfg
        };
        assert!(synth_gesture_dataset(&short).is_err());
    }

    #[test]
    fn channel_energy_centroids_separate_two_classes() {
        let ds = synth_gesture_dataset(&small_gesture_config(2)).unwrap();
        let energy = |w: &Array2<f64>| -> Vec<f64> {
            w.columns().into_iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).collect()
        };
        let feats: Vec<Vec<f64>> = ds.windows().iter().map(energy).collect();
        let mut centroids = vec![vec![0.0; 16]; 2];
        let mut counts = [0usize; 2];
        for (f, &l) in feats.iter().zip(ds.labels()) {
            counts[l] += 1;
            for (c, v) in centroids[l].iter_mut().zip(f) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let correct = feats
            .iter()
            .zip(ds.labels())
            .filter(|(f, &l)| {
                let pred = if dist(f, &centroids[0]) <= dist(f, &centroids[1]) { 0 } else { 1 };
                pred == l
            })
            .count();
        assert_eq!(correct, ds.len());
    }
}
