//! IIR notch and Butterworth band-pass filters with forward-backward application.
//!
//! Filters are realized as cascades of second-order sections in transposed
//! direct form II. Zero-phase application odd-reflects each channel by three
//! times the filter order, runs the cascade forward and backward from
//! steady-state initial conditions, then trims the padding.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Complex;

use super::Recording;
use crate::error::{Error, Result};

/// Metadata key listing every filter applied to a recording, in order.
pub const FILTER_CHAIN_KEY: &str = "filter_chain";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    /// Second-order IIR notch.
    Notch { center_hz: f64, q: f64 },
    /// Butterworth band-pass; `order` is the low-pass prototype order.
    Bandpass {
        low_hz: f64,
        high_hz: f64,
        order: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub zero_phase: bool,
}

impl FilterSpec {
    pub const DEFAULT_NOTCH_Q: f64 = 30.0;
    pub const DEFAULT_BANDPASS_ORDER: usize = 4;

    pub fn notch(center_hz: f64) -> Self {
        Self {
            kind: FilterKind::Notch {
                center_hz,
                q: Self::DEFAULT_NOTCH_Q,
            },
            zero_phase: true,
        }
    }

    pub fn bandpass(low_hz: f64, high_hz: f64) -> Self {
        Self {
            kind: FilterKind::Bandpass {
                low_hz,
                high_hz,
                order: Self::DEFAULT_BANDPASS_ORDER,
            },
            zero_phase: true,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let nyquist = sample_rate / 2.0;
        match self.kind {
            FilterKind::Notch { center_hz, q } => {
                if !(center_hz > 0.0 && center_hz < nyquist) {
                    return Err(Error::invalid(format!(
                        "notch center {center_hz} Hz outside (0, {nyquist}) Hz"
                    )));
                }
                if !(q > 0.0 && q.is_finite()) {
                    return Err(Error::invalid(format!("notch Q must be positive, got {q}")));
                }
            }
            FilterKind::Bandpass {
                low_hz,
                high_hz,
                order,
            } => {
                if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
                    return Err(Error::invalid(format!(
                        "band {low_hz}-{high_hz} Hz must satisfy 0 < lo < hi < {nyquist} Hz"
                    )));
                }
                if order == 0 {
                    return Err(Error::invalid("band-pass order must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// Designs the second-order-section cascade for `sample_rate`.
    pub fn design(&self, sample_rate: f64) -> Result<Vec<Biquad>> {
        self.validate(sample_rate)?;
        Ok(match self.kind {
            FilterKind::Notch { center_hz, q } => vec![design_notch(center_hz, q, sample_rate)],
            FilterKind::Bandpass {
                low_hz,
                high_hz,
                order,
            } => design_butter_bandpass(order, low_hz, high_hz, sample_rate),
        })
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FilterKind::Notch { center_hz, q } => write!(f, "notch({center_hz}Hz,Q={q})")?,
            FilterKind::Bandpass {
                low_hz,
                high_hz,
                order,
            } => write!(f, "bandpass({low_hz}-{high_hz}Hz,order={order})")?,
        }
        if self.zero_phase {
            write!(f, "[zero-phase]")?;
        }
        Ok(())
    }
}

/// One second-order section, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Transposed-DF-II state that holds the output steady for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    fn response(&self, omega: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (self.a[0] + z1 * self.a[1] + z2 * self.a[2])
    }
}

fn design_notch(center_hz: f64, q: f64, fs: f64) -> Biquad {
    let w0 = 2.0 * PI * center_hz / fs;
    let beta = (w0 / q / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    Biquad {
        b: [gain, -2.0 * gain * c, gain],
        a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0],
    }
}

fn design_butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Vec<Biquad> {
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (wl, wh) = (warp(low_hz), warp(high_hz));
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();
    let fs2 = 2.0 * fs;

    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + 1 + order) as f64 / (2 * order) as f64;
        let proto = Complex::from_polar(1.0, theta);
        let half = proto * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            poles.push((fs2 + s) / (fs2 - s));
        }
    }

    const IM_TOL: f64 = 1e-12;
    let mut sections: Vec<Biquad> = Vec::with_capacity(order);
    let mut reals: Vec<f64> = Vec::new();
    for p in &poles {
        if p.im > IM_TOL {
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            });
        } else if p.im.abs() <= IM_TOL {
            reals.push(p.re);
        }
    }
    reals.sort_by(|a, b| a.total_cmp(b));
    for pair in reals.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(r1 + r2), r1 * r2],
        });
    }

    // Unit gain at the band's geometric centre.
    let center = 2.0 * (w0 / fs2).atan();
    let mag: f64 = sections.iter().map(|s| s.response(center).norm()).product();
    let per_section = mag.powf(-1.0 / sections.len() as f64);
    for s in &mut sections {
        for c in &mut s.b {
            *c *= per_section;
        }
    }
    sections
}

fn run_cascade(sections: &[Biquad], x: &mut [f64]) {
    let Some(&x0) = x.first() else { return };
    let mut scale = x0;
    for s in sections {
        let [mut z1, mut z2] = s.step_state();
        z1 *= scale;
        z2 *= scale;
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[1] * y + z2;
            z2 = s.b[2] * input - s.a[2] * y;
            *v = y;
        }
        scale *= s.dc_gain();
    }
}

fn filter_channel(sections: &[Biquad], order: usize, zero_phase: bool, x: &[f64]) -> Vec<f64> {
    if !zero_phase {
        let mut y = x.to_vec();
        run_cascade(sections, &mut y);
        return y;
    }
    let n = x.len();
    let pad = (3 * order).min(n.saturating_sub(1));
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (x[0], x[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));
    run_cascade(sections, &mut ext);
    ext.reverse();
    run_cascade(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Filters each channel independently and records the step in the metadata.
pub fn apply_filter(rec: &Recording, spec: &FilterSpec) -> Result<Recording> {
    let sections = spec.design(rec.sample_rate())?;
    let order = 2 * sections.len();
    let mut out = rec.samples().clone();
    let mut buf = Vec::with_capacity(rec.num_samples());
    for mut col in out.columns_mut() {
        buf.clear();
        buf.extend(col.iter().copied());
        let y = filter_channel(&sections, order, spec.zero_phase, &buf);
        for (dst, v) in col.iter_mut().zip(y) {
            *dst = v;
        }
    }
    let mut filtered = rec.with_samples(out)?;
    let chain = filtered.meta_mut().entry(FILTER_CHAIN_KEY.to_string()).or_default();
    if !chain.is_empty() {
        chain.push_str("; ");
    }
    chain.push_str(&spec.to_string());
    Ok(filtered)
}

fn apply_chain(rec: &Recording, chain: &[FilterSpec]) -> Result<Recording> {
    let mut current = rec.clone();
    for spec in chain {
        current = apply_filter(&current, spec)?;
    }
    Ok(current)
}

/// 50 Hz notch followed by a 10-500 Hz band-pass.
pub fn preprocess_baseline(rec: &Recording) -> Result<Recording> {
    apply_chain(
        rec,
        &[FilterSpec::notch(50.0), FilterSpec::bandpass(10.0, 500.0)],
    )
}

/// 50, 100 and 150 Hz notches followed by a 20-500 Hz band-pass.
pub fn preprocess_gesture(rec: &Recording) -> Result<Recording> {
    apply_chain(
        rec,
        &[
            FilterSpec::notch(50.0),
            FilterSpec::notch(100.0),
            FilterSpec::notch(150.0),
            FilterSpec::bandpass(20.0, 500.0),
        ],
    )
}
