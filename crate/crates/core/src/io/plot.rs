//! CSV tables and static SVG renderings.
//!
//! CSV headers:
//!
//! - signals: `sample,time_s,ch<i>...`, one column per selected channel index
//! - units: `unit,num_spikes,sil,cov_isi_percent,firing_rate_hz`
//! - spikes: `unit,sample,time_s`
//! - confusion: `true_class,predicted_class,count`

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::DecompositionReport;
use crate::signal::Recording;

pub const UNITS_CSV_HEADER: &str = "unit,num_spikes,sil,cov_isi_percent,firing_rate_hz";
pub const SPIKES_CSV_HEADER: &str = "unit,sample,time_s";
pub const CONFUSION_CSV_HEADER: &str = "true_class,predicted_class,count";

fn check_channels(rec: &Recording, channels: &[usize]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::invalid("no channels selected"));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= rec.num_channels()) {
        return Err(Error::invalid(format!(
            "channel {c} outside [0, {})",
            rec.num_channels()
        )));
    }
    Ok(())
}

pub fn signals_csv(rec: &Recording, channels: &[usize]) -> Result<String> {
    check_channels(rec, channels)?;
    let mut out = String::from("sample,time_s");
    for c in channels {
        write!(out, ",ch{c}").unwrap();
    }
    out.push('\n');
    let fs = rec.sample_rate();
    for (t, row) in rec.samples().rows().into_iter().enumerate() {
        write!(out, "{t},{}", t as f64 / fs).unwrap();
        for &c in channels {
            write!(out, ",{}", row[c]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn units_csv(report: &DecompositionReport) -> String {
    let mut out = format!("{UNITS_CSV_HEADER}\n");
    for (i, u) in report.units.iter().enumerate() {
        writeln!(out, "{i},{},{},{},{}", u.spikes.len(), u.sil, u.cov_isi, u.firing_rate).unwrap();
    }
    out
}

pub fn spikes_csv(report: &DecompositionReport) -> String {
    let mut out = format!("{SPIKES_CSV_HEADER}\n");
    for (i, u) in report.units.iter().enumerate() {
        for &s in &u.spikes {
            writeln!(out, "{i},{s},{}", s as f64 / report.sample_rate).unwrap();
        }
    }
    out
}

pub fn confusion_csv(matrix: &[Vec<u64>], class_names: &[String]) -> String {
    let name = |i: usize| {
        let n = class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        if n.contains([',', '"', '\n']) {
            format!("\"{}\"", n.replace('"', "\"\""))
        } else {
            n
        }
    };
    let mut out = format!("{CONFUSION_CSV_HEADER}\n");
    for (t, row) in matrix.iter().enumerate() {
        for (p, count) in row.iter().enumerate() {
            writeln!(out, "{},{},{count}", name(t), name(p)).unwrap();
        }
    }
    out
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const WIDTH: f64 = 900.0;
const MARGIN: f64 = 40.0;

/// Stacked traces of the selected channels, decimated to at most `max_points` per trace.
pub fn signals_svg(rec: &Recording, channels: &[usize], max_points: usize, title: &str) -> Result<String> {
    check_channels(rec, channels)?;
    let row_h = 60.0;
    let height = 2.0 * MARGIN + row_h * channels.len() as f64;
    let n = rec.num_samples();
    let step = n.div_ceil(max_points.max(2)).max(1);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        xml_escape(title)
    )
    .unwrap();
    for (k, &c) in channels.iter().enumerate() {
        let col = rec.channel(c);
        let peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { 0.45 * row_h / peak } else { 0.0 };
        let mid = MARGIN + row_h * (k as f64 + 0.5);
        let mut points = String::new();
        for t in (0..n).step_by(step) {
            let x = MARGIN + plot_w * t as f64 / (n.max(2) - 1) as f64;
            let y = mid - scale * col[t];
            write!(points, "{x:.2},{y:.2} ").unwrap();
        }
        writeln!(
            out,
            r#"<text x="4" y="{:.2}" font-family="sans-serif" font-size="10">ch{c}</text>"#,
            mid + 3.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="0.8" points="{}"/>"#,
            points.trim_end()
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Confusion-matrix heatmap; cell shading is the row-normalized count.
pub fn confusion_svg(matrix: &[Vec<u64>], class_names: &[String], title: &str) -> String {
    let k = matrix.len();
    let cell = 48.0;
    let label_w = 130.0;
    let width = label_w + cell * k as f64 + MARGIN;
    let height = 2.0 * MARGIN + cell * k as f64 + 20.0;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="8" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        xml_escape(title)
    )
    .unwrap();
    let name = |i: usize| xml_escape(class_names.get(i).map_or(&i.to_string(), |s| s).as_str());
    for (t, row) in matrix.iter().enumerate() {
        let total: u64 = row.iter().sum();
        let y = MARGIN + cell * t as f64;
        writeln!(
            out,
            r#"<text x="4" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            y + cell / 2.0 + 4.0,
            name(t)
        )
        .unwrap();
        for (p, &count) in row.iter().enumerate() {
            let frac = if total > 0 { count as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let x = label_w + cell * p as f64;
            writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            )
            .unwrap();
            let ink = if frac > 0.5 { "white" } else { "black" };
            writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11" fill="{ink}">{count}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            )
            .unwrap();
        }
    }
    let y = MARGIN + cell * k as f64 + 14.0;
    writeln!(
        out,
        r#"<text x="{label_w}" y="{y:.1}" font-family="sans-serif" font-size="11">columns: predicted class, rows: true class</text>"#
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}
