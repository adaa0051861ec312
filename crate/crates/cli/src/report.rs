//! SVG plots and the yearly anomaly-count table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Datelike, NaiveDate};
use clvae_core::attribution::ImportanceRanking;
use serde::{Deserialize, Serialize};

/// How integer timestamps map onto the calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    /// Plain row indices; anomalies are counted per 365-step block.
    Index,
    /// Days since 1970-01-01.
    Days,
    /// Seconds since the Unix epoch.
    Seconds,
}

impl TimeUnit {
    pub fn year(self, ts: i64) -> Result<i32> {
        match self {
            TimeUnit::Index => Ok(ts.div_euclid(365) as i32),
            TimeUnit::Days => NaiveDate::from_ymd_opt(1970, 1, 1)
                .and_then(|d| d.checked_add_signed(chrono::Duration::try_days(ts)?))
                .map(|d| d.year())
                .with_context(|| format!("day timestamp {ts} out of calendar range")),
            TimeUnit::Seconds => DateTime::from_timestamp(ts, 0)
                .map(|d| d.year())
                .with_context(|| format!("second timestamp {ts} out of calendar range")),
        }
    }
}

/// One row of `thresholds.csv`; score and threshold are absent before the
/// first full window.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ThresholdRow {
    pub timestamp: i64,
    pub score: Option<f64>,
    pub threshold: Option<f64>,
    pub label: u8,
}

pub fn read_thresholds(path: &Path) -> Result<Vec<ThresholdRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<ThresholdRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Anomalous timesteps per year, covering every year the series spans.
pub fn yearly_counts(rows: &[ThresholdRow], unit: TimeUnit) -> Result<BTreeMap<i32, usize>> {
    let mut out = BTreeMap::new();
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        for y in unit.year(first.timestamp)?..=unit.year(last.timestamp)? {
            out.insert(y, 0);
        }
    }
    for r in rows.iter().filter(|r| r.label == 1) {
        *out.entry(unit.year(r.timestamp)?).or_insert(0) += 1;
    }
    Ok(out)
}

const W: f64 = 960.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi > lo {
        out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
    } else {
        (out_lo + out_hi) / 2.0
    }
}

pub fn score_svg(rows: &[ThresholdRow]) -> String {
    let scored: Vec<(usize, f64, f64, bool)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| Some((i, r.score?, r.threshold?, r.label == 1)))
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(_, s, t, _) in &scored {
        lo = lo.min(s).min(t);
        hi = hi.max(s).max(t);
    }
    let n = rows.len().max(2) as f64;
    let x = |i: usize| scale(i as f64, 0.0, n - 1.0, PAD, W - PAD);
    let y = |v: f64| scale(v, lo, hi, H - PAD, PAD);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="13">anomaly score and dynamic threshold</text>"#
    );
    for (stroke, pick) in [("#1f77b4", 1usize), ("#ff7f0e", 2)] {
        let pts: Vec<String> = scored
            .iter()
            .map(|&(i, s, t, _)| format!("{:.2},{:.2}", x(i), y(if pick == 1 { s } else { t })))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{stroke}" stroke-width="1" points="{}"/>"#,
            pts.join(" ")
        );
    }
    for &(i, s, _, a) in &scored {
        if a {
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#d62728"/>"##,
                x(i),
                y(s)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bars in ranking order, so heights descend left to right.
pub fn importance_svg(ranking: &ImportanceRanking) -> String {
    let n = ranking.entries.len().max(1) as f64;
    let top = ranking.entries.first().map_or(0.0, |e| e.importance);
    let slot = (W - 2.0 * PAD) / n;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="13">feature importance {}..{}</text>"#,
        ranking.period.0, ranking.period.1
    );
    for (i, e) in ranking.entries.iter().enumerate() {
        let h = scale(e.importance, 0.0, top, 0.0, H - 2.0 * PAD - 20.0);
        let x = PAD + i as f64 * slot;
        let _ = writeln!(
            svg,
            r##"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#2ca02c"><title>{} {}</title></rect>"##,
            x + slot * 0.1,
            H - PAD - h,
            slot * 0.8,
            h,
            e.feature,
            e.importance
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            x + slot / 2.0,
            H - PAD + 14.0,
            e.feature
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `report/` inside a run directory. Requires the threshold stage;
/// importance charts are drawn for every ranking present.
pub fn emit_report(run: &Path, unit: TimeUnit) -> Result<Vec<PathBuf>> {
    let thresholds = run.join("thresholds.csv");
    if !thresholds.exists() {
        bail!("report needs thresholds.csv from the `threshold` stage; run it first");
    }
    let rows = read_thresholds(&thresholds)?;
    let dir = run.join("report");
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();

    let path = dir.join("scores.svg");
    std::fs::write(&path, score_svg(&rows))?;
    written.push(path);

    let mut w = csv::Writer::from_path(dir.join("yearly_anomalies.csv"))?;
    w.write_record(["year", "anomalies"])?;
    for (y, c) in yearly_counts(&rows, unit)? {
        w.write_record([y.to_string(), c.to_string()])?;
    }
    w.flush()?;
    written.push(dir.join("yearly_anomalies.csv"));

    let mut rankings: Vec<PathBuf> = std::fs::read_dir(run)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("importance") && n.ends_with(".json"))
        })
        .collect();
    rankings.sort();
    for p in rankings {
        let ranking: ImportanceRanking = serde_json::from_str(&std::fs::read_to_string(&p)?)
            .with_context(|| format!("parsing {}", p.display()))?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("importance");
        let out = dir.join(format!("{stem}.svg"));
        std::fs::write(&out, importance_svg(&ranking))?;
        written.push(out);
    }
    Ok(written)
}
