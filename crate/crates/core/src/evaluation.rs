//! Window- and clip-level classification metrics, the k-consecutive clip
//! aggregation rule, and report files (JSON, CSV, SVG).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Window,
    Clip,
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Each row divided by its sum; rows of absent classes stay all-zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| {
                let s: u64 = r.iter().sum();
                r.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    pub n_items: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    /// Run length used for clip aggregation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn default_class_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class_{i}")).collect()
}

/// Standard multi-class metrics. F1 of a class with `P + R = 0` is 0; macro
/// averages over all `n_classes` classes, including absent ones.
pub fn window_metrics(preds: &[usize], truths: &[usize], class_names: &[String]) -> Result<EvalReport> {
    let k = class_names.len();
    if preds.len() != truths.len() {
        return invalid(format!(
            "{} predictions for {} ground-truth labels",
            preds.len(),
            truths.len()
        ));
    }
    if preds.is_empty() {
        return invalid("no predictions to evaluate");
    }
    if let Some(bad) = preds.iter().chain(truths).find(|&&c| c >= k) {
        return invalid(format!("label {bad} outside {k} classes"));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in preds.iter().zip(truths) {
        counts[t][p] += 1;
    }
    let n = preds.len() as f64;
    let mut per_class = Vec::with_capacity(k);
    let (mut tp_sum, mut pred_sum) = (0.0, 0.0);
    for c in 0..k {
        let tp = counts[c][c] as f64;
        let support: u64 = counts[c].iter().sum();
        let predicted: u64 = counts.iter().map(|r| r[c]).sum();
        let precision = ratio(tp, predicted as f64);
        let recall = ratio(tp, support as f64);
        per_class.push(ClassMetrics {
            name: class_names[c].clone(),
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
            support,
        });
        tp_sum += tp;
        pred_sum += predicted as f64;
    }
    Ok(EvalReport {
        level: Level::Window,
        n_items: preds.len(),
        accuracy: tp_sum / n,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64,
        micro_f1: ratio(2.0 * tp_sum, pred_sum + n),
        weighted_f1: per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / n,
        per_class,
        confusion: ConfusionMatrix {
            counts,
            class_names: class_names.to_vec(),
        },
        k: None,
    })
}

pub fn macro_f1(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<f64> {
    Ok(window_metrics(preds, truths, &default_class_names(n_classes))?.macro_f1)
}

/// Clip label from temporally ordered window predictions: the first label
/// to reach `k` consecutive repeats wins immediately; otherwise the most
/// frequent label, ties going to the label seen first.
pub fn aggregate_clip(window_preds: &[usize], k: usize) -> Result<usize> {
    if window_preds.is_empty() {
        return invalid("cannot aggregate an empty prediction sequence");
    }
    if k == 0 {
        return invalid("run length k must be at least 1");
    }
    let mut run = 0;
    for (i, &p) in window_preds.iter().enumerate() {
        run = if i > 0 && window_preds[i - 1] == p { run + 1 } else { 1 };
        if run >= k {
            return Ok(p);
        }
    }
    let mut tally: Vec<(usize, usize)> = Vec::new();
    for &p in window_preds {
        match tally.iter_mut().find(|(l, _)| *l == p) {
            Some((_, c)) => *c += 1,
            None => tally.push((p, 1)),
        }
    }
    let mut best = tally[0];
    for &(l, c) in &tally[1..] {
        if c > best.1 {
            best = (l, c);
        }
    }
    Ok(best.0)
}

/// One window's prediction tagged with its clip and position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub clip_ref: String,
    pub start_index: usize,
    pub pred: usize,
    pub truth: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip_ref: String,
    pub pred: usize,
    pub truth: usize,
    pub n_windows: usize,
}

/// Groups window predictions by clip (clips sorted by reference, windows by
/// start offset) and aggregates each clip.
pub fn aggregate_clips(windows: &[WindowPrediction], k: usize) -> Result<Vec<ClipPrediction>> {
    let mut by_clip: BTreeMap<&str, Vec<&WindowPrediction>> = BTreeMap::new();
    for w in windows {
        by_clip.entry(&w.clip_ref).or_default().push(w);
    }
    by_clip
        .into_iter()
        .map(|(clip, mut ws)| {
            ws.sort_by_key(|w| w.start_index);
            let truth = ws[0].truth;
            if ws.iter().any(|w| w.truth != truth) {
                return invalid(format!("windows of clip {clip} disagree on the true label"));
            }
            let preds: Vec<usize> = ws.iter().map(|w| w.pred).collect();
            Ok(ClipPrediction {
                clip_ref: clip.to_string(),
                pred: aggregate_clip(&preds, k)?,
                truth,
                n_windows: ws.len(),
            })
        })
        .collect()
}

pub fn clip_metrics(windows: &[WindowPrediction], k: usize, class_names: &[String]) -> Result<EvalReport> {
    let clips = aggregate_clips(windows, k)?;
    let preds: Vec<usize> = clips.iter().map(|c| c.pred).collect();
    let truths: Vec<usize> = clips.iter().map(|c| c.truth).collect();
    let mut report = window_metrics(&preds, &truths, class_names)?;
    report.level = Level::Clip;
    report.k = Some(k);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub fn parse_list(s: &str) -> Result<Vec<ReportFormat>> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| match p.trim() {
                "json" => Ok(ReportFormat::Json),
                "csv" => Ok(ReportFormat::Csv),
                "svg" => Ok(ReportFormat::Svg),
                other => invalid(format!("unknown report format {other:?}")),
            })
            .collect()
    }
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut s = String::from("true\\pred");
    for n in &cm.class_names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (name, row) in cm.class_names.iter().zip(&cm.counts) {
        s.push_str(name);
        for c in row {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let k = cm.class_names.len();
    let cell = 56.0;
    let left = 140.0;
    let top = 60.0;
    let width = left + cell * k as f64 + 20.0;
    let height = top + cell * k as f64 + 110.0;
    let norm = cm.row_normalized();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="14">{}</text>"#, left, xml_escape(title));
    for (i, row) in norm.iter().enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + cell / 2.0 + 4.0,
            xml_escape(&cm.class_names[i])
        );
        for (j, v) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let ink = if *v > 0.5 { "#fff" } else { "#000" };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#888"/><text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.2}</text>"##,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (j, name) in cm.class_names.iter().enumerate() {
        let x = left + cell * j as f64 + cell / 2.0;
        let y = top + cell * k as f64 + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="end" transform="rotate(-45 {x} {y})">{}</text>"#,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of the three fusion weights over training epochs.
pub fn fusion_svg(pi: &[[f64; 3]]) -> String {
    let (w, h, pad) = (480.0, 260.0, 40.0);
    let n = pi.len().max(2) - 1;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">epoch</text>"#, w / 2.0, h - 8.0);
    let labels = ["cnn", "attn", "fused"];
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];
    for head in 0..3 {
        let pts: Vec<String> = pi
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.2},{:.2}", x(i), y(p[head])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            colors[head],
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{}">pi_{head} ({})</text>"#,
            w - pad - 70.0,
            pad + 14.0 * head as f64,
            colors[head],
            labels[head]
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.json`, `<stem>_confusion.csv` and `<stem>_confusion.svg`
/// (plus `fusion_weights.svg` when a fusion trace is given) for the
/// requested formats, returning the paths written.
pub fn emit_report(
    report: &EvalReport,
    formats: &[ReportFormat],
    out_dir: &Path,
    stem: &str,
    fusion_trace: Option<&[[f64; 3]]>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
        written.push(p);
        Ok(())
    };
    for f in formats {
        match f {
            ReportFormat::Json => put(format!("{stem}.json"), serde_json::to_string_pretty(report)?)?,
            ReportFormat::Csv => put(format!("{stem}_confusion.csv"), confusion_csv(&report.confusion))?,
            ReportFormat::Svg => {
                let title = format!("{stem} ({:?} level, row-normalized)", report.level);
                put(format!("{stem}_confusion.svg"), confusion_svg(&report.confusion, &title))?;
                if let Some(trace) = fusion_trace {
                    put("fusion_weights.svg".into(), fusion_svg(trace))?;
                }
            }
        }
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(Error::from)
}
