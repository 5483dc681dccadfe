//! Deterministic text artifacts: JSON, CSV, and Markdown tables shaped like
//! the usual LS/DS paired-column reports. AP-style metrics are rendered as
//! percentages with one decimal place; the better value of each LS/DS pair
//! is bold in Markdown.

use fairdet_core::error::{Error, Result};
use fairdet_core::eval::{APReport, GroupGapReport};
use fairdet_core::loss::{SweepEntry, SweepReport, TrajectoryPoint};
use fairdet_core::stats::RunAggregate;

pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn pct(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

fn pct_aggregate(aggregate: &RunAggregate) -> String {
    format!("{} ± {}", pct(aggregate.mean), pct(aggregate.std))
}

fn raw_aggregate(aggregate: &RunAggregate) -> String {
    format!("{:.3} ± {:.3}", aggregate.mean, aggregate.std)
}

/// Bold the better cell of a pair; ties stay plain. For loss metrics lower
/// is better, for AP metrics higher is.
fn bold_pair(ls: String, ds: String, ls_better: bool, ds_better: bool) -> (String, String) {
    (
        if ls_better { format!("**{ls}**") } else { ls },
        if ds_better { format!("**{ds}**") } else { ds },
    )
}

pub fn ap_report_markdown(report: &APReport) -> String {
    let mut out = String::new();
    out.push_str("| Metric | Value (%) |\n|---|---:|\n");
    out.push_str(&format!("| AP | {} |\n", pct(report.ap)));
    if let Some(ap50) = report.ap50 {
        out.push_str(&format!("| AP50 | {} |\n", pct(ap50)));
    }
    if let Some(ap75) = report.ap75 {
        out.push_str(&format!("| AP75 | {} |\n", pct(ap75)));
    }
    out.push_str("\n| IoU | AP (%) | GT | TP | FP |\n|---|---:|---:|---:|---:|\n");
    for t in &report.per_threshold {
        out.push_str(&format!(
            "| {:.2} | {} | {} | {} | {} |\n",
            t.threshold,
            pct(t.ap),
            t.num_gt,
            t.true_positives,
            t.false_positives
        ));
    }
    out
}

pub fn ap_report_csv(report: &APReport) -> String {
    let mut out = String::from("threshold,ap,num_gt,true_positives,false_positives\n");
    for t in &report.per_threshold {
        out.push_str(&format!(
            "{:.2},{:.6},{},{},{}\n",
            t.threshold, t.ap, t.num_gt, t.true_positives, t.false_positives
        ));
    }
    out
}

pub fn gap_report_markdown(report: &GroupGapReport) -> String {
    let mut out = String::new();
    out.push_str("| Metric | LS | DS | Gap |\n|---|---:|---:|---:|\n");
    let mut row = |name: &str, ls: f64, ds: f64, gap: f64| {
        let (ls_cell, ds_cell) = bold_pair(pct(ls), pct(ds), ls > ds, ds > ls);
        out.push_str(&format!(
            "| {name} (%) | {ls_cell} | {ds_cell} | {} |\n",
            pct(gap)
        ));
    };
    row("AP", report.ls.ap, report.ds.ap, report.ap_gap);
    if let (Some(ls), Some(ds), Some(gap)) = (report.ls.ap50, report.ds.ap50, report.ap50_gap) {
        row("AP50", ls, ds, gap);
    }
    if let (Some(ls), Some(ds), Some(gap)) = (report.ls.ap75, report.ds.ap75, report.ap75_gap) {
        row("AP75", ls, ds, gap);
    }
    out.push_str(&format!("\nPredictive inequity: {:.4}\n", report.inequity));
    out
}

pub fn gap_report_csv(report: &GroupGapReport) -> String {
    let mut out = String::from("metric,ls,ds,gap\n");
    out.push_str(&format!(
        "ap,{:.6},{:.6},{:.6}\n",
        report.ls.ap, report.ds.ap, report.ap_gap
    ));
    if let (Some(ls), Some(ds), Some(gap)) = (report.ls.ap50, report.ds.ap50, report.ap50_gap) {
        out.push_str(&format!("ap50,{ls:.6},{ds:.6},{gap:.6}\n"));
    }
    if let (Some(ls), Some(ds), Some(gap)) = (report.ls.ap75, report.ds.ap75, report.ap75_gap) {
        out.push_str(&format!("ap75,{ls:.6},{ds:.6},{gap:.6}\n"));
    }
    out.push_str(&format!("inequity,{:.6},,\n", report.inequity));
    out
}

fn sweep_cells(entry: &SweepEntry) -> (String, String, String) {
    if entry.metric == "holdout_loss" {
        let (ls, ds) = bold_pair(
            raw_aggregate(&entry.ls),
            raw_aggregate(&entry.ds),
            entry.ls.mean < entry.ds.mean,
            entry.ds.mean < entry.ls.mean,
        );
        (ls, ds, format!("{:.3}", entry.gap))
    } else {
        let (ls, ds) = bold_pair(
            pct_aggregate(&entry.ls),
            pct_aggregate(&entry.ds),
            entry.ls.mean > entry.ds.mean,
            entry.ds.mean > entry.ls.mean,
        );
        (ls, ds, pct(entry.gap))
    }
}

pub fn sweep_markdown(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str("| alpha_DS | Metric | LS | DS | Gap |\n|---:|---|---:|---:|---:|\n");
    for entry in &report.entries {
        let (ls, ds, gap) = sweep_cells(entry);
        out.push_str(&format!(
            "| {} | {} | {ls} | {ds} | {gap} |\n",
            entry.alpha_ds, entry.metric
        ));
    }
    out
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("alpha_ds,metric,ls_mean,ls_std,ds_mean,ds_std,gap\n");
    for entry in &report.entries {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            entry.alpha_ds,
            entry.metric,
            entry.ls.mean,
            entry.ls.std,
            entry.ds.mean,
            entry.ds.std,
            entry.gap
        ));
    }
    out
}

pub fn curves_csv(trajectory: &[TrajectoryPoint]) -> String {
    let mut out = String::from("iteration,group,loss,ap50_toy\n");
    for point in trajectory {
        let ap = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{},LS,{:.6},{}\n",
            point.iteration,
            point.ls_loss,
            ap(point.ls_ap50)
        ));
        out.push_str(&format!(
            "{},DS,{:.6},{}\n",
            point.iteration,
            point.ds_loss,
            ap(point.ds_ap50)
        ));
    }
    out
}

pub fn curves_markdown(trajectory: &[TrajectoryPoint]) -> String {
    let mut out = String::from("| Iteration | LS loss | DS loss | LS AP50 (%) | DS AP50 (%) |\n|---:|---:|---:|---:|---:|\n");
    for point in trajectory {
        let ap = |v: Option<f64>| v.map_or("-".to_string(), pct);
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {} | {} |\n",
            point.iteration,
            point.ls_loss,
            point.ds_loss,
            ap(point.ls_ap50),
            ap(point.ds_ap50)
        ));
    }
    out
}

pub fn histogram_csv(rows: &[(String, usize)]) -> String {
    let mut out = String::from("pattern,count\n");
    for (pattern, count) in rows {
        out.push_str(&format!("{pattern},{count}\n"));
    }
    out
}

pub fn consensus_markdown(rows: &[(String, usize)], ds_rate: Option<f64>) -> String {
    let mut out = String::from("| Pattern | Count |\n|---|---:|\n");
    for (pattern, count) in rows {
        out.push_str(&format!("| {pattern} | {count} |\n"));
    }
    match ds_rate {
        Some(rate) => out.push_str(&format!("\nDS rate among labeled: {:.1}%\n", rate * 100.0)),
        None => out.push_str("\nDS rate among labeled: undefined (no LS/DS consensus)\n"),
    }
    out
}

pub fn key_value_csv(rows: &[(String, serde_json::Value)]) -> String {
    let mut out = String::from("key,value\n");
    for (key, value) in rows {
        out.push_str(&format!("{key},{}\n", render_value(value)));
    }
    out
}

pub fn key_value_markdown(rows: &[(String, serde_json::Value)]) -> String {
    let mut out = String::from("| Key | Value |\n|---|---:|\n");
    for (key, value) in rows {
        out.push_str(&format!("| {key} | {} |\n", render_value(value)));
    }
    out
}

fn render_value(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::Number(n) => match n.as_f64() {
            Some(f) if f.fract() != 0.0 => format!("{f:.3}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}
