//! Plain-text renderings of run artifacts: CSV for machine consumption and
//! markdown tables for reading. Floats in CSV keep full round-trip
//! precision; markdown rounds for the eye. Missing measurements render as
//! empty CSV cells and `-` markdown cells.

use crate::lab::{AttackOutcome, DistillEpochLog, ForgeryOutcome};
use crate::metrics::MetricReport;
use crate::nn::train::EpochLog;
use crate::verify::VerificationReport;

fn csv_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(csv_f64).unwrap_or_default()
}

fn md_f64(v: f64, places: usize) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.places$}")
    }
}

fn md_opt(v: Option<f64>, places: usize) -> String {
    v.map(|x| md_f64(x, places)).unwrap_or_else(|| "-".into())
}

/// Render one markdown table with a left-aligned first column.
pub fn markdown_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str("| ");
    out.push_str(&headers.join(" | "));
    out.push_str(" |\n|");
    for i in 0..headers.len() {
        out.push_str(if i == 0 { ":---|" } else { "---:|" });
    }
    out.push('\n');
    for row in rows {
        out.push_str("| ");
        out.push_str(&row.join(" | "));
        out.push_str(" |\n");
    }
    out
}

/// Per-epoch training log: epoch, the total and per-term losses, the
/// held-out metrics, and the learning rate in effect.
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,loss_primary,loss_watermark,loss_attacked,loss_similarity,accuracy,wsr,lr\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            e.epoch,
            csv_f64(e.loss_total),
            csv_f64(e.loss_primary),
            csv_f64(e.loss_watermark),
            csv_f64(e.loss_attacked),
            csv_f64(e.loss_similarity),
            csv_f64(e.test_accuracy),
            csv_opt(e.wsr),
            csv_f64(e.lr),
        ));
    }
    out
}

pub fn distill_log_csv(log: &[DistillEpochLog]) -> String {
    let mut out = String::from("epoch,loss,victim_agreement,lr\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            csv_f64(e.loss),
            csv_f64(e.victim_agreement),
            csv_f64(e.lr),
        ));
    }
    out
}

pub fn attack_outcomes_csv(rows: &[AttackOutcome]) -> String {
    let mut out = String::from("attack,param,acc_before,acc_after,wsr_before,wsr_after\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.attack,
            r.param,
            csv_opt(r.acc_before),
            csv_opt(r.acc_after),
            csv_f64(r.wsr_before),
            csv_opt(r.wsr_after),
        ));
    }
    out
}

pub fn attack_outcomes_markdown(rows: &[AttackOutcome]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.attack.clone(),
                r.param.clone(),
                md_opt(r.acc_before, 4),
                md_opt(r.acc_after, 4),
                md_f64(r.wsr_before, 4),
                r.wsr_after.map(|w| md_f64(w, 4)).unwrap_or_else(|| "skipped".into()),
            ]
        })
        .collect();
    markdown_table(
        &["attack", "param", "acc before", "acc after", "wsr before", "wsr after"],
        &body,
    )
}

pub fn forgery_outcomes_csv(rows: &[ForgeryOutcome]) -> String {
    let mut out = String::from("forgery,samples,wsr\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.forgery, r.samples, csv_f64(r.wsr)));
    }
    out
}

pub fn forgery_outcomes_markdown(rows: &[ForgeryOutcome]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.forgery.clone(), r.samples.to_string(), md_f64(r.wsr, 4)])
        .collect();
    markdown_table(&["forgery", "samples", "wsr"], &body)
}

/// Hidden-feature matrix with labels, one row per sample.
pub fn features_csv(rows: &[(usize, Vec<f32>)]) -> String {
    let width = rows.first().map_or(0, |(_, f)| f.len());
    let mut out = String::from("label");
    for i in 0..width {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for (label, feat) in rows {
        out.push_str(&label.to_string());
        for v in feat {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Quality summary table. The LPIPS column is declared but never measured —
/// it needs a pretrained perceptual network this artifact does not ship —
/// so it always renders as unavailable.
pub fn metric_report_markdown(name: &str, r: &MetricReport) -> String {
    let row = vec![
        name.to_string(),
        md_opt(r.psnr_db, 2),
        md_opt(r.ssim, 4),
        "n/a".to_string(),
        md_opt(r.accuracy, 4),
        md_opt(r.wsr, 4),
        r.image_pairs.to_string(),
        r.accuracy_samples.to_string(),
        r.wsr_samples.to_string(),
    ];
    markdown_table(
        &["run", "psnr (dB)", "ssim", "lpips", "accuracy", "wsr", "pairs", "acc n", "wsr n"],
        &[row],
    )
}

pub fn metric_report_csv(name: &str, r: &MetricReport) -> String {
    format!(
        "run,psnr_db,ssim,accuracy,wsr,image_pairs,accuracy_samples,wsr_samples\n{},{},{},{},{},{},{},{}\n",
        name,
        csv_opt(r.psnr_db),
        csv_opt(r.ssim),
        csv_opt(r.accuracy),
        csv_opt(r.wsr),
        r.image_pairs,
        r.accuracy_samples,
        r.wsr_samples,
    )
}

pub fn verification_markdown(r: &VerificationReport) -> String {
    let decision = match r.decision {
        crate::verify::Decision::Owned => "owned",
        crate::verify::Decision::NotOwned => "not owned",
    };
    let rows = vec![
        vec!["queries answered".into(), r.queries.to_string()],
        vec!["queries failed".into(), r.failed_queries.to_string()],
        vec!["target class".into(), r.target.to_string()],
        vec!["target hits".into(), r.hits.to_string()],
        vec!["observed wsr".into(), md_f64(r.wsr, 4)],
        vec!["threshold τ".into(), md_f64(r.tau, 4)],
        vec!["significance α".into(), format!("{:e}", r.alpha)],
        vec!["null rate".into(), md_f64(r.null_rate, 4)],
        vec!["p-value".into(), format!("{:e}", r.p_value)],
        vec!["decision".into(), decision.into()],
    ];
    markdown_table(&["quantity", "value"], &rows)
}

/// Ablation sweep rows: one parameter setting and the metrics it reached.
pub fn ablation_csv(param: &str, rows: &[(f64, f64, f64)]) -> String {
    let mut out = format!("{param},accuracy,wsr\n");
    for (p, acc, w) in rows {
        out.push_str(&format!("{},{},{}\n", csv_f64(*p), csv_f64(*acc), csv_f64(*w)));
    }
    out
}
