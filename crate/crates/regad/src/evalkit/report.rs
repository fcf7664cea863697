use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{RegadError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub image_auc: f64,
    /// `None` when the test set has no defect pixels.
    pub pixel_auc: Option<f64>,
    pub adapt_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub category: String,
    pub k: usize,
    pub runs: Vec<RunResult>,
    pub mean_image_auc: f64,
    pub std_image_auc: f64,
    pub mean_pixel_auc: Option<f64>,
    pub std_pixel_auc: Option<f64>,
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn new(category: &str, k: usize, runs: Vec<RunResult>) -> Self {
        let img: Vec<f64> = runs.iter().map(|r| r.image_auc).collect();
        let (mean_image_auc, std_image_auc) = mean_std(&img);
        let px: Option<Vec<f64>> = runs.iter().map(|r| r.pixel_auc).collect();
        let (mean_pixel_auc, std_pixel_auc) = match px {
            Some(v) if !v.is_empty() => {
                let (m, s) = mean_std(&v);
                (Some(m), Some(s))
            }
            _ => (None, None),
        };
        EvalReport {
            category: category.to_string(),
            k,
            runs,
            mean_image_auc,
            std_image_auc,
            mean_pixel_auc,
            std_pixel_auc,
        }
    }
}

/// Unweighted mean of per-category means.
pub fn macro_average(reports: &[EvalReport]) -> (f64, Option<f64>) {
    let img: Vec<f64> = reports.iter().map(|r| r.mean_image_auc).collect();
    let px: Option<Vec<f64>> = reports.iter().map(|r| r.mean_pixel_auc).collect();
    (mean_std(&img).0, px.map(|v| mean_std(&v).0))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

pub fn runs_csv(reports: &[EvalReport], record_timing: bool) -> String {
    let mut s = String::from("category,k,seed,image_auc,pixel_auc,adapt_seconds\n");
    for r in reports {
        for run in &r.runs {
            let t = if record_timing {
                format!("{:.3}", run.adapt_seconds)
            } else {
                "NA".into()
            };
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{},{}",
                r.category,
                r.k,
                run.seed,
                run.image_auc,
                opt(run.pixel_auc),
                t
            );
        }
    }
    s
}

pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("category,k,runs,mean_image_auc,std_image_auc,mean_pixel_auc,std_pixel_auc\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{},{}",
            r.category,
            r.k,
            r.runs.len(),
            r.mean_image_auc,
            r.std_image_auc,
            opt(r.mean_pixel_auc),
            opt(r.std_pixel_auc)
        );
    }
    if let Some(first) = reports.first() {
        let (img, px) = macro_average(reports);
        let _ = writeln!(
            s,
            "average,{},{},{:.6},NA,{},NA",
            first.k,
            first.runs.len(),
            img,
            opt(px)
        );
    }
    s
}

pub fn write_reports(dir: &Path, reports: &[EvalReport], record_timing: bool) -> Result<[std::path::PathBuf; 2]> {
    fs::create_dir_all(dir).map_err(|e| RegadError::io(dir, e))?;
    let runs = dir.join("report.csv");
    let summary = dir.join("summary.csv");
    fs::write(&runs, runs_csv(reports, record_timing)).map_err(|e| RegadError::io(&runs, e))?;
    fs::write(&summary, summary_csv(reports)).map_err(|e| RegadError::io(&summary, e))?;
    Ok([runs, summary])
}
