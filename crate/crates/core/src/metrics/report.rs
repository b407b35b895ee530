use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mean_std;
use super::svg::{accuracy_curves_svg, Curve};
use crate::autograd::Array;
use crate::error::{Error, Result};
use crate::trainer::RunRecord;

pub const METRIC_SCHEMA_VERSION: u32 = 1;

/// One row per (run, task).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub mode: String,
    pub task: usize,
    pub alpha_all_t: f64,
    pub lambda_od_final: f64,
    pub ada_p_final: f64,
    pub wall_seconds: f64,
}

impl MetricRecord {
    pub fn from_run(r: &RunRecord) -> Vec<MetricRecord> {
        r.tasks
            .iter()
            .map(|t| MetricRecord {
                schema_version: METRIC_SCHEMA_VERSION,
                run_id: r.run_id.clone(),
                mode: r.mode.clone(),
                task: t.task,
                alpha_all_t: t.alpha_all_t,
                lambda_od_final: t.lambda_od_final,
                ada_p_final: t.ada_p_final,
                wall_seconds: t.wall_seconds,
            })
            .collect()
    }
}

/// One summary row: a method on one task split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    /// `first+step`, e.g. `5+5`.
    pub split: String,
    pub runs: usize,
    pub alpha_all_mean: f64,
    pub alpha_all_std: f64,
    pub first_task_final_mean: f64,
    pub final_accuracy_mean: f64,
}

/// Paths written by `emit_report`.
#[derive(Clone, Debug, Default)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub runs: PathBuf,
    pub summary_json: PathBuf,
    pub summary_table: PathBuf,
    pub curves: Vec<PathBuf>,
    pub grouped_curve: PathBuf,
}

fn split_label(r: &RunRecord) -> String {
    match r.tasks_classes.as_slice() {
        [] => "0".into(),
        [first] => format!("{}", first.len()),
        [first, second, ..] => format!("{}+{}", first.len(), second.len()),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ndjson<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(&r).map_err(|e| Error::Format(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.mode.clone(), split_label(r))).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((mode, split), runs)| {
            let alphas: Vec<f64> = runs.iter().filter_map(|r| r.alpha_all).collect();
            let (alpha_all_mean, alpha_all_std) = mean_std(&alphas);
            let firsts: Vec<f64> = runs.iter().filter_map(|r| r.first_task_final_accuracy()).collect();
            let finals: Vec<f64> = runs.iter().filter_map(|r| r.final_accuracy()).collect();
            SummaryRow {
                mode,
                split,
                runs: runs.len(),
                alpha_all_mean,
                alpha_all_std,
                first_task_final_mean: mean_std(&firsts).0,
                final_accuracy_mean: mean_std(&finals).0,
            }
        })
        .collect()
}

fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut s = String::from("| method | split | runs | alpha_all | first task final | final |\n|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.4} ± {:.4} | {:.4} | {:.4} |\n",
            r.mode, r.split, r.runs, r.alpha_all_mean, r.alpha_all_std, r.first_task_final_mean, r.final_accuracy_mean
        ));
    }
    s
}

/// Mean trace per mode, over runs of equal length.
fn grouped_curves(records: &[RunRecord]) -> Vec<Curve> {
    let mut by_mode: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for r in records {
        by_mode.entry(&r.mode).or_default().push(r.alpha_trace());
    }
    by_mode
        .into_iter()
        .map(|(mode, traces)| {
            let len = traces.iter().map(Vec::len).min().unwrap_or(0);
            let points = (0..len)
                .map(|t| mean_std(&traces.iter().map(|tr| tr[t]).collect::<Vec<_>>()).0)
                .collect();
            Curve {
                label: mode.to_string(),
                points,
            }
        })
        .collect()
}

/// Writes per-(run, task) metric rows, the raw run records, a summary table
/// and accuracy-vs-task curves. Output depends only on `records`.
pub fn emit_report(records: &[RunRecord], out_dir: &Path) -> Result<ReportFiles> {
    let curves_dir = out_dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let mut files = ReportFiles {
        metrics: out_dir.join("metrics.ndjson"),
        runs: out_dir.join("runs.ndjson"),
        summary_json: out_dir.join("summary.json"),
        summary_table: out_dir.join("summary.md"),
        grouped_curve: out_dir.join("curves.svg"),
        curves: Vec::new(),
    };
    write(&files.metrics, &ndjson(records.iter().flat_map(MetricRecord::from_run))?)?;
    write(&files.runs, &ndjson(records)?)?;
    let rows = summarize(records);
    let summary = serde_json::json!({
        "schema_version": METRIC_SCHEMA_VERSION,
        "rows": rows,
    });
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    write(&files.summary_json, &(json + "\n"))?;
    write(&files.summary_table, &summary_markdown(&rows))?;
    for r in records {
        let path = curves_dir.join(format!("{}.svg", file_safe(&r.run_id)));
        let curve = Curve {
            label: r.mode.clone(),
            points: r.alpha_trace(),
        };
        write(&path, &accuracy_curves_svg(&r.run_id, &[curve]))?;
        files.curves.push(path);
    }
    write(&files.grouped_curve, &accuracy_curves_svg("accuracy by task", &grouped_curves(records)))?;
    Ok(files)
}

/// Writes `images` (NHWC in [0, 1]) as a PNG grid with `columns` tiles per row.
pub fn write_sample_grid(images: &Array, columns: usize, path: &Path) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || !(s[3] == 1 || s[3] == 3) {
        return Err(Error::Shape(format!("sample grid needs NHWC with 1 or 3 channels, got {s:?}")));
    }
    if columns == 0 || s[0] == 0 {
        return Err(Error::Contract("sample grid needs at least one image and one column".into()));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let rows = n.div_ceil(columns);
    let (gw, gh) = ((columns * (w + 1) + 1) as u32, (rows * (h + 1) + 1) as u32);
    let mut img = image::RgbImage::new(gw, gh);
    for i in 0..n {
        let (ox, oy) = ((i % columns) * (w + 1) + 1, (i / columns) * (h + 1) + 1);
        for y in 0..h {
            for x in 0..w {
                let px: [u8; 3] = std::array::from_fn(|k| {
                    let v = images[[i, y, x, if c == 1 { 0 } else { k }]];
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                });
                img.put_pixel((ox + x) as u32, (oy + y) as u32, image::Rgb(px));
            }
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(other.to_string()),
        })
}
