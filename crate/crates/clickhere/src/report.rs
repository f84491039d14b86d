//! Report files: one JSON record per line, plus CSV tables for plotting.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clickhere_core::eval::{
    AblationRow, ClassMetrics, EvalReport, InstanceError, KeypointMetrics, PairedComparison, SweepRow,
};
use clickhere_core::metrics::AccCurve;
use clickhere_core::train::LogRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One line of an evaluation report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Summary {
        tag: String,
        n_bins: usize,
        mean_acc: f64,
        mean_med_err_deg: f64,
        nauc: f64,
    },
    Class(ClassMetrics),
    Keypoint(KeypointMetrics),
    Curve { thresholds: Vec<f64>, accuracy: Vec<f64> },
    Instance(InstanceError),
}

pub fn report_records(r: &EvalReport) -> Vec<ReportRecord> {
    let mut out = vec![ReportRecord::Summary {
        tag: r.tag.clone(),
        n_bins: r.n_bins,
        mean_acc: r.mean_acc,
        mean_med_err_deg: r.mean_med_err_deg,
        nauc: r.curve.nauc,
    }];
    out.extend(r.classes.iter().cloned().map(ReportRecord::Class));
    out.extend(r.keypoints.iter().cloned().map(ReportRecord::Keypoint));
    out.push(ReportRecord::Curve {
        thresholds: r.curve.thresholds.clone(),
        accuracy: r.curve.accuracy.clone(),
    });
    out.extend(r.instances.iter().cloned().map(ReportRecord::Instance));
    out
}

/// Inverse of [`report_records`].
pub fn report_from_records(records: Vec<ReportRecord>) -> Result<EvalReport, String> {
    let mut summary = None;
    let mut curve = None;
    let (mut classes, mut keypoints, mut instances) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        match r {
            ReportRecord::Summary {
                tag,
                n_bins,
                mean_acc,
                mean_med_err_deg,
                nauc,
            } => {
                if summary.replace((tag, n_bins, mean_acc, mean_med_err_deg, nauc)).is_some() {
                    return Err("more than one summary record".into());
                }
            }
            ReportRecord::Class(c) => classes.push(c),
            ReportRecord::Keypoint(k) => keypoints.push(k),
            ReportRecord::Curve { thresholds, accuracy } => {
                if curve.replace((thresholds, accuracy)).is_some() {
                    return Err("more than one curve record".into());
                }
            }
            ReportRecord::Instance(i) => instances.push(i),
        }
    }
    let (tag, n_bins, mean_acc, mean_med_err_deg, nauc) = summary.ok_or("missing summary record")?;
    let (thresholds, accuracy) = curve.ok_or("missing curve record")?;
    Ok(EvalReport {
        tag,
        n_bins,
        classes,
        mean_acc,
        mean_med_err_deg,
        keypoints,
        curve: AccCurve {
            thresholds,
            accuracy,
            nauc,
        },
        instances,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ReportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io(path))?);
    for r in rows {
        serde_json::to_writer(&mut w, &r).expect("record serializes");
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let f = fs::File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReportError::Format {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io(path))
}

/// `<prefix>.jsonl`, `<prefix>.csv` and `<prefix>_curve.csv`.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct MetricRow<'a> {
    scope: &'a str,
    object: Option<usize>,
    keypoint: Option<usize>,
    name: &'a str,
    count: usize,
    acc: f64,
    med_err_deg: f64,
}

#[derive(Debug, Serialize)]
struct CurveRow {
    threshold: f64,
    accuracy: f64,
}

pub fn write_eval_report(prefix: &Path, r: &EvalReport) -> Result<(), ReportError> {
    write_jsonl(&with_suffix(prefix, ".jsonl"), report_records(r))?;
    let total = r.classes.iter().map(|c| c.metrics.count).sum();
    let mut rows = vec![MetricRow {
        scope: "mean",
        object: None,
        keypoint: None,
        name: &r.tag,
        count: total,
        acc: r.mean_acc,
        med_err_deg: r.mean_med_err_deg,
    }];
    rows.extend(r.classes.iter().map(|c| MetricRow {
        scope: "class",
        object: Some(c.object),
        keypoint: None,
        name: &c.name,
        count: c.metrics.count,
        acc: c.metrics.acc,
        med_err_deg: c.metrics.med_err_deg,
    }));
    rows.extend(r.keypoints.iter().map(|k| MetricRow {
        scope: "keypoint",
        object: Some(k.object),
        keypoint: Some(k.keypoint),
        name: &k.name,
        count: k.metrics.count,
        acc: k.metrics.acc,
        med_err_deg: k.metrics.med_err_deg,
    }));
    write_csv(&with_suffix(prefix, ".csv"), rows)?;
    write_csv(
        &with_suffix(prefix, "_curve.csv"),
        r.curve
            .thresholds
            .iter()
            .zip(&r.curve.accuracy)
            .map(|(&threshold, &accuracy)| CurveRow { threshold, accuracy }),
    )
}

pub fn read_eval_report(path: &Path) -> Result<EvalReport, ReportError> {
    let records = read_jsonl(path)?;
    report_from_records(records).map_err(|message| ReportError::Format {
        path: path.to_path_buf(),
        line: 0,
        message,
    })
}

#[derive(Debug, Serialize)]
struct TrainRow {
    stage: u8,
    step: usize,
    train_loss: f64,
    val_acc: f64,
    val_med_err_deg: f64,
    improved: bool,
}

/// `<prefix>.jsonl` with every log record and `<prefix>.csv` with the
/// evaluation records.
pub fn write_train_log(prefix: &Path, log: &[LogRecord]) -> Result<(), ReportError> {
    write_jsonl(&with_suffix(prefix, ".jsonl"), log)?;
    write_csv(
        &with_suffix(prefix, ".csv"),
        log.iter().filter_map(|r| match *r {
            LogRecord::Eval {
                stage,
                step,
                train_loss,
                val_acc,
                val_med_err_deg,
                improved,
            } => Some(TrainRow {
                stage,
                step,
                train_loss,
                val_acc,
                val_med_err_deg,
                improved,
            }),
            _ => None,
        }),
    )
}

#[derive(Debug, Serialize)]
struct AblationCsvRow<'a> {
    map: bool,
    class: bool,
    object: Option<usize>,
    name: &'a str,
    count: usize,
    acc: f64,
    med_err_deg: f64,
}

pub fn write_ablation(prefix: &Path, rows: &[AblationRow]) -> Result<(), ReportError> {
    write_jsonl(&with_suffix(prefix, ".jsonl"), rows)?;
    let mut out = Vec::new();
    for r in rows {
        out.push(AblationCsvRow {
            map: r.map,
            class: r.class,
            object: None,
            name: "mean",
            count: r.classes.iter().map(|c| c.metrics.count).sum(),
            acc: r.mean_acc,
            med_err_deg: r.mean_med_err_deg,
        });
        out.extend(r.classes.iter().map(|c| AblationCsvRow {
            map: r.map,
            class: r.class,
            object: Some(c.object),
            name: &c.name,
            count: c.metrics.count,
            acc: c.metrics.acc,
            med_err_deg: c.metrics.med_err_deg,
        }));
    }
    write_csv(&with_suffix(prefix, ".csv"), out)
}

#[derive(Debug, Serialize)]
struct SweepCsvRow {
    sigma_px: f64,
    trials: usize,
    mean_acc: f64,
    mean_med_err_deg: f64,
}

pub fn write_sweep(prefix: &Path, rows: &[SweepRow]) -> Result<(), ReportError> {
    write_jsonl(&with_suffix(prefix, ".jsonl"), rows)?;
    write_csv(
        &with_suffix(prefix, ".csv"),
        rows.iter().map(|r| SweepCsvRow {
            sigma_px: r.sigma,
            trials: r.trials,
            mean_acc: r.mean_acc,
            mean_med_err_deg: r.mean_med_err_deg,
        }),
    )
}

pub fn write_comparison(path: &Path, c: &PairedComparison) -> Result<(), ReportError> {
    write_jsonl(path, [c])
}
