use std::fmt::Write as _;
use std::str::FromStr;

use super::{EvalReport, SweepRow};
use crate::{Error, Result};

/// Per-class rows are left out of text reports above this many classes.
pub const PER_CLASS_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::Config(format!("unknown table format {other:?}"))),
        }
    }
}

/// Accuracy as a percentage with one decimal, e.g. `81.5`.
pub fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let text: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", text.join("  ").trim_end()).expect("writing to a String");
    };
    line(header);
    line(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>());
    for row in rows {
        line(row);
    }
    out
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn axes(rows: &[SweepRow]) -> Vec<&'static str> {
    rows.first()
        .map(|r| r.point.settings.iter().map(|s| s.axis()).collect())
        .unwrap_or_default()
}

/// Sweep results as an aligned table or CSV. CSV keeps full precision.
pub fn emit_table(rows: &[SweepRow], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Data("no sweep results to tabulate".into()));
    }
    let axes = axes(rows);
    let text = format == TableFormat::Text;
    let mut header: Vec<String> = Vec::new();
    if text {
        header.push("rank".into());
    }
    header.extend(axes.iter().map(|a| a.to_string()));
    let tail = if text {
        ["acc(%)", "val(%)", "plateau", "seed", "fingerprint"]
    } else {
        ["accuracy", "best_val_accuracy", "plateau_epoch", "seed", "fingerprint"]
    };
    header.extend(tail.map(String::from));
    header.push("error".into());
    let cells: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut cells = Vec::new();
            if text {
                cells.push((i + 1).to_string());
            }
            cells.extend(row.point.settings.iter().map(|s| s.value()));
            let num = |v: f64| if text { percent(v) } else { v.to_string() };
            match &row.outcome {
                Ok(r) => {
                    cells.push(num(r.evaluation.accuracy));
                    cells.push(r.best_val_accuracy.map(num).unwrap_or_default());
                    cells.push(r.plateau_epoch.map(|e| e.to_string()).unwrap_or_default());
                    cells.push(row.seed.to_string());
                    cells.push(if text {
                        r.fingerprint[..12].to_string()
                    } else {
                        r.fingerprint.clone()
                    });
                    cells.push(String::new());
                }
                Err(e) => {
                    cells.extend([
                        String::new(),
                        String::new(),
                        String::new(),
                        row.seed.to_string(),
                        String::new(),
                    ]);
                    cells.push(e.clone());
                }
            }
            cells
        })
        .collect();
    match format {
        TableFormat::Text => Ok(aligned(&header, &cells)),
        TableFormat::Csv => csv_string(&header, &cells),
    }
}

/// `series,x,y` rows for charting accuracy (%) against `axis`; the series
/// is the rest of each point's settings.
pub fn emit_plot_data(rows: &[SweepRow], axis: &str) -> Result<String> {
    let mut out: Vec<(String, String, f64, Option<f64>)> = Vec::new();
    for row in rows {
        let Some(setting) = row.point.settings.iter().find(|s| s.axis() == axis) else {
            return Err(Error::Config(format!("sweep has no axis {axis:?}")));
        };
        let Some(acc) = row.accuracy() else { continue };
        let series: Vec<String> = row
            .point
            .settings
            .iter()
            .filter(|s| s.axis() != axis)
            .map(ToString::to_string)
            .collect();
        let series = if series.is_empty() {
            "all".to_string()
        } else {
            series.join(";")
        };
        out.push((series, setting.value(), acc * 100.0, setting.x()));
    }
    out.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| match (a.3, b.3) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => a.1.cmp(&b.1),
        })
    });
    let header = ["series", "x", "y"].map(String::from);
    let cells: Vec<Vec<String>> = out.into_iter().map(|(s, x, y, _)| vec![s, x, y.to_string()]).collect();
    csv_string(&header, &cells)
}

/// Human-readable summary of one run.
pub fn render_report(report: &EvalReport) -> String {
    let e = &report.evaluation;
    let mut out = String::new();
    let mut put = |s: String| writeln!(out, "{s}").expect("writing to a String");
    put(format!(
        "test accuracy   {} % ({}/{})",
        percent(e.accuracy),
        e.correct,
        e.total
    ));
    if let Some(v) = report.best_val_accuracy {
        put(format!(
            "best validation {} % at epoch {}",
            percent(v),
            report.selected_epoch
        ));
    }
    if let Some(p) = report.plateau_epoch {
        put(format!("plateau epoch   {p} of {}", report.epochs_run));
    }
    put(format!("optimizer       {}", report.optimizer));
    put(format!("seed            {}", report.seed));
    put(format!("fingerprint     {}", report.fingerprint));
    if e.per_source_accuracy.len() > 1 {
        put(String::new());
        let rows: Vec<Vec<String>> = e
            .per_source_accuracy
            .iter()
            .map(|(s, a)| vec![s.clone(), percent(*a)])
            .collect();
        put(aligned(&["source".into(), "acc(%)".into()], &rows));
    }
    if e.num_classes() <= PER_CLASS_LIMIT {
        put(String::new());
        let rows: Vec<Vec<String>> = e
            .class_names
            .iter()
            .zip(&e.per_class_accuracy)
            .zip(&e.confusion)
            .map(|((name, acc), row)| {
                vec![
                    name.clone(),
                    row.iter().sum::<usize>().to_string(),
                    acc.map(percent).unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        put(aligned(&["class".into(), "n".into(), "acc(%)".into()], &rows));
    }
    out
}

/// Accuracies laid out as labelled rows by named columns, for the
/// extractor-by-dataset and per-source comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub row_label: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ComparisonTable {
    pub fn new(row_label: &str, columns: &[&str]) -> Self {
        Self {
            row_label: row_label.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, cells: Vec<Option<f64>>) -> Result<()> {
        if cells.len() != self.columns.len() {
            return Err(Error::Data(format!(
                "row {label:?} has {} cells for {} columns",
                cells.len(),
                self.columns.len()
            )));
        }
        self.rows.push((label.to_string(), cells));
        Ok(())
    }

    /// Per-source test accuracy of several runs, one row per run.
    pub fn per_source(runs: &[(&str, &EvalReport)]) -> Result<Self> {
        let mut sources: Vec<String> = Vec::new();
        for (_, r) in runs {
            for s in r.evaluation.per_source_accuracy.keys() {
                if !sources.contains(s) {
                    sources.push(s.clone());
                }
            }
        }
        let mut columns: Vec<&str> = sources.iter().map(String::as_str).collect();
        columns.push("overall");
        let mut table = Self::new("run", &columns);
        for (label, r) in runs {
            let mut cells: Vec<Option<f64>> = sources
                .iter()
                .map(|s| r.evaluation.per_source_accuracy.get(s).copied())
                .collect();
            cells.push(Some(r.evaluation.accuracy));
            table.push(label, cells)?;
        }
        Ok(table)
    }

    pub fn render(&self, format: TableFormat) -> Result<String> {
        let mut header = vec![self.row_label.clone()];
        header.extend(self.columns.iter().cloned());
        let text = format == TableFormat::Text;
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(label, values)| {
                let mut row = vec![label.clone()];
                row.extend(values.iter().map(|v| match v {
                    Some(v) if text => percent(*v),
                    Some(v) => v.to_string(),
                    None if text => "-".into(),
                    None => String::new(),
                }));
                row
            })
            .collect();
        match format {
            TableFormat::Text => Ok(aligned(&header, &cells)),
            TableFormat::Csv => csv_string(&header, &cells),
        }
    }
}
