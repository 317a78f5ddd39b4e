//! Error metrics, the naive benchmark, chronological splits, k-fold
//! cross-validation and grid search.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::features::{reference_date, Calendars, DayType};
use crate::market::AuctionHour;
use crate::models::{self, ModelConfig, TrainedModel};

/// Observed prices keyed by auction hour.
pub type PriceHistory = BTreeMap<AuctionHour, f64>;

/// Lower median (element `(n - 1) / 2` after sorting); `None` when empty.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    /// Fraction, not percent. NaN when every truth is zero.
    pub mdape: f64,
    pub n: usize,
    pub n_excluded_mdape: usize,
}

pub fn compute_metrics(predictions: &[f64], truths: &[f64]) -> Result<MetricReport> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one prediction"));
    }
    let n = truths.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut ape = Vec::with_capacity(truths.len());
    for (p, y) in predictions.iter().zip(truths) {
        let e = p - y;
        sq += e * e;
        abs += e.abs();
        if *y != 0.0 {
            ape.push(e.abs() / y.abs());
        }
    }
    let n_excluded_mdape = truths.len() - ape.len();
    Ok(MetricReport {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        mdape: lower_median(&mut ape).unwrap_or(f64::NAN),
        n: truths.len(),
        n_excluded_mdape,
    })
}

/// Date whose price the naive benchmark copies for `date`: the previous day
/// for workdays other than Monday, otherwise the same day type one week back.
/// If the day one week back has a different type, the latest day of the same
/// type in the preceding week is used, then any earlier one.
pub fn naive_source(date: NaiveDate, calendars: &Calendars) -> Result<NaiveDate> {
    let kind = calendars.day_type(date);
    if kind == DayType::Workday && date.weekday() != Weekday::Mon {
        return Ok(date - Duration::days(1));
    }
    let week_back = date - Duration::days(7);
    if calendars.day_type(week_back) == kind {
        return Ok(week_back);
    }
    (1..7)
        .map(|k| date - Duration::days(k))
        .find(|d| calendars.day_type(*d) == kind)
        .map_or_else(|| reference_date(date, calendars), Ok)
}

pub fn naive_forecast(t: AuctionHour, history: &PriceHistory, calendars: &Calendars) -> Result<f64> {
    let source = t.with_date(naive_source(t.date, calendars)?);
    history
        .get(&source)
        .copied()
        .ok_or_else(|| Error::MissingHistory(format!("no price for {source} (naive forecast of {t})")))
}

/// Size of the training part when the last `ceil(fraction * n)` rows are
/// held out.
pub fn split_point(n: usize, test_fraction: f64) -> Result<usize> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = ((test_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::EmptyInput("chronological split leaves one side empty"));
    }
    Ok(n - n_test)
}

/// Contiguous folds in row order; sizes differ by at most one.
pub fn fold_ranges(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::EmptyInput("fewer rows than folds"));
    }
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

pub fn cross_validate(
    data: &FeatureMatrix,
    config: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let folds = fold_ranges(data.len(), k)?;
    let mut fold_rmse = Vec::with_capacity(k);
    for fold in &folds {
        let (train_x, train_y): (Vec<Vec<f64>>, Vec<f64>) = (0..data.len())
            .filter(|i| !fold.contains(i))
            .map(|i| (data.rows[i].clone(), data.targets[i]))
            .unzip();
        let model = models::fit(config, &train_x, &train_y, &data.names, seed)?;
        let pred = model.predict(&data.rows[fold.clone()])?;
        let report = compute_metrics(&pred, &data.targets[fold.clone()])?;
        if !report.rmse.is_finite() {
            return Err(Error::Diverged("non-finite validation error".into()));
        }
        fold_rmse.push(report.rmse);
    }
    let mean_rmse = fold_rmse.iter().sum::<f64>() / k as f64;
    Ok(CvResult { fold_rmse, mean_rmse })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: usize,
    pub config: ModelConfig,
    /// `Err` holds the failure message of a cell that could not be scored.
    pub outcome: std::result::Result<CvResult, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub k: usize,
    pub cells: Vec<GridCell>,
}

impl CvTable {
    /// Lowest mean RMSE; ties go to the earliest cell.
    pub fn best(&self) -> Option<&GridCell> {
        self.cells
            .iter()
            .filter_map(|c| c.outcome.as_ref().ok().map(|r| (c, r.mean_rmse)))
            .fold(None, |acc: Option<(&GridCell, f64)>, (c, m)| match acc {
                Some((_, best)) if best <= m => acc,
                _ => Some((c, m)),
            })
            .map(|(c, _)| c)
    }

    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn to_csv(&self) -> String {
        cv_tables_csv(&[(String::new(), self.clone())])
    }
}

/// One CSV for several grid searches sharing `k`, tagged by group name.
pub fn cv_tables_csv(tables: &[(String, CvTable)]) -> String {
    let k = tables.first().map_or(0, |(_, t)| t.k);
    let mut out = String::from("group,config_id,family,label");
    for i in 1..=k {
        write!(out, ",fold_{i}_rmse").unwrap();
    }
    out.push_str(",mean_rmse,status\n");
    for (group, table) in tables {
        for c in &table.cells {
            let label = c.config.label().replace('"', "'");
            write!(out, "{group},{},{},\"{label}\"", c.id, c.config.family()).unwrap();
            match &c.outcome {
                Ok(r) => {
                    for f in &r.fold_rmse {
                        write!(out, ",{f}").unwrap();
                    }
                    writeln!(out, ",{},ok", r.mean_rmse).unwrap();
                }
                Err(msg) => {
                    out.push_str(&",".repeat(table.k + 1));
                    writeln!(out, ",\"failed: {}\"", msg.replace('"', "'")).unwrap();
                }
            }
        }
    }
    out
}

/// Cross-validates every grid point. Failed cells are recorded, not fatal.
/// The table is identical whether cells run serially or in parallel.
pub fn grid_search(
    data: &FeatureMatrix,
    grid: &[ModelConfig],
    k: usize,
    seed: u64,
    parallel: bool,
) -> Result<CvTable> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty hyperparameter grid".into()));
    }
    fold_ranges(data.len(), k)?;
    let run = |(id, config): (usize, &ModelConfig)| {
        let outcome = cross_validate(data, config, k, seed).map_err(|e| {
            log::warn!("grid cell {id} ({config}) failed: {e}");
            e.to_string()
        });
        GridCell {
            id,
            config: config.clone(),
            outcome,
        }
    };
    let cells: Vec<GridCell> = if parallel {
        grid.par_iter().enumerate().map(run).collect()
    } else {
        grid.iter().enumerate().map(run).collect()
    };
    Ok(CvTable { k, cells })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub in_sample: MetricReport,
    pub out_of_sample: MetricReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,split,rmse,mae,mdape,n,n_excluded_mdape\n");
        for r in &self.rows {
            for (split, m) in [("train", &r.in_sample), ("test", &r.out_of_sample)] {
                writeln!(
                    out,
                    "{},{split},{},{},{},{},{}",
                    r.model, m.rmse, m.mae, m.mdape, m.n, m.n_excluded_mdape
                )
                .unwrap();
            }
        }
        out
    }

    /// Fixed-width text rendering with in-sample and out-of-sample blocks.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        writeln!(
            out,
            "{:width$} | {:>24} | {:>24}",
            "",
            "in-sample",
            "out-of-sample"
        )
        .unwrap();
        writeln!(
            out,
            "{:width$} | {:>7} {:>7} {:>8} | {:>7} {:>7} {:>8}",
            "model", "RMSE", "MAE", "MdAPE", "RMSE", "MAE", "MdAPE"
        )
        .unwrap();
        writeln!(out, "{}", "-".repeat(width + 56)).unwrap();
        for r in &self.rows {
            let (a, b) = (&r.in_sample, &r.out_of_sample);
            writeln!(
                out,
                "{:width$} | {:>7.2} {:>7.2} {:>7.1}% | {:>7.2} {:>7.2} {:>7.1}%",
                r.model,
                a.rmse,
                a.mae,
                a.mdape * 100.0,
                b.rmse,
                b.mae,
                b.mdape * 100.0
            )
            .unwrap();
        }
        out
    }
}

/// Naive-benchmark metrics over the rows whose source price is known.
pub fn naive_metrics(data: &FeatureMatrix, history: &PriceHistory, calendars: &Calendars) -> Result<MetricReport> {
    let mut pred = Vec::with_capacity(data.len());
    let mut truth = Vec::with_capacity(data.len());
    let mut missing = 0usize;
    for (t, y) in data.hours.iter().zip(&data.targets) {
        match naive_forecast(*t, history, calendars) {
            Ok(p) => {
                pred.push(p);
                truth.push(*y);
            }
            Err(Error::MissingHistory(_)) => missing += 1,
            Err(e) => return Err(e),
        }
    }
    if missing > 0 {
        log::info!("naive benchmark skipped {missing} row(s) without price history");
    }
    compute_metrics(&pred, &truth)
}

/// In-sample and out-of-sample metrics for each model, plus the naive
/// benchmark as the first row.
pub fn evaluate_suite(
    models: &[(String, TrainedModel)],
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    history: &PriceHistory,
    calendars: &Calendars,
) -> Result<ComparisonTable> {
    let mut rows = vec![ComparisonRow {
        model: "naive".into(),
        in_sample: naive_metrics(train, history, calendars)?,
        out_of_sample: naive_metrics(test, history, calendars)?,
    }];
    for (name, model) in models {
        let score = |m: &FeatureMatrix| -> Result<MetricReport> {
            let x = m.project(&model.feature_names)?;
            compute_metrics(&model.predict(&x)?, &m.targets)
        };
        let wrap = |e: Error| Error::Model {
            model: name.clone(),
            source: Box::new(e),
        };
        rows.push(ComparisonRow {
            model: name.clone(),
            in_sample: score(train).map_err(wrap)?,
            out_of_sample: score(test).map_err(wrap)?,
        });
    }
    Ok(ComparisonTable { rows })
}
