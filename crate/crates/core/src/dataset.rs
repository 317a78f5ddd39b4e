//! Feature matrices: one row per auction hour plus the target price.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::split_point;
use crate::features::{assemble_features, feature_names, target_price, MarketStore, FEATURE_SET_VERSION};
use crate::io_util::write_atomic;
use crate::market::AuctionHour;
use crate::partition::PriceClassScheme;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub hours: Vec<AuctionHour>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, hours: Vec<AuctionHour>, rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if hours.len() != rows.len() || rows.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: hours.len(),
                actual: rows.len().min(targets.len()),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                actual: r.len(),
            });
        }
        Ok(FeatureMatrix {
            names,
            hours,
            rows,
            targets,
        })
    }

    /// Rows for every hour in `hours` whose features and target can be
    /// assembled; the rest are skipped and logged.
    pub fn build<S: MarketStore + Sync>(
        store: &S,
        hours: &[AuctionHour],
        scheme: &PriceClassScheme,
    ) -> Result<Self> {
        let mut hours = hours.to_vec();
        hours.sort();
        hours.dedup();
        let built: Vec<Option<(AuctionHour, Vec<f64>, f64)>> = hours
            .par_iter()
            .map(|&t| {
                let fv = assemble_features(t, store, scheme).ok()?;
                let y = target_price(t, store, scheme).ok()?;
                Some((t, fv.values(), y.eur()))
            })
            .collect();
        let skipped = built.iter().filter(|b| b.is_none()).count();
        if skipped > 0 {
            log::info!("{skipped} hour(s) skipped for incomplete inputs");
        }
        let mut m = FeatureMatrix {
            names: feature_names(scheme),
            hours: Vec::new(),
            rows: Vec::new(),
            targets: Vec::new(),
        };
        for (t, row, y) in built.into_iter().flatten() {
            m.hours.push(t);
            m.rows.push(row);
            m.targets.push(y);
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    fn column_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        let lookup: HashMap<&str, usize> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        names
            .iter()
            .map(|n| {
                lookup
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::MissingData(format!("feature column {n}")))
            })
            .collect()
    }

    /// Rows restricted to the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        if names == self.names.as_slice() {
            return Ok(self.rows.clone());
        }
        let idx = self.column_indices(names)?;
        Ok(self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect())
    }

    pub fn select(&self, names: &[String]) -> Result<Self> {
        Ok(FeatureMatrix {
            names: names.to_vec(),
            hours: self.hours.clone(),
            rows: self.project(names)?,
            targets: self.targets.clone(),
        })
    }

    /// Drops the reference-day order-book columns.
    pub fn without_curve_features(&self) -> Self {
        let keep: Vec<String> = self
            .names
            .iter()
            .filter(|n| !is_curve_feature(n))
            .cloned()
            .collect();
        self.select(&keep).expect("names come from self")
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        FeatureMatrix {
            names: self.names.clone(),
            hours: self.hours[range.clone()].to_vec(),
            rows: self.rows[range.clone()].to_vec(),
            targets: self.targets[range].to_vec(),
        }
    }

    /// Holds out the last `ceil(test_fraction * n)` rows.
    pub fn chronological_split(&self, test_fraction: f64) -> Result<(Self, Self)> {
        let cut = split_point(self.len(), test_fraction)?;
        Ok((self.slice(0..cut), self.slice(cut..self.len())))
    }

    pub fn to_csv(&self, scheme_hash: &str) -> String {
        let mut out = format!(
            "# feature_set={FEATURE_SET_VERSION} scheme={scheme_hash} n_features={}\n",
            self.n_features()
        );
        out.push_str("date,hour,");
        out.push_str(&self.names.join(","));
        out.push_str(",target\n");
        for ((t, row), y) in self.hours.iter().zip(&self.rows).zip(&self.targets) {
            out.push_str(&format!("{},{}", t.date, t.hour()));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{y}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path, scheme_hash: &str) -> Result<()> {
        write_atomic(path, self.to_csv(scheme_hash).as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, &path.display().to_string())
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let row_err = |line: u64, message: String| Error::MalformedRow {
            path: origin.to_string(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let n = header.len();
        if n < 3 || &header[0] != "date" || &header[1] != "hour" || &header[n - 1] != "target" {
            return Err(Error::MalformedFile {
                path: origin.into(),
                message: "header must be date,hour,<features...>,target".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(2).take(n - 3).map(String::from).collect();
        let mut m = FeatureMatrix {
            names,
            hours: Vec::new(),
            rows: Vec::new(),
            targets: Vec::new(),
        };
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != n {
                return Err(row_err(line, format!("expected {n} fields, got {}", record.len())));
            }
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|e| row_err(line, format!("bad date {:?}: {e}", &record[0])))?;
            let hour: u8 = record[1]
                .parse()
                .map_err(|e| row_err(line, format!("bad hour {:?}: {e}", &record[1])))?;
            let t = AuctionHour::new(date, hour).map_err(|e| row_err(line, e.to_string()))?;
            let values: Vec<f64> = record
                .iter()
                .skip(2)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| row_err(line, format!("bad number {s:?}")))
                })
                .collect::<Result<_>>()?;
            if m.hours.last().is_some_and(|prev| *prev >= t) {
                return Err(row_err(line, format!("hour {t} is not after the previous row")));
            }
            m.hours.push(t);
            m.targets.push(values[n - 3]);
            m.rows.push(values[..n - 3].to_vec());
        }
        Ok(m)
    }
}

pub fn is_curve_feature(name: &str) -> bool {
    name.starts_with("ref_class_") || name == "ref_inelastic_demand"
}
