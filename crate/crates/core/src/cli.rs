//! Pipeline stages behind the `obf` binary: generate, partition, features,
//! train, evaluate, and the chained pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, DatasetBundle, SyntheticMarketSpec};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::eval::{cv_tables_csv, evaluate_suite, grid_search, ComparisonTable, CvTable, PriceHistory};
use crate::features::Calendars;
use crate::io_util::write_atomic;
use crate::models::{self, rf_importance, select_features, ModelConfig, TrainedModel};
use crate::partition::PriceClassScheme;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_V_STAR: f64 = 1000.0;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_FOLDS: usize = 5;

pub const DEFAULT_GRID: &str = include_str!("../grids/default.json");
pub const PUBLISHED_GRID: &str = include_str!("../grids/published.json");

pub const SCHEME_FILE: &str = "scheme.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const CV_TABLE_FILE: &str = "cv_table.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_TEXT_FILE: &str = "comparison.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODELS_DIR: &str = "models";

/// Which columns a grid group trains on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    #[default]
    All,
    NoCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGroup {
    pub name: String,
    pub candidates: Vec<ModelConfig>,
    #[serde(default)]
    pub features: FeatureSubset,
    /// Keep only the N most important features of another group's forest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select_top: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance_from: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub groups: Vec<GridGroup>,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

impl GridFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::MalformedFile {
            path: origin.to_path_buf(),
            message,
        };
        let grid: GridFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if grid.groups.is_empty() {
            return Err(bad("grid has no groups".into()));
        }
        for (i, g) in grid.groups.iter().enumerate() {
            if g.candidates.is_empty() {
                return Err(bad(format!("group {} has no candidates", g.name)));
            }
            for c in &g.candidates {
                c.validate().map_err(|e| bad(format!("group {}: {e}", g.name)))?;
            }
            if grid.groups[..i].iter().any(|o| o.name == g.name) {
                return Err(bad(format!("duplicate group name {}", g.name)));
            }
            match (&g.select_top, &g.importance_from) {
                (Some(_), Some(src)) => {
                    if !grid.groups[..i].iter().any(|o| &o.name == src) {
                        return Err(bad(format!(
                            "group {} takes importance from {src}, which must come earlier",
                            g.name
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(bad(format!(
                        "group {}: select_top and importance_from go together",
                        g.name
                    )))
                }
            }
        }
        Ok(grid)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&fs::read_to_string(p)?, p),
            None => Self::parse(DEFAULT_GRID, Path::new("<default grid>")),
        }
    }
}

/// Everything needed to reproduce a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Existing data directory; when absent, data is generated.
    pub data: Option<PathBuf>,
    /// Synthetic spec file; the built-in default when absent.
    pub spec: Option<PathBuf>,
    pub v_star: f64,
    pub test_fraction: f64,
    pub grid: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
}

impl RunManifest {
    pub fn new(out: PathBuf) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            data: None,
            spec: None,
            v_star: DEFAULT_V_STAR,
            test_fraction: DEFAULT_TEST_FRACTION,
            grid: None,
            seed: 42,
            workers: 0,
            out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_v_star(self.v_star)?;
        crate::eval::split_point(100, self.test_fraction).map(|_| ())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn check_v_star(v_star: f64) -> Result<()> {
    if !(v_star > 0.0 && v_star.is_finite()) {
        return Err(Error::InvalidParameter(format!("V_star must be > 0, got {v_star}")));
    }
    Ok(())
}

/// Runs `f` on a pool with `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn cmd_generate(spec: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<DatasetBundle> {
    let mut spec = match spec {
        Some(p) => SyntheticMarketSpec::load(p)?,
        None => SyntheticMarketSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let bundle = generate_synthetic(&spec)?;
    bundle.save_dir(out)?;
    Ok(bundle)
}

/// Hours used for fitting: the first part of the chronological split.
pub fn training_hours(bundle: &DatasetBundle, test_fraction: f64) -> Result<Vec<crate::market::AuctionHour>> {
    let hours = bundle.hours();
    let cut = crate::eval::split_point(hours.len(), test_fraction)?;
    Ok(hours[..cut].to_vec())
}

/// Fits the price-class scheme on the training part of the data.
pub fn fit_scheme(bundle: &DatasetBundle, v_star: f64, test_fraction: f64) -> Result<PriceClassScheme> {
    check_v_star(v_star)?;
    let train = training_hours(bundle, test_fraction)?;
    PriceClassScheme::fit(&bundle.books_in(&train), v_star)
}

pub fn cmd_partition(data: &Path, v_star: f64, test_fraction: f64, out: &Path) -> Result<PriceClassScheme> {
    check_v_star(v_star)?;
    let bundle = DatasetBundle::load_dir(data, true)?;
    let scheme = fit_scheme(&bundle, v_star, test_fraction)?;
    write_atomic(out, scheme.to_text().as_bytes())?;
    Ok(scheme)
}

pub fn build_features(bundle: &DatasetBundle, scheme: &PriceClassScheme) -> Result<FeatureMatrix> {
    let m = FeatureMatrix::build(bundle, &bundle.hours(), scheme)?;
    if m.is_empty() {
        return Err(Error::EmptyInput("no hour has complete feature inputs"));
    }
    Ok(m)
}

pub fn cmd_features(data: &Path, scheme_path: &Path, out: &Path) -> Result<FeatureMatrix> {
    let scheme = PriceClassScheme::load(scheme_path)?;
    let bundle = DatasetBundle::load_dir(data, true)?;
    let m = build_features(&bundle, &scheme)?;
    m.save(out, &scheme.training_hash)?;
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct GroupOutcome {
    pub name: String,
    pub table: Option<CvTable>,
    pub model: std::result::Result<TrainedModel, String>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub groups: Vec<GroupOutcome>,
}

impl TrainReport {
    pub fn failed_models(&self) -> Vec<String> {
        self.groups
            .iter()
            .filter(|g| g.model.is_err())
            .map(|g| g.name.clone())
            .collect()
    }

    pub fn trained(&self) -> Vec<(String, TrainedModel)> {
        self.groups
            .iter()
            .filter_map(|g| g.model.as_ref().ok().map(|m| (g.name.clone(), m.clone())))
            .collect()
    }

    pub fn cv_csv(&self) -> String {
        let tables: Vec<(String, CvTable)> = self
            .groups
            .iter()
            .filter_map(|g| g.table.clone().map(|t| (g.name.clone(), t)))
            .collect();
        cv_tables_csv(&tables)
    }
}

/// Grid search and final fit for every group on the training matrix.
pub fn train_groups(train: &FeatureMatrix, grid: &GridFile, seed: u64) -> Result<TrainReport> {
    let mut groups: Vec<GroupOutcome> = Vec::new();
    for g in &grid.groups {
        let base = match g.features {
            FeatureSubset::All => train.clone(),
            FeatureSubset::NoCurve => train.without_curve_features(),
        };
        let data = match (&g.select_top, &g.importance_from) {
            (Some(n), Some(src)) => {
                let source = groups.iter().find(|o| &o.name == src).and_then(|o| o.model.as_ref().ok());
                let Some(source) = source else {
                    groups.push(GroupOutcome {
                        name: g.name.clone(),
                        table: None,
                        model: Err(format!("importance source {src} has no trained model")),
                    });
                    continue;
                };
                let importance = rf_importance(source)?;
                let names = select_features(&importance, (*n).min(importance.ranking.len()))?;
                base.select(&names)?
            }
            _ => base,
        };
        let table = grid_search(&data, &g.candidates, grid.folds, seed, true)?;
        let model = match table.best() {
            Some(best) => models::fit(&best.config, &data.rows, &data.targets, &data.names, seed)
                .map_err(|e| e.to_string()),
            None => Err("every grid cell failed".to_string()),
        };
        if let Err(e) = &model {
            log::error!("group {}: final model failed: {e}", g.name);
        }
        groups.push(GroupOutcome {
            name: g.name.clone(),
            table: Some(table),
            model,
        });
    }
    Ok(TrainReport { groups })
}

pub fn cmd_train(
    features: &Path,
    grid: Option<&Path>,
    seed: u64,
    test_fraction: f64,
    out: &Path,
) -> Result<TrainReport> {
    let grid = GridFile::load(grid)?;
    let matrix = FeatureMatrix::load(features)?;
    let (train, _) = matrix.chronological_split(test_fraction)?;
    let report = train_groups(&train, &grid, seed)?;
    write_train_outputs(&report, out)?;
    Ok(report)
}

fn write_train_outputs(report: &TrainReport, out: &Path) -> Result<()> {
    write_atomic(&out.join(CV_TABLE_FILE), report.cv_csv().as_bytes())?;
    for (name, model) in report.trained() {
        model.save(&out.join(MODELS_DIR).join(format!("{name}.json")))?;
    }
    Ok(())
}

/// Price history for the naive benchmark, taken from the matrix targets.
pub fn history_of(matrix: &FeatureMatrix) -> PriceHistory {
    matrix.hours.iter().copied().zip(matrix.targets.iter().copied()).collect()
}

pub fn evaluate_models(
    matrix: &FeatureMatrix,
    models: &[(String, TrainedModel)],
    calendars: &Calendars,
    test_fraction: f64,
) -> Result<ComparisonTable> {
    let (train, test) = matrix.chronological_split(test_fraction)?;
    evaluate_suite(models, &train, &test, &history_of(matrix), calendars)
}

/// Loads every `*.json` model in `models_dir`, sorted by file name.
pub fn load_models(models_dir: &Path) -> Result<Vec<(String, TrainedModel)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(models_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, TrainedModel::load(p)?))
        })
        .collect()
}

pub fn cmd_evaluate(
    features: &Path,
    models_dir: &Path,
    calendars: &Calendars,
    test_fraction: f64,
    out: &Path,
) -> Result<ComparisonTable> {
    let matrix = FeatureMatrix::load(features)?;
    let models = load_models(models_dir)?;
    let table = evaluate_models(&matrix, &models, calendars, test_fraction)?;
    write_comparison(&table, out)?;
    Ok(table)
}

fn write_comparison(table: &ComparisonTable, out: &Path) -> Result<()> {
    write_atomic(&out.join(COMPARISON_FILE), table.to_csv().as_bytes())?;
    write_atomic(&out.join(COMPARISON_TEXT_FILE), table.render().as_bytes())
}

#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub scheme_classes: usize,
    pub n_rows: usize,
    pub train: TrainReport,
    pub comparison: ComparisonTable,
}

impl PipelineSummary {
    pub fn failed_models(&self) -> Vec<String> {
        self.train.failed_models()
    }
}

/// Runs every stage and writes all artifacts plus the manifest into
/// `manifest.out`. Inputs are validated before anything is written.
pub fn run_pipeline(manifest: &RunManifest) -> Result<PipelineSummary> {
    manifest.validate()?;
    let grid = GridFile::load(manifest.grid.as_deref())?;
    let spec = match (&manifest.data, &manifest.spec) {
        (None, Some(p)) => Some(SyntheticMarketSpec::load(p)?),
        (None, None) => Some(SyntheticMarketSpec::default()),
        (Some(_), _) => None,
    };
    let out = &manifest.out;
    with_workers(manifest.workers, || {
        let bundle = match (&manifest.data, spec) {
            (Some(dir), _) => DatasetBundle::load_dir(dir, true)?,
            (None, Some(mut spec)) => {
                spec.seed = manifest.seed;
                let bundle = generate_synthetic(&spec)?;
                bundle.save_dir(&out.join("data"))?;
                bundle
            }
            (None, None) => unreachable!("spec resolved above"),
        };
        let scheme = fit_scheme(&bundle, manifest.v_star, manifest.test_fraction)?;
        write_atomic(&out.join(SCHEME_FILE), scheme.to_text().as_bytes())?;
        let matrix = build_features(&bundle, &scheme)?;
        matrix.save(&out.join(FEATURES_FILE), &scheme.training_hash)?;

        let (train, _) = matrix.chronological_split(manifest.test_fraction)?;
        let report = train_groups(&train, &grid, manifest.seed)?;
        write_train_outputs(&report, out)?;
        let comparison = evaluate_models(&matrix, &report.trained(), &bundle.calendars, manifest.test_fraction)?;
        write_comparison(&comparison, out)?;
        write_atomic(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
        Ok(PipelineSummary {
            scheme_classes: scheme.n_classes(),
            n_rows: matrix.len(),
            train: report,
            comparison,
        })
    })?
}
