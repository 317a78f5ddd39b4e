//! Trains the four published network configurations on a short synthetic
//! sample and checks that a saved model reloads to identical predictions.

use chrono::NaiveDate;
use orderbook_forecast::cli::{build_features, fit_scheme, GridFile, PUBLISHED_GRID};
use orderbook_forecast::models::forest::{select_features, ForestConfig};
use orderbook_forecast::models::{fit, rf_importance, ModelConfig};
use orderbook_forecast::{generate_synthetic, SyntheticMarketSpec, TrainedModel};
use std::path::Path;

fn main() -> orderbook_forecast::Result<()> {
    let spec = SyntheticMarketSpec {
        end_date: NaiveDate::from_ymd_opt(2016, 2, 29).unwrap(),
        ..Default::default()
    };
    let bundle = generate_synthetic(&spec)?;
    let scheme = fit_scheme(&bundle, 2000.0, 0.2)?;
    let matrix = build_features(&bundle, &scheme)?;
    let no_curve = matrix.without_curve_features();
    let forest = ModelConfig::RandomForest(ForestConfig {
        n_trees: 50,
        feature_fraction: 0.25,
        min_node_fraction: 0.01,
    });
    let importance = rf_importance(&fit(&forest, &matrix.rows, &matrix.targets, &matrix.names, 1)?)?;

    let grid = GridFile::parse(PUBLISHED_GRID, Path::new("published.json"))?;
    for group in grid.groups.iter().filter(|g| g.name.starts_with("mlp")) {
        let data = match group.select_top {
            Some(n) => matrix.select(&select_features(&importance, n)?)?,
            None if group.name.contains("without_curve") => no_curve.clone(),
            None => matrix.clone(),
        };
        for cfg in &group.candidates {
            let mut cfg = cfg.clone();
            if let ModelConfig::Mlp(m) = &mut cfg {
                m.epochs = 5;
            }
            let model = fit(&cfg, &data.rows, &data.targets, &data.names, 1)?;
            let json = model.to_json()?;
            let back = TrainedModel::from_json(&json)?;
            let a = model.predict(&data.rows[..24])?;
            let b = back.predict(&data.rows[..24])?;
            let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
            println!(
                "{:<16} {cfg}\n{:<16} train rmse {:.3}, {} bytes, round-trip identical: {same}",
                group.name,
                "",
                model.meta.train_rmse,
                json.len()
            );
        }
    }
    Ok(())
}
