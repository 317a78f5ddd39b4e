//! Fits a random forest on synthetic feature rows and lists the features
//! it relies on most.

use chrono::NaiveDate;
use orderbook_forecast::cli::{build_features, fit_scheme};
use orderbook_forecast::models::forest::{select_features, ForestConfig};
use orderbook_forecast::models::{fit, rf_importance, ModelConfig};
use orderbook_forecast::{generate_synthetic, SyntheticMarketSpec};

fn main() -> orderbook_forecast::Result<()> {
    let spec = SyntheticMarketSpec {
        end_date: NaiveDate::from_ymd_opt(2016, 6, 30).unwrap(),
        ..Default::default()
    };
    let bundle = generate_synthetic(&spec)?;
    let scheme = fit_scheme(&bundle, 2000.0, 0.2)?;
    let matrix = build_features(&bundle, &scheme)?;
    let (train, _) = matrix.chronological_split(0.2)?;

    let config = ModelConfig::RandomForest(ForestConfig {
        n_trees: 100,
        feature_fraction: 0.25,
        min_node_fraction: 0.01,
    });
    let model = fit(&config, &train.rows, &train.targets, &train.names, 7)?;
    let importance = rf_importance(&model)?;

    println!("top 15 of {} features:", importance.ranking.len());
    for (rank, (name, w)) in importance.ranking.iter().take(15).enumerate() {
        println!("{:>3}. {name:<24} {w:.4}", rank + 1);
    }
    println!("selected: {:?}", select_features(&importance, 5)?);
    Ok(())
}
