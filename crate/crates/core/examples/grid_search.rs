//! Cross-validated grid search on data generated by a known linear rule.

use chrono::{Duration, NaiveDate};
use orderbook_forecast::eval::grid_search;
use orderbook_forecast::models::forest::ForestConfig;
use orderbook_forecast::models::mlp::{Activation, MlpConfig, Optimizer};
use orderbook_forecast::models::ModelConfig;
use orderbook_forecast::{AuctionHour, FeatureMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> orderbook_forecast::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let n = 600;
    let hours: Vec<_> = (0..n)
        .map(|i| AuctionHour::new(start + Duration::days(i / 24), (i % 24) as u8).unwrap())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let targets = rows
        .iter()
        .map(|r| 2.0 * r[0] - r[1] + 0.5 * r[2] + 0.05 * rng.random_range(-1.0..1.0))
        .collect();
    let names = (1..=4).map(|i| format!("x{i}")).collect();
    let data = FeatureMatrix::new(names, hours, rows, targets)?;

    let grid = vec![
        ModelConfig::RandomForest(ForestConfig {
            n_trees: 50,
            feature_fraction: 0.5,
            min_node_fraction: 0.01,
        }),
        ModelConfig::Ols,
        ModelConfig::Mlp(MlpConfig {
            layer_sizes: vec![8],
            activation: Activation::Tanh,
            optimizer: Optimizer::Adam,
            epochs: 20,
            batch_size: 32,
            dropout: vec![],
            batch_norm: false,
            learning_rate: None,
            seed: None,
        }),
    ];
    let table = grid_search(&data, &grid, 5, 11, true)?;
    print!("{}", table.to_csv());
    let best = table.best().expect("at least one cell succeeded");
    println!("winner: {}", best.config);
    Ok(())
}
