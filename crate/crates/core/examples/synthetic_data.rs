//! Generates a synthetic market, writes it to disk, reads it back and shows
//! how wind infeed pushes prices down.

use orderbook_forecast::{clear_book, generate_synthetic, DatasetBundle, MarketStore, SyntheticMarketSpec};

fn main() -> orderbook_forecast::Result<()> {
    let spec = SyntheticMarketSpec::default();
    let bundle = generate_synthetic(&spec)?;
    let dir = tempfile::tempdir()?;
    bundle.save_dir(dir.path())?;
    let loaded = DatasetBundle::load_dir(dir.path(), true)?;
    println!("{} hours written and reloaded, identical: {}", loaded.books.len(), loaded == bundle);

    // Mean price by wind quintile at 12:00.
    let mut pairs: Vec<(f64, f64)> = bundle
        .hours()
        .into_iter()
        .filter(|t| t.hour() == 12)
        .map(|t| {
            let wind = bundle.fundamentals(&t).unwrap().wind_mwh;
            (wind, clear_book(bundle.book(&t).unwrap()).unwrap().price.eur())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let q = pairs.len() / 5;
    for (i, chunk) in pairs.chunks(q).take(5).enumerate() {
        let wind = chunk.iter().map(|p| p.0).sum::<f64>() / chunk.len() as f64;
        let price = chunk.iter().map(|p| p.1).sum::<f64>() / chunk.len() as f64;
        println!("wind quintile {}: mean wind {wind:>8.0} MWh, mean price {price:>6.2} EUR/MWh", i + 1);
    }
    Ok(())
}
