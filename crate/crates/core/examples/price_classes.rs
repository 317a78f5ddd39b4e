//! Fits price-class schemes at several volume targets on a year of
//! synthetic books and reports how far the class-implied price drifts from
//! the exact clearing price.

use chrono::NaiveDate;
use orderbook_forecast::partition::approximation_report;
use orderbook_forecast::{generate_synthetic, PriceClassScheme, SyntheticMarketSpec};

fn main() -> orderbook_forecast::Result<()> {
    let spec = SyntheticMarketSpec {
        end_date: NaiveDate::from_ymd_opt(2016, 12, 31).unwrap(),
        ..Default::default()
    };
    let bundle = generate_synthetic(&spec)?;
    let books: Vec<_> = bundle.books.values().cloned().collect();
    println!("{} books", books.len());

    println!("{:>8} {:>8} {:>10} {:>10}", "V*", "classes", "MAE", "MdAPE");
    for v_star in [4000.0, 2000.0, 1000.0, 500.0, 250.0] {
        let scheme = PriceClassScheme::fit(&books, v_star)?;
        let r = approximation_report(&books, &scheme)?;
        println!(
            "{v_star:>8} {:>8} {:>10.4} {:>10.5}",
            scheme.n_classes(),
            r.mean_abs_error,
            r.mdape
        );
    }
    let exact = PriceClassScheme::tick_resolution(&books)?;
    let r = approximation_report(&books, &exact)?;
    println!("{:>8} {:>8} {:>10.4} {:>10.5}", "ticks", exact.n_classes(), r.mean_abs_error, r.mdape);

    let scheme = PriceClassScheme::fit(&books, 2000.0)?;
    let shown: Vec<String> = scheme.merged_bounds().iter().take(12).map(|p| p.to_string()).collect();
    println!("first merged boundaries at V*=2000: {}", shown.join(" "));
    Ok(())
}
