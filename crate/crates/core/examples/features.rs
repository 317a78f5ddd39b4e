//! Assembles the feature vector of one auction hour and shows where its
//! reference hour comes from.

use chrono::NaiveDate;
use orderbook_forecast::features::{feature_names, reference_hour, target_price};
use orderbook_forecast::{assemble_features, generate_synthetic, AuctionHour, MarketStore, PriceClassScheme, SyntheticMarketSpec};

fn main() -> orderbook_forecast::Result<()> {
    let spec = SyntheticMarketSpec {
        end_date: NaiveDate::from_ymd_opt(2016, 3, 31).unwrap(),
        ..Default::default()
    };
    let bundle = generate_synthetic(&spec)?;
    let books: Vec<_> = bundle.books.values().cloned().collect();
    let scheme = PriceClassScheme::fit(&books, 4000.0)?;

    // Easter Monday 2016, a holiday: its reference is the previous Sunday.
    for (y, m, d, h) in [(2016, 3, 28, 12), (2016, 3, 29, 8), (2016, 3, 21, 20)] {
        let t = AuctionHour::new(NaiveDate::from_ymd_opt(y, m, d).unwrap(), h)?;
        let r = reference_hour(t, &bundle)?;
        println!(
            "{t} ({:?}) -> reference {r} ({:?})",
            bundle.calendars().day_type(t.date),
            bundle.calendars().day_type(r.date)
        );
    }

    let t = AuctionHour::new(NaiveDate::from_ymd_opt(2016, 3, 29).unwrap(), 8)?;
    let fv = assemble_features(t, &bundle, &scheme)?;
    let names = feature_names(&scheme);
    println!("\n{} features for {t}:", names.len());
    for (name, value) in names.iter().zip(fv.values()) {
        println!("  {name:<24} {value:>12.4}");
    }
    println!("target (class-implied price): {}", target_price(t, &bundle, &scheme)?);
    Ok(())
}
