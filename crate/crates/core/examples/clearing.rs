//! Clears a small hand-written auction and prints both step curves.

use chrono::NaiveDate;
use orderbook_forecast::{build_demand_curve, build_supply_curve, clear_auction, AuctionHour, OrderBook};

fn main() -> orderbook_forecast::Result<()> {
    let t = AuctionHour::new(NaiveDate::from_ymd_opt(2017, 11, 6).unwrap(), 18)?;
    let book = OrderBook::from_levels(
        t,
        &[(-5.0, 12_000.0), (8.0, 6_000.0), (31.5, 9_000.0), (48.2, 7_500.0), (120.0, 4_000.0)],
        &[(3000.0, 30_000.0), (400.0, 1_200.0), (45.0, 800.0)],
    )?;

    let supply = build_supply_curve(&book);
    let demand = build_demand_curve(&book);
    println!("supply steps:");
    for (p, v) in supply.points() {
        println!("  S({p:>7}) = {v:>8.1}");
    }
    println!("demand steps:");
    for (p, v) in demand.points() {
        println!("  D({p:>7}) = {v:>8.1}");
    }

    let result = clear_auction(&supply, &demand)?;
    println!("market clearing price {} EUR/MWh, volume {} MWh", result.price, result.volume);
    Ok(())
}
