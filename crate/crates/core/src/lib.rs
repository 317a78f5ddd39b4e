//! Day-ahead electricity price forecasting from auction order books.
//!
//! The crate clears hourly auctions on the 0.1 EUR/MWh grid, compresses
//! order books into price-class volume profiles, assembles feature vectors
//! from a same-type reference day, and fits linear, random forest and
//! feed-forward network forecasters under chronological cross-validation.

pub mod cli;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod io_util;
pub mod market;
pub mod models;
pub mod partition;

pub use data::{generate_synthetic, DatasetBundle, SyntheticMarketSpec};
pub use dataset::FeatureMatrix;
pub use error::{Error, Result};
pub use eval::{compute_metrics, naive_forecast, MetricReport};
pub use features::{assemble_features, Calendars, DayType, FeatureVector, FundamentalForecasts, MarketStore};
pub use market::{build_demand_curve, build_supply_curve, clear_auction, clear_book, AuctionHour, OrderBook, PriceTick, Side, StepCurve};
pub use models::{ModelConfig, TrainedModel};
pub use partition::PriceClassScheme;
