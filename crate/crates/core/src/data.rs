//! CSV loaders and writers for order books, fundamentals and calendars, the
//! dataset bundle, and the synthetic market generator.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Calendars, DayType, FundamentalForecasts, MarketStore};
use crate::io_util::write_atomic;
use crate::market::{AuctionHour, OrderBook, PriceTick, Side};

pub const BOOKS_FILE: &str = "books.csv";
pub const FUNDAMENTALS_FILE: &str = "fundamentals.csv";
pub const CALENDARS_FILE: &str = "calendars.csv";

type Books = BTreeMap<AuctionHour, OrderBook>;
type Fundamentals = BTreeMap<AuctionHour, FundamentalForecasts>;

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str], origin: &str) -> Result<bool> {
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok(false);
    }
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::MalformedFile {
            path: origin.into(),
            message: format!("expected header {}", expected.join(",")),
        });
    }
    Ok(true)
}

struct RowCtx<'a> {
    origin: &'a str,
    line: u64,
}

impl RowCtx<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::MalformedRow {
            path: self.origin.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn hour(&self, date: &str, hour: &str) -> Result<AuctionHour> {
        let d = NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .map_err(|e| self.err(format!("bad date {date:?}: {e}")))?;
        let h: u8 = hour
            .parse()
            .map_err(|e| self.err(format!("bad hour {hour:?}: {e}")))?;
        AuctionHour::new(d, h).map_err(|e| self.err(e.to_string()))
    }

    fn number(&self, field: &str, what: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(format!("bad {what} {field:?}")))
    }
}

/// Parses order-book CSV text. Off-grid prices are rejected when `strict`
/// and snapped to the nearest tick otherwise.
pub fn parse_books(text: &str, origin: &str, strict: bool) -> Result<Books> {
    let mut rdr = reader(text);
    let mut books = Books::new();
    if !check_header(&mut rdr, &["date", "hour", "side", "price", "volume_mwh"], origin)? {
        return Ok(books);
    }
    for record in rdr.records() {
        let record = record?;
        let ctx = RowCtx {
            origin,
            line: record.position().map_or(0, |p| p.line()),
        };
        if record.len() != 5 {
            return Err(ctx.err(format!("expected 5 fields, got {}", record.len())));
        }
        let t = ctx.hour(&record[0], &record[1])?;
        let side = match &record[2] {
            "S" => Side::Supply,
            "D" => Side::Demand,
            other => return Err(ctx.err(format!("side must be S or D, got {other:?}"))),
        };
        let eur = ctx.number(&record[3], "price")?;
        let price = if strict {
            PriceTick::from_eur(eur)
        } else {
            PriceTick::snap_eur(eur)
        }
        .map_err(|e| ctx.err(e.to_string()))?;
        let volume = ctx.number(&record[4], "volume")?;
        books
            .entry(t)
            .or_insert_with(|| OrderBook::new(t))
            .add(side, price, volume)
            .map_err(|e| ctx.err(e.to_string()))?;
    }
    Ok(books)
}

pub fn load_books(path: &Path, strict: bool) -> Result<Books> {
    parse_books(&std::fs::read_to_string(path)?, &path.display().to_string(), strict)
}

pub fn books_to_csv<'a>(books: impl IntoIterator<Item = &'a OrderBook>) -> String {
    let mut out = String::from("date,hour,side,price,volume_mwh\n");
    for book in books {
        for side in [Side::Supply, Side::Demand] {
            for (p, v) in book.levels(side) {
                writeln!(out, "{},{},{},{},{}", book.hour.date, book.hour.hour(), side.code(), p, v).unwrap();
            }
        }
    }
    out
}

pub fn parse_fundamentals(text: &str, origin: &str) -> Result<Fundamentals> {
    let mut rdr = reader(text);
    let mut out = Fundamentals::new();
    let header = ["date", "hour", "solar_mwh", "wind_mwh", "demand_mwh"];
    if !check_header(&mut rdr, &header, origin)? {
        return Ok(out);
    }
    for record in rdr.records() {
        let record = record?;
        let ctx = RowCtx {
            origin,
            line: record.position().map_or(0, |p| p.line()),
        };
        if record.len() != 5 {
            return Err(ctx.err(format!("expected 5 fields, got {}", record.len())));
        }
        let t = ctx.hour(&record[0], &record[1])?;
        let f = FundamentalForecasts::new(
            ctx.number(&record[2], "solar_mwh")?,
            ctx.number(&record[3], "wind_mwh")?,
            ctx.number(&record[4], "demand_mwh")?,
        )
        .map_err(|e| ctx.err(e.to_string()))?;
        if out.insert(t, f).is_some() {
            return Err(ctx.err(format!("duplicate fundamentals for {t}")));
        }
    }
    Ok(out)
}

pub fn load_fundamentals(path: &Path) -> Result<Fundamentals> {
    parse_fundamentals(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn fundamentals_to_csv(f: &Fundamentals) -> String {
    let mut out = String::from("date,hour,solar_mwh,wind_mwh,demand_mwh\n");
    for (t, v) in f {
        writeln!(out, "{},{},{},{},{}", t.date, t.hour(), v.solar_mwh, v.wind_mwh, v.demand_mwh).unwrap();
    }
    out
}

/// Calendar file rows: `date,kind` with kind `holiday` or `bridge`.
pub fn parse_calendars(text: &str, origin: &str) -> Result<Calendars> {
    let mut rdr = reader(text);
    let mut cal = Calendars::default();
    if !check_header(&mut rdr, &["date", "kind"], origin)? {
        return Ok(cal);
    }
    for record in rdr.records() {
        let record = record?;
        let ctx = RowCtx {
            origin,
            line: record.position().map_or(0, |p| p.line()),
        };
        if record.len() != 2 {
            return Err(ctx.err(format!("expected 2 fields, got {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| ctx.err(format!("bad date {:?}: {e}", &record[0])))?;
        match &record[1] {
            "holiday" => cal.holidays.insert(date),
            "bridge" => cal.bridge_days.insert(date),
            other => return Err(ctx.err(format!("kind must be holiday or bridge, got {other:?}"))),
        };
    }
    Ok(cal)
}

pub fn load_calendars(path: &Path) -> Result<Calendars> {
    parse_calendars(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn calendars_to_csv(cal: &Calendars) -> String {
    let mut out = String::from("date,kind\n");
    for d in &cal.holidays {
        writeln!(out, "{d},holiday").unwrap();
    }
    for d in &cal.bridge_days {
        writeln!(out, "{d},bridge").unwrap();
    }
    out
}

/// Order books, fundamentals and calendars of one market.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetBundle {
    pub books: Books,
    pub fundamentals: Fundamentals,
    pub calendars: Calendars,
}

impl MarketStore for DatasetBundle {
    fn book(&self, t: &AuctionHour) -> Option<&OrderBook> {
        self.books.get(t)
    }

    fn fundamentals(&self, t: &AuctionHour) -> Option<&FundamentalForecasts> {
        self.fundamentals.get(t)
    }

    fn calendars(&self) -> &Calendars {
        &self.calendars
    }
}

impl DatasetBundle {
    /// Every book hour must have fundamentals.
    pub fn validate(&self) -> Result<()> {
        match self.books.keys().find(|t| !self.fundamentals.contains_key(t)) {
            Some(t) => Err(Error::MissingData(format!("fundamentals for {t}"))),
            None => Ok(()),
        }
    }

    /// Book hours in chronological order.
    pub fn hours(&self) -> Vec<AuctionHour> {
        self.books.keys().copied().collect()
    }

    pub fn books_in(&self, hours: &[AuctionHour]) -> Vec<OrderBook> {
        hours.iter().filter_map(|t| self.books.get(t).cloned()).collect()
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(BOOKS_FILE), books_to_csv(self.books.values()).as_bytes())?;
        write_atomic(
            &dir.join(FUNDAMENTALS_FILE),
            fundamentals_to_csv(&self.fundamentals).as_bytes(),
        )?;
        write_atomic(&dir.join(CALENDARS_FILE), calendars_to_csv(&self.calendars).as_bytes())
    }

    /// Loads the three files of a data directory and validates the bundle.
    /// A missing calendar file means no holidays.
    pub fn load_dir(dir: &Path, strict: bool) -> Result<Self> {
        let cal_path = dir.join(CALENDARS_FILE);
        let bundle = DatasetBundle {
            books: load_books(&dir.join(BOOKS_FILE), strict)?,
            fundamentals: load_fundamentals(&dir.join(FUNDAMENTALS_FILE))?,
            calendars: if cal_path.exists() {
                load_calendars(&cal_path)?
            } else {
                Calendars::default()
            },
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// A conventional generation technology in the merit order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Technology {
    pub name: String,
    pub capacity_mwh: f64,
    pub marginal_cost: f64,
    /// Width of the cost band the capacity is spread over.
    #[serde(default)]
    pub cost_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMarketSpec {
    pub start_date: NaiveDate,
    /// Inclusive.
    pub end_date: NaiveDate,
    pub technologies: Vec<Technology>,
    /// Sub-blocks each technology is split into.
    pub blocks_per_technology: usize,
    /// Lower bound of the per-hour availability factor of each block.
    pub availability_min: f64,
    /// Daily log-volatility of the common fuel-cost factor.
    pub fuel_volatility: f64,
    pub solar_peak_mwh: f64,
    pub wind_mean_mwh: f64,
    /// Relative winter/summer swing of mean wind infeed.
    pub wind_seasonal_amplitude: f64,
    /// Stationary log-scale of wind infeed.
    pub wind_volatility: f64,
    /// Hour-to-hour AR(1) coefficient of log wind infeed.
    pub wind_persistence: f64,
    pub base_demand_mwh: f64,
    /// Relative day/night swing of demand.
    pub demand_daily_amplitude: f64,
    /// Relative winter/summer swing of demand.
    pub demand_seasonal_amplitude: f64,
    pub saturday_factor: f64,
    pub sunday_factor: f64,
    pub demand_noise: f64,
    /// Share of demand bid price-elastically at `elastic_demand_prices`.
    pub elastic_demand_share: f64,
    pub elastic_demand_prices: Vec<f64>,
    pub inelastic_bid_price: f64,
    pub renewable_bid_price: f64,
    /// Sigma of the lognormal error between realized and forecast fundamentals.
    pub forecast_noise: f64,
    /// Volumes are rounded to multiples of this.
    pub volume_quantum: f64,
    pub seed: u64,
}

impl Default for SyntheticMarketSpec {
    fn default() -> Self {
        let tech = |name: &str, capacity_mwh, marginal_cost, cost_spread| Technology {
            name: name.into(),
            capacity_mwh,
            marginal_cost,
            cost_spread,
        };
        SyntheticMarketSpec {
            start_date: NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2017, 12, 31).expect("valid date"),
            technologies: vec![
                tech("nuclear", 8_000.0, 8.0, 4.0),
                tech("lignite", 15_000.0, 22.0, 10.0),
                tech("hard_coal", 14_000.0, 36.0, 14.0),
                tech("gas_ccgt", 10_000.0, 52.0, 16.0),
                tech("gas_ocgt", 5_000.0, 85.0, 30.0),
                tech("oil", 4_000.0, 140.0, 40.0),
            ],
            blocks_per_technology: 8,
            availability_min: 0.9,
            fuel_volatility: 0.02,
            solar_peak_mwh: 14_000.0,
            wind_mean_mwh: 9_000.0,
            wind_seasonal_amplitude: 0.35,
            wind_volatility: 0.6,
            wind_persistence: 0.97,
            base_demand_mwh: 35_000.0,
            demand_daily_amplitude: 0.18,
            demand_seasonal_amplitude: 0.08,
            saturday_factor: 0.88,
            sunday_factor: 0.8,
            demand_noise: 0.02,
            elastic_demand_share: 0.05,
            elastic_demand_prices: vec![300.0, 500.0, 1000.0, 2000.0, 2500.0],
            inelastic_bid_price: 3000.0,
            renewable_bid_price: -5.0,
            forecast_noise: 0.05,
            volume_quantum: 0.25,
            seed: 42,
        }
    }
}

impl SyntheticMarketSpec {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::MalformedFile {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.end_date < self.start_date {
            return bad("synthetic date range is empty".into());
        }
        if self.technologies.is_empty() {
            return bad("at least one technology is required".into());
        }
        for t in &self.technologies {
            if !(t.capacity_mwh > 0.0 && t.capacity_mwh.is_finite()) {
                return bad(format!("capacity of {} must be > 0", t.name));
            }
            if !(t.cost_spread >= 0.0) {
                return bad(format!("cost spread of {} must be >= 0", t.name));
            }
            PriceTick::snap_eur(t.marginal_cost)?;
        }
        if !(-500.0..=0.0).contains(&self.renewable_bid_price) {
            return bad(format!(
                "renewable bid price must lie in [-500, 0], got {}",
                self.renewable_bid_price
            ));
        }
        PriceTick::from_eur(self.inelastic_bid_price)?;
        for p in &self.elastic_demand_prices {
            PriceTick::from_eur(*p)?;
        }
        let non_negative = [
            ("solar_peak_mwh", self.solar_peak_mwh),
            ("wind_mean_mwh", self.wind_mean_mwh),
            ("wind_volatility", self.wind_volatility),
            ("fuel_volatility", self.fuel_volatility),
            ("demand_noise", self.demand_noise),
            ("forecast_noise", self.forecast_noise),
        ];
        if let Some((name, v)) = non_negative.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return bad(format!("{name} must be finite and >= 0, got {v}"));
        }
        if !(self.base_demand_mwh > 0.0) {
            return bad("base_demand_mwh must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.elastic_demand_share)
            || (self.elastic_demand_share > 0.0 && self.elastic_demand_prices.is_empty())
        {
            return bad("elastic_demand_share must lie in [0, 1) with at least one price".into());
        }
        if !(0.0..=1.0).contains(&self.availability_min) || !(0.0..1.0).contains(&self.wind_persistence) {
            return bad("availability_min must lie in [0, 1] and wind_persistence in [0, 1)".into());
        }
        if self.blocks_per_technology == 0 || !(self.volume_quantum > 0.0) {
            return bad("blocks_per_technology and volume_quantum must be positive".into());
        }
        Ok(())
    }

    fn quantize(&self, v: f64) -> f64 {
        (v.max(0.0) / self.volume_quantum).round() * self.volume_quantum
    }
}

/// Realized drivers of one synthetic auction hour.
#[derive(Clone, Debug, PartialEq)]
pub struct HourInputs {
    pub solar_mwh: f64,
    pub wind_mwh: f64,
    pub demand_mwh: f64,
    pub fuel_factor: f64,
    /// One availability factor per technology sub-block.
    pub availability: Vec<f64>,
}

/// Order book implied by the merit order for one hour.
pub fn synthetic_book(spec: &SyntheticMarketSpec, t: AuctionHour, inputs: &HourInputs) -> Result<OrderBook> {
    let mut book = OrderBook::new(t);
    let nb = spec.blocks_per_technology;
    for (ti, tech) in spec.technologies.iter().enumerate() {
        for b in 0..nb {
            let offset = if nb > 1 {
                tech.cost_spread * (b as f64 / (nb - 1) as f64 - 0.5)
            } else {
                0.0
            };
            let cost = (tech.marginal_cost + offset) * inputs.fuel_factor;
            let avail = inputs.availability.get(ti * nb + b).copied().unwrap_or(1.0);
            let volume = spec.quantize(tech.capacity_mwh / nb as f64 * avail);
            book.add(Side::Supply, PriceTick::snap_eur(cost)?, volume)?;
        }
    }
    let renewables = spec.quantize(inputs.solar_mwh + inputs.wind_mwh);
    book.add(Side::Supply, PriceTick::snap_eur(spec.renewable_bid_price)?, renewables)?;

    let elastic = inputs.demand_mwh * spec.elastic_demand_share;
    let inelastic = spec.quantize(inputs.demand_mwh - elastic);
    book.add(Side::Demand, PriceTick::from_eur(spec.inelastic_bid_price)?, inelastic)?;
    if !spec.elastic_demand_prices.is_empty() {
        let per_level = spec.quantize(elastic / spec.elastic_demand_prices.len() as f64);
        for p in &spec.elastic_demand_prices {
            book.add(Side::Demand, PriceTick::from_eur(*p)?, per_level)?;
        }
    }
    Ok(book)
}

fn day_of_year_angle(date: NaiveDate) -> f64 {
    2.0 * PI * (date.ordinal0() as f64) / 365.25
}

fn lognormal_factor(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

/// Deterministic synthetic market: merit-order books driven by seasonal
/// demand, daylight solar and persistent wind, with noisy forecasts stored as
/// fundamentals.
pub fn generate_synthetic(spec: &SyntheticMarketSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let years = spec.start_date.year()..=spec.end_date.year() + 1;
    let calendars = Calendars::german_default(years);
    let n_blocks = spec.technologies.len() * spec.blocks_per_technology;

    // Sequential state (wind path, fuel factor) uses stream 0; each hour
    // draws everything else from its own stream.
    let mut path_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut wind_log = 0.0f64;
    let mut fuel_log = 0.0f64;
    let innovation = spec.wind_volatility * (1.0 - spec.wind_persistence.powi(2)).sqrt();

    let mut bundle = DatasetBundle {
        calendars,
        ..DatasetBundle::default()
    };
    let mut date = spec.start_date;
    let mut hour_index = 0u64;
    while date <= spec.end_date {
        let z: f64 = StandardNormal.sample(&mut path_rng);
        fuel_log += spec.fuel_volatility * z;
        fuel_log *= 0.98;
        let fuel_factor = fuel_log.exp();
        let angle = day_of_year_angle(date);
        let cloudiness: f64 = path_rng.random_range(0.35..1.0);
        let day_factor = match bundle.calendars.day_type(date) {
            DayType::Workday => 1.0,
            DayType::SaturdayOrBridge => spec.saturday_factor,
            DayType::SundayOrHoliday => spec.sunday_factor,
        };
        for h in 0..24u8 {
            let t = AuctionHour::new(date, h)?;
            hour_index += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(hour_index);

            let zw: f64 = StandardNormal.sample(&mut path_rng);
            wind_log = spec.wind_persistence * wind_log + innovation * zw;
            let wind_season = 1.0 + spec.wind_seasonal_amplitude * angle.cos();
            let wind = spec.wind_mean_mwh
                * wind_season
                * (wind_log - 0.5 * spec.wind_volatility * spec.wind_volatility).exp();

            let season_solar = 0.55 - 0.45 * angle.cos();
            let daylight = 6.0 + 2.0 * (0.5 - 0.5 * angle.cos());
            let x = (h as f64 + 0.5 - 12.0) / daylight;
            let solar = if x.abs() < 1.0 {
                spec.solar_peak_mwh * season_solar * cloudiness * (PI * x / 2.0).cos()
            } else {
                0.0
            };

            let daily = -(2.0 * PI * (h as f64 - 3.0) / 24.0).cos();
            let demand = spec.base_demand_mwh
                * (1.0 + spec.demand_daily_amplitude * daily)
                * (1.0 + spec.demand_seasonal_amplitude * angle.cos())
                * day_factor
                * lognormal_factor(&mut rng, spec.demand_noise);

            let availability: Vec<f64> = (0..n_blocks)
                .map(|_| {
                    if spec.availability_min < 1.0 {
                        rng.random_range(spec.availability_min..=1.0)
                    } else {
                        1.0
                    }
                })
                .collect();
            let inputs = HourInputs {
                solar_mwh: spec.quantize(solar),
                wind_mwh: spec.quantize(wind),
                demand_mwh: spec.quantize(demand),
                fuel_factor,
                availability,
            };
            let book = synthetic_book(spec, t, &inputs)?;
            let forecast = FundamentalForecasts::new(
                spec.quantize(inputs.solar_mwh * lognormal_factor(&mut rng, spec.forecast_noise)),
                spec.quantize(inputs.wind_mwh * lognormal_factor(&mut rng, spec.forecast_noise)),
                spec.quantize(inputs.demand_mwh * lognormal_factor(&mut rng, spec.forecast_noise)),
            )?;
            bundle.books.insert(t, book);
            bundle.fundamentals.insert(t, forecast);
        }
        date += Duration::days(1);
    }
    Ok(bundle)
}
