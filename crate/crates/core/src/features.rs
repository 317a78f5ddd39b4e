//! Calendar handling, reference dates and assembly of the forecasting
//! feature vector.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{AuctionHour, OrderBook, PriceTick};
use crate::partition::{aggregate_price_curve, clear_from_price_curve, PriceClassScheme};

/// Version tag of the feature layout written into feature files.
pub const FEATURE_SET_VERSION: &str = "v1";

/// How far back a reference date may lie.
pub const REFERENCE_HORIZON_DAYS: u32 = 365;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DayType {
    Workday,
    SaturdayOrBridge,
    SundayOrHoliday,
}

/// Holiday and bridge-day sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendars {
    pub holidays: BTreeSet<NaiveDate>,
    pub bridge_days: BTreeSet<NaiveDate>,
}

impl Calendars {
    pub fn day_type(&self, date: NaiveDate) -> DayType {
        classify_day(date, &self.holidays, &self.bridge_days)
    }

    /// Nationwide German public holidays for the given years, with Fridays
    /// after a Thursday holiday and Mondays before a Tuesday holiday marked
    /// as bridge days.
    pub fn german_default(years: impl IntoIterator<Item = i32>) -> Self {
        let mut cal = Calendars::default();
        for year in years {
            let ymd = |m, d| NaiveDate::from_ymd_opt(year, m, d).expect("valid date");
            let easter = easter_sunday(year);
            cal.holidays.extend([
                ymd(1, 1),
                easter - Duration::days(2),
                easter + Duration::days(1),
                ymd(5, 1),
                easter + Duration::days(39),
                easter + Duration::days(50),
                ymd(10, 3),
                ymd(12, 25),
                ymd(12, 26),
            ]);
        }
        let bridges: Vec<_> = cal
            .holidays
            .iter()
            .filter_map(|&h| match h.weekday() {
                Weekday::Thu => Some(h + Duration::days(1)),
                Weekday::Tue => Some(h - Duration::days(1)),
                _ => None,
            })
            .filter(|d| !cal.holidays.contains(d))
            .collect();
        cal.bridge_days.extend(bridges);
        cal
    }
}

/// Gregorian Easter Sunday (anonymous Gregorian algorithm).
pub fn easter_sunday(year: i32) -> NaiveDate {
    let a = year % 19;
    let b = year / 100;
    let c = year % 100;
    let d = b / 4;
    let e = b % 4;
    let f = (b + 8) / 25;
    let g = (b - f + 1) / 3;
    let h = (19 * a + b - d - g + 15) % 30;
    let i = c / 4;
    let k = c % 4;
    let l = (32 + 2 * e + 2 * i - h - k) % 7;
    let m = (a + 11 * h + 22 * l) / 451;
    let month = (h + l - 7 * m + 114) / 31;
    let day = (h + l - 7 * m + 114) % 31 + 1;
    NaiveDate::from_ymd_opt(year, month as u32, day as u32).expect("valid Easter date")
}

/// Projects a periodic value onto the unit circle as (sin, cos).
pub fn encode_cyclic(value: i64, period: i64) -> (f64, f64) {
    let angle = 2.0 * PI * value as f64 / period as f64;
    (angle.sin(), angle.cos())
}

pub fn classify_day(
    date: NaiveDate,
    holidays: &BTreeSet<NaiveDate>,
    bridge_days: &BTreeSet<NaiveDate>,
) -> DayType {
    let weekday = date.weekday();
    if weekday == Weekday::Sun || holidays.contains(&date) {
        DayType::SundayOrHoliday
    } else if weekday == Weekday::Sat || bridge_days.contains(&date) {
        DayType::SaturdayOrBridge
    } else {
        DayType::Workday
    }
}

/// Nearest earlier date with the same day type as `date`.
pub fn reference_date(date: NaiveDate, calendars: &Calendars) -> Result<NaiveDate> {
    reference_date_where(date, calendars, |_| true)
}

/// Like [`reference_date`] but skips candidates rejected by `available`.
pub fn reference_date_where(
    date: NaiveDate,
    calendars: &Calendars,
    available: impl Fn(NaiveDate) -> bool,
) -> Result<NaiveDate> {
    let target = calendars.day_type(date);
    (1..=REFERENCE_HORIZON_DAYS as i64)
        .map(|back| date - Duration::days(back))
        .find(|&d| calendars.day_type(d) == target && available(d))
        .ok_or(Error::NoReference {
            date,
            horizon: REFERENCE_HORIZON_DAYS,
        })
}

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let first_next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid date");
    let last = first_next - Duration::days(1);
    last - Duration::days(last.weekday().num_days_from_sunday() as i64)
}

/// Central European summer time: last Sunday of March up to (excluding) the
/// last Sunday of October.
pub fn is_dst(date: NaiveDate) -> bool {
    let year = date.year();
    date >= last_sunday(year, 3) && date < last_sunday(year, 10)
}

/// Calendar features of one auction hour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalendarInfo {
    pub year: f64,
    pub dst: f64,
    pub day_type: DayType,
    pub month_x: f64,
    pub month_y: f64,
    pub hour_x: f64,
    pub hour_y: f64,
}

impl CalendarInfo {
    pub const NAMES: [&'static str; 9] = [
        "year",
        "dst",
        "day_workday",
        "day_saturday_bridge",
        "day_sunday_holiday",
        "month_x",
        "month_y",
        "hour_x",
        "hour_y",
    ];

    pub fn new(t: AuctionHour, calendars: &Calendars) -> Self {
        let (month_x, month_y) = encode_cyclic(t.month() as i64, 12);
        let (hour_x, hour_y) = encode_cyclic(t.hour() as i64, 24);
        CalendarInfo {
            year: t.date.year() as f64,
            dst: if is_dst(t.date) { 1.0 } else { 0.0 },
            day_type: calendars.day_type(t.date),
            month_x,
            month_y,
            hour_x,
            hour_y,
        }
    }

    pub fn values(&self) -> [f64; 9] {
        let one_hot = |d: DayType| if self.day_type == d { 1.0 } else { 0.0 };
        [
            self.year,
            self.dst,
            one_hot(DayType::Workday),
            one_hot(DayType::SaturdayOrBridge),
            one_hot(DayType::SundayOrHoliday),
            self.month_x,
            self.month_y,
            self.hour_x,
            self.hour_y,
        ]
    }
}

/// Expected solar, wind and total demand for one hour, in MWh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FundamentalForecasts {
    pub solar_mwh: f64,
    pub wind_mwh: f64,
    pub demand_mwh: f64,
}

impl FundamentalForecasts {
    pub const NAMES: [&'static str; 3] = ["solar_mwh", "wind_mwh", "demand_mwh"];

    pub fn new(solar_mwh: f64, wind_mwh: f64, demand_mwh: f64) -> Result<Self> {
        for v in [solar_mwh, wind_mwh, demand_mwh] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidVolume(v));
            }
        }
        Ok(FundamentalForecasts {
            solar_mwh,
            wind_mwh,
            demand_mwh,
        })
    }

    pub fn values(&self) -> [f64; 3] {
        [self.solar_mwh, self.wind_mwh, self.demand_mwh]
    }
}

/// Read access to the inputs feature assembly needs.
pub trait MarketStore {
    fn book(&self, t: &AuctionHour) -> Option<&OrderBook>;
    fn fundamentals(&self, t: &AuctionHour) -> Option<&FundamentalForecasts>;
    fn calendars(&self) -> &Calendars;
}

/// Features for forecasting the price of hour `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub t: AuctionHour,
    pub reference: AuctionHour,
    pub ref_inelastic_demand: f64,
    pub ref_price_curve: Vec<f64>,
    pub fundamentals_t: FundamentalForecasts,
    pub fundamentals_ref: FundamentalForecasts,
    pub calendar_t: CalendarInfo,
    pub calendar_ref: CalendarInfo,
}

impl FeatureVector {
    /// Values in the order given by [`feature_names`].
    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.ref_price_curve.len() + 25);
        v.push(self.ref_inelastic_demand);
        v.extend_from_slice(&self.ref_price_curve);
        v.extend(self.fundamentals_t.values());
        v.extend(self.fundamentals_ref.values());
        v.extend(self.calendar_t.values());
        v.extend(self.calendar_ref.values());
        v
    }
}

/// Number of features produced for a scheme with `n_classes` merged classes.
pub fn feature_dimension(n_classes: usize) -> usize {
    n_classes + 1 + 2 * FundamentalForecasts::NAMES.len() + 2 * CalendarInfo::NAMES.len()
}

/// Ordered feature labels matching [`FeatureVector::values`].
pub fn feature_names(scheme: &PriceClassScheme) -> Vec<String> {
    let mut names = Vec::with_capacity(feature_dimension(scheme.n_classes()));
    names.push("ref_inelastic_demand".to_string());
    names.extend((1..=scheme.n_classes()).map(|k| format!("ref_class_{k:03}")));
    for prefix in ["t", "ref"] {
        names.extend(
            FundamentalForecasts::NAMES
                .iter()
                .map(|n| format!("{prefix}_{n}")),
        );
    }
    for prefix in ["t", "ref"] {
        names.extend(CalendarInfo::NAMES.iter().map(|n| format!("{prefix}_{n}")));
    }
    names
}

/// Reference hour `r(t)`: the same hour on the nearest earlier day of the
/// same type for which both a book and fundamentals exist.
pub fn reference_hour<S: MarketStore>(t: AuctionHour, store: &S) -> Result<AuctionHour> {
    let date = reference_date_where(t.date, store.calendars(), |d| {
        let r = t.with_date(d);
        store.book(&r).is_some() && store.fundamentals(&r).is_some()
    })?;
    Ok(t.with_date(date))
}

pub fn assemble_features<S: MarketStore>(
    t: AuctionHour,
    store: &S,
    scheme: &PriceClassScheme,
) -> Result<FeatureVector> {
    let fundamentals_t = *store
        .fundamentals(&t)
        .ok_or_else(|| Error::MissingData(format!("fundamentals for {t}")))?;
    let reference = reference_hour(t, store)?;
    let ref_book = store
        .book(&reference)
        .ok_or_else(|| Error::MissingData(format!("order book for {reference}")))?;
    let fundamentals_ref = *store
        .fundamentals(&reference)
        .ok_or_else(|| Error::MissingData(format!("fundamentals for {reference}")))?;
    let curve = aggregate_price_curve(ref_book, scheme);
    Ok(FeatureVector {
        t,
        reference,
        ref_inelastic_demand: curve.inelastic_demand,
        ref_price_curve: curve.class_volumes,
        fundamentals_t,
        fundamentals_ref,
        calendar_t: CalendarInfo::new(t, store.calendars()),
        calendar_ref: CalendarInfo::new(reference, store.calendars()),
    })
}

/// Class-implied price of hour `t`, the regression target.
pub fn target_price<S: MarketStore>(
    t: AuctionHour,
    store: &S,
    scheme: &PriceClassScheme,
) -> Result<PriceTick> {
    let book = store
        .book(&t)
        .ok_or_else(|| Error::MissingData(format!("order book for {t}")))?;
    clear_from_price_curve(&aggregate_price_curve(book, scheme), scheme)
}

/// Class-implied prices for every book in the store.
pub fn target_series<S: MarketStore>(
    hours: impl IntoIterator<Item = AuctionHour>,
    store: &S,
    scheme: &PriceClassScheme,
) -> BTreeMap<AuctionHour, f64> {
    hours
        .into_iter()
        .filter_map(|t| target_price(t, store, scheme).ok().map(|p| (t, p.eur())))
        .collect()
}
