//! Order books on the exchange price grid, cumulative step curves and
//! uniform-price auction clearing.
//!
//! Prices live on the grid {-500.0, -499.9, ..., 3000.0} EUR/MWh and are
//! stored as integer tenths so grid membership is exact. Volumes are MWh.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A price on the 0.1 EUR/MWh exchange grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PriceTick(i32);

impl PriceTick {
    pub const MIN_TENTHS: i32 = -5_000;
    pub const MAX_TENTHS: i32 = 30_000;
    pub const MIN: PriceTick = PriceTick(Self::MIN_TENTHS);
    pub const MAX: PriceTick = PriceTick(Self::MAX_TENTHS);
    /// Number of prices on the grid.
    pub const GRID_LEN: usize = (Self::MAX_TENTHS - Self::MIN_TENTHS + 1) as usize;

    pub fn from_tenths(tenths: i32) -> Result<Self> {
        if (Self::MIN_TENTHS..=Self::MAX_TENTHS).contains(&tenths) {
            Ok(PriceTick(tenths))
        } else {
            Err(Error::OffGridPrice(tenths as f64 / 10.0))
        }
    }

    /// Parses a EUR/MWh value that must already sit on the grid.
    pub fn from_eur(eur: f64) -> Result<Self> {
        let scaled = eur * 10.0;
        let rounded = scaled.round();
        if !eur.is_finite() || (scaled - rounded).abs() > 1e-6 {
            return Err(Error::OffGridPrice(eur));
        }
        Self::from_tenths(rounded as i32).map_err(|_| Error::OffGridPrice(eur))
    }

    /// Snaps a EUR/MWh value to the nearest grid price; values outside the
    /// grid range are still rejected.
    pub fn snap_eur(eur: f64) -> Result<Self> {
        if !eur.is_finite() {
            return Err(Error::OffGridPrice(eur));
        }
        Self::from_tenths((eur * 10.0).round() as i32).map_err(|_| Error::OffGridPrice(eur))
    }

    pub fn tenths(self) -> i32 {
        self.0
    }

    pub fn eur(self) -> f64 {
        self.0 as f64 / 10.0
    }

    /// Position of this price on the grid, 0 for -500.0.
    pub fn grid_index(self) -> usize {
        (self.0 - Self::MIN_TENTHS) as usize
    }

    pub fn from_grid_index(index: usize) -> Result<Self> {
        Self::from_tenths(Self::MIN_TENTHS + index as i32)
    }

    /// The next price up the grid, if any.
    pub fn next(self) -> Option<Self> {
        (self.0 < Self::MAX_TENTHS).then_some(PriceTick(self.0 + 1))
    }

    /// The next price down the grid, if any.
    pub fn prev(self) -> Option<Self> {
        (self.0 > Self::MIN_TENTHS).then_some(PriceTick(self.0 - 1))
    }

    /// Every price on the grid in ascending order.
    pub fn grid() -> impl DoubleEndedIterator<Item = PriceTick> + ExactSizeIterator {
        (0..Self::GRID_LEN).map(|i| PriceTick(Self::MIN_TENTHS + i as i32))
    }
}

impl TryFrom<f64> for PriceTick {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::from_eur(value)
    }
}

impl From<PriceTick> for f64 {
    fn from(p: PriceTick) -> f64 {
        p.eur()
    }
}

impl fmt::Display for PriceTick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        f.pad(&format!("{}{}.{}", sign, abs / 10, abs % 10))
    }
}

/// One delivery hour of the day-ahead auction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AuctionHour {
    pub date: NaiveDate,
    hour: u8,
}

impl AuctionHour {
    pub fn new(date: NaiveDate, hour: u8) -> Result<Self> {
        if hour > 23 {
            return Err(Error::InvalidParameter(format!(
                "hour {hour} outside 0-23"
            )));
        }
        Ok(AuctionHour { date, hour })
    }

    pub fn hour(&self) -> u8 {
        self.hour
    }

    pub fn month(&self) -> u32 {
        self.date.month()
    }

    /// The same hour on another date.
    pub fn with_date(&self, date: NaiveDate) -> Self {
        AuctionHour {
            date,
            hour: self.hour,
        }
    }
}

impl fmt::Display for AuctionHour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} h{:02}", self.date, self.hour)
    }
}

/// Which side of the book a curve or order belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Supply,
    Demand,
}

impl Side {
    pub fn code(self) -> &'static str {
        match self {
            Side::Supply => "S",
            Side::Demand => "D",
        }
    }
}

/// Bid and ask volumes of one auction hour, keyed by grid price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderBook {
    pub hour: AuctionHour,
    supply: BTreeMap<PriceTick, f64>,
    demand: BTreeMap<PriceTick, f64>,
}

impl OrderBook {
    pub fn new(hour: AuctionHour) -> Self {
        OrderBook {
            hour,
            supply: BTreeMap::new(),
            demand: BTreeMap::new(),
        }
    }

    /// Builds a book from (EUR/MWh, MWh) levels; prices must be on the grid.
    pub fn from_levels(
        hour: AuctionHour,
        supply: &[(f64, f64)],
        demand: &[(f64, f64)],
    ) -> Result<Self> {
        let mut book = OrderBook::new(hour);
        for &(p, v) in supply {
            book.add(Side::Supply, PriceTick::from_eur(p)?, v)?;
        }
        for &(p, v) in demand {
            book.add(Side::Demand, PriceTick::from_eur(p)?, v)?;
        }
        Ok(book)
    }

    /// Adds volume at a price level; repeated levels are summed.
    pub fn add(&mut self, side: Side, price: PriceTick, volume: f64) -> Result<()> {
        if !volume.is_finite() || volume < 0.0 {
            return Err(Error::InvalidVolume(volume));
        }
        let levels = match side {
            Side::Supply => &mut self.supply,
            Side::Demand => &mut self.demand,
        };
        *levels.entry(price).or_insert(0.0) += volume;
        Ok(())
    }

    pub fn levels(&self, side: Side) -> &BTreeMap<PriceTick, f64> {
        match side {
            Side::Supply => &self.supply,
            Side::Demand => &self.demand,
        }
    }

    pub fn supply(&self) -> &BTreeMap<PriceTick, f64> {
        &self.supply
    }

    pub fn demand(&self) -> &BTreeMap<PriceTick, f64> {
        &self.demand
    }

    pub fn total(&self, side: Side) -> f64 {
        self.levels(side).values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.supply.is_empty() && self.demand.is_empty()
    }
}

/// A cumulative supply or demand curve stored at its step prices.
///
/// Supply: `S(P)` is the cumulative volume of the last point priced `<= P`.
/// Demand: `D(P)` is the cumulative volume of the first point priced `>= P`.
/// Outside the points both curves are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    kind: Side,
    points: Vec<(PriceTick, f64)>,
}

impl StepCurve {
    pub fn new(kind: Side, points: Vec<(PriceTick, f64)>) -> Result<Self> {
        let curve = StepCurve { kind, points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn zero(kind: Side) -> Self {
        StepCurve {
            kind,
            points: Vec::new(),
        }
    }

    /// Checks ordering, sign and monotonicity of the stored points.
    pub fn validate(&self) -> Result<()> {
        for &(_, v) in &self.points {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidVolume(v));
            }
        }
        for w in self.points.windows(2) {
            let ((p0, v0), (p1, v1)) = (w[0], w[1]);
            if p1 <= p0 {
                return Err(Error::NonMonotone(format!(
                    "prices not strictly increasing at {p0} -> {p1}"
                )));
            }
            let ok = match self.kind {
                Side::Supply => v1 >= v0,
                Side::Demand => v1 <= v0,
            };
            if !ok {
                return Err(Error::NonMonotone(format!(
                    "{:?} curve goes from {v0} at {p0} to {v1} at {p1}",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> Side {
        self.kind
    }

    pub fn points(&self) -> &[(PriceTick, f64)] {
        &self.points
    }

    /// Cumulative volume at `price`.
    pub fn evaluate(&self, price: PriceTick) -> f64 {
        match self.kind {
            Side::Supply => {
                let idx = self.points.partition_point(|&(p, _)| p <= price);
                if idx == 0 {
                    0.0
                } else {
                    self.points[idx - 1].1
                }
            }
            Side::Demand => {
                let idx = self.points.partition_point(|&(p, _)| p < price);
                self.points.get(idx).map_or(0.0, |&(_, v)| v)
            }
        }
    }

    /// Cumulative volume at a EUR/MWh price; off-grid prices are rejected.
    pub fn evaluate_eur(&self, price: f64) -> Result<f64> {
        Ok(self.evaluate(PriceTick::from_eur(price)?))
    }

    /// Total volume on the curve: `S(3000)` or `D(-500)`.
    pub fn total(&self) -> f64 {
        match self.kind {
            Side::Supply => self.points.last().map_or(0.0, |p| p.1),
            Side::Demand => self.points.first().map_or(0.0, |p| p.1),
        }
    }

    /// Volume added at each stored price, in ascending price order.
    pub fn increments(&self) -> Vec<(PriceTick, f64)> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let (p, v) = self.points[i];
                let neighbour = match self.kind {
                    Side::Supply if i > 0 => self.points[i - 1].1,
                    Side::Demand if i + 1 < n => self.points[i + 1].1,
                    _ => 0.0,
                };
                (p, v - neighbour)
            })
            .collect()
    }
}

/// `S_t(P) = sum of supply volume priced <= P`.
pub fn build_supply_curve(book: &OrderBook) -> StepCurve {
    let mut cum = 0.0;
    let points = book
        .supply
        .iter()
        .filter(|(_, &v)| v > 0.0)
        .map(|(&p, &v)| {
            cum += v;
            (p, cum)
        })
        .collect();
    StepCurve {
        kind: Side::Supply,
        points,
    }
}

/// `D_t(P) = sum of demand volume priced >= P`.
pub fn build_demand_curve(book: &OrderBook) -> StepCurve {
    let mut cum = 0.0;
    let mut points: Vec<_> = book
        .demand
        .iter()
        .rev()
        .filter(|(_, &v)| v > 0.0)
        .map(|(&p, &v)| {
            cum += v;
            (p, cum)
        })
        .collect();
    points.reverse();
    StepCurve {
        kind: Side::Demand,
        points,
    }
}

/// Outcome of clearing one auction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub price: PriceTick,
    pub volume: f64,
}

/// Clears an auction at the smallest grid price where cumulative supply
/// covers cumulative demand. The cleared volume is `min(S(P*), D(P*))`.
pub fn clear_auction(supply: &StepCurve, demand: &StepCurve) -> Result<ClearingResult> {
    if supply.kind != Side::Supply || demand.kind != Side::Demand {
        return Err(Error::InvalidParameter(
            "clear_auction expects (supply, demand) curves".into(),
        ));
    }
    if supply.total() == 0.0 && demand.total() == 0.0 {
        return Err(Error::EmptyMarket);
    }
    let (s_cap, d_cap) = (supply.evaluate(PriceTick::MAX), demand.evaluate(PriceTick::MAX));
    if s_cap < d_cap {
        return Err(Error::NoIntersection {
            supply: s_cap,
            demand: d_cap,
        });
    }
    // S - D is non-decreasing in P, so the crossing can be bisected.
    let covered = |i: usize| {
        let p = PriceTick(PriceTick::MIN_TENTHS + i as i32);
        supply.evaluate(p) >= demand.evaluate(p)
    };
    let (mut lo, mut hi) = (0usize, PriceTick::GRID_LEN - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if covered(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let price = PriceTick(PriceTick::MIN_TENTHS + lo as i32);
    Ok(ClearingResult {
        price,
        volume: supply.evaluate(price).min(demand.evaluate(price)),
    })
}

/// Builds both curves of a book and clears it.
pub fn clear_book(book: &OrderBook) -> Result<ClearingResult> {
    clear_auction(&build_supply_curve(book), &build_demand_curve(book))
}
