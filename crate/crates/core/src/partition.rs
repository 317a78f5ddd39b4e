//! Volume-equalizing price classes and the merit-order price curve.
//!
//! Price classes are right-closed intervals `(c_{k-1}, c_k]` over the
//! merged boundaries, except the first class which also contains
//! `c_0 = -500.0`. A class's volume therefore counts from its upper boundary
//! onward, which is what makes the class-implied clearing price collapse to
//! the exact clearing price when every occupied tick gets its own class.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::lower_median;
use crate::market::{
    build_demand_curve, build_supply_curve, clear_auction, clear_book, AuctionHour, OrderBook,
    PriceTick, Side, StepCurve,
};

/// Boundaries of the supply, demand and merged price classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceClassScheme {
    supply_bounds: Vec<PriceTick>,
    demand_bounds: Vec<PriceTick>,
    merged_bounds: Vec<PriceTick>,
    /// Target averaged volume per class; 0 for tick-resolution schemes.
    pub v_star: f64,
    /// SHA-256 of the books the scheme was fitted on.
    pub training_hash: String,
}

impl PriceClassScheme {
    pub fn from_bounds(
        supply_bounds: Vec<PriceTick>,
        demand_bounds: Vec<PriceTick>,
        v_star: f64,
        training_hash: String,
    ) -> Result<Self> {
        check_bounds(&supply_bounds, "supply")?;
        check_bounds(&demand_bounds, "demand")?;
        let merged_bounds = merge_boundaries(&supply_bounds, &demand_bounds);
        Ok(PriceClassScheme {
            supply_bounds,
            demand_bounds,
            merged_bounds,
            v_star,
            training_hash,
        })
    }

    /// Fits volume-equalizing boundaries on the averaged curves of `books`.
    pub fn fit(books: &[OrderBook], v_star: f64) -> Result<Self> {
        let (avg_supply, avg_demand) = average_curves(books)?;
        let supply = compute_boundaries(&avg_supply, v_star)?;
        let demand = compute_boundaries(&avg_demand, v_star)?;
        Self::from_bounds(supply, demand, v_star, training_hash(books))
    }

    /// One class per tick occupied on either side in any of `books`.
    pub fn tick_resolution(books: &[OrderBook]) -> Result<Self> {
        let occupied = |side: Side| {
            let mut ticks: BTreeSet<PriceTick> = books
                .iter()
                .flat_map(|b| b.levels(side).iter())
                .filter(|(_, &v)| v > 0.0)
                .map(|(&p, _)| p)
                .collect();
            ticks.insert(PriceTick::MIN);
            ticks.insert(PriceTick::MAX);
            ticks.into_iter().collect::<Vec<_>>()
        };
        Self::from_bounds(
            occupied(Side::Supply),
            occupied(Side::Demand),
            0.0,
            training_hash(books),
        )
    }

    pub fn supply_bounds(&self) -> &[PriceTick] {
        &self.supply_bounds
    }

    pub fn demand_bounds(&self) -> &[PriceTick] {
        &self.demand_bounds
    }

    pub fn merged_bounds(&self) -> &[PriceTick] {
        &self.merged_bounds
    }

    /// Number of merged classes `M^X`.
    pub fn n_classes(&self) -> usize {
        self.merged_bounds.len() - 1
    }

    /// Zero-based merged class containing `price`.
    pub fn class_of(&self, price: PriceTick) -> usize {
        class_index(&self.merged_bounds, price)
    }

    /// Serializes to the plain-text scheme format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# orderbook-forecast price class scheme v1\n");
        let _ = writeln!(out, "# v_star={}", self.v_star);
        let _ = writeln!(out, "# training_hash={}", self.training_hash);
        out.push_str("side,index,boundary_price\n");
        for (code, bounds) in [
            ("S", &self.supply_bounds),
            ("D", &self.demand_bounds),
            ("X", &self.merged_bounds),
        ] {
            for (i, b) in bounds.iter().enumerate() {
                let _ = writeln!(out, "{code},{i},{b}");
            }
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::MalformedFile {
            path: origin.to_path_buf(),
            message,
        };
        let mut v_star = None;
        let mut hash = None;
        let mut seen_header = false;
        let (mut s, mut d, mut x) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "v_star" => {
                            v_star = Some(v.trim().parse::<f64>().map_err(|e| {
                                bad(format!("line {}: bad v_star: {e}", lineno + 1))
                            })?)
                        }
                        "training_hash" => hash = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            if !seen_header {
                if line != "side,index,boundary_price" {
                    return Err(bad(format!("line {}: unexpected header `{line}`", lineno + 1)));
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", lineno + 1)));
            }
            let target = match fields[0] {
                "S" => &mut s,
                "D" => &mut d,
                "X" => &mut x,
                other => return Err(bad(format!("line {}: unknown side `{other}`", lineno + 1))),
            };
            let index: usize = fields[1]
                .parse()
                .map_err(|e| bad(format!("line {}: bad index: {e}", lineno + 1)))?;
            if index != target.len() {
                return Err(bad(format!("line {}: index {index} out of order", lineno + 1)));
            }
            let price: f64 = fields[2]
                .parse()
                .map_err(|e| bad(format!("line {}: bad price: {e}", lineno + 1)))?;
            target.push(PriceTick::from_eur(price).map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?);
        }
        let v_star = v_star.ok_or_else(|| bad("missing v_star".into()))?;
        let hash = hash.ok_or_else(|| bad("missing training_hash".into()))?;
        let scheme = Self::from_bounds(s, d, v_star, hash).map_err(|e| bad(e.to_string()))?;
        if !x.is_empty() && x != scheme.merged_bounds {
            return Err(bad("merged boundaries are not the union of the sides".into()));
        }
        Ok(scheme)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path)
    }
}

fn check_bounds(bounds: &[PriceTick], side: &str) -> Result<()> {
    if bounds.len() < 2 || bounds[0] != PriceTick::MIN || *bounds.last().unwrap() != PriceTick::MAX
    {
        return Err(Error::InvalidParameter(format!(
            "{side} boundaries must start at -500.0 and end at 3000.0"
        )));
    }
    if bounds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "{side} boundaries must be strictly ascending"
        )));
    }
    Ok(())
}

fn class_index(bounds: &[PriceTick], price: PriceTick) -> usize {
    bounds.partition_point(|&b| b < price).max(1) - 1
}

/// Pointwise mean of the per-hour supply and demand curves.
pub fn average_curves(books: &[OrderBook]) -> Result<(StepCurve, StepCurve)> {
    if books.is_empty() {
        return Err(Error::EmptyInput("average_curves needs at least one book"));
    }
    let n = books.len() as f64;
    let mut supply = vec![0.0; PriceTick::GRID_LEN];
    let mut demand = vec![0.0; PriceTick::GRID_LEN];
    for book in books {
        for (p, v) in book.supply() {
            supply[p.grid_index()] += v;
        }
        for (p, v) in book.demand() {
            demand[p.grid_index()] += v;
        }
    }
    let mut cum = 0.0;
    let mut s_points = Vec::new();
    for (i, &v) in supply.iter().enumerate() {
        if v > 0.0 {
            cum += v;
            s_points.push((PriceTick::from_grid_index(i)?, cum / n));
        }
    }
    let mut cum = 0.0;
    let mut d_points = Vec::new();
    for (i, &v) in demand.iter().enumerate().rev() {
        if v > 0.0 {
            cum += v;
            d_points.push((PriceTick::from_grid_index(i)?, cum / n));
        }
    }
    d_points.reverse();
    Ok((
        StepCurve::new(Side::Supply, s_points)?,
        StepCurve::new(Side::Demand, d_points)?,
    ))
}

/// Greedy volume-equalizing boundaries for one averaged curve.
///
/// Walks the curve in its cumulation direction (supply upward, demand
/// downward) and closes a class as soon as the volume gathered since the
/// previous boundary reaches `v_star`. Leftover volume stays in the last
/// class of the walk.
pub fn compute_boundaries(avg: &StepCurve, v_star: f64) -> Result<Vec<PriceTick>> {
    if !(v_star.is_finite() && v_star > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "V_star must be positive, got {v_star}"
        )));
    }
    avg.validate()?;
    let increments = avg.increments();
    let mut emitted = BTreeSet::new();
    let mut acc = 0.0;
    match avg.kind() {
        Side::Supply => {
            for &(p, inc) in &increments {
                acc += inc;
                if acc >= v_star && p != PriceTick::MIN {
                    if p != PriceTick::MAX {
                        emitted.insert(p);
                    }
                    acc = 0.0;
                }
            }
        }
        Side::Demand => {
            for &(p, inc) in increments.iter().rev() {
                acc += inc;
                if acc >= v_star {
                    if let Some(b) = p.prev() {
                        emitted.insert(b);
                        acc = 0.0;
                    }
                }
            }
        }
    }
    emitted.insert(PriceTick::MIN);
    emitted.insert(PriceTick::MAX);
    Ok(emitted.into_iter().collect())
}

/// Sorted, deduplicated union of two boundary lists.
pub fn merge_boundaries(a: &[PriceTick], b: &[PriceTick]) -> Vec<PriceTick> {
    a.iter()
        .chain(b)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Combined supply+demand volume per merged class plus the inelastic demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceCurve {
    pub hour: AuctionHour,
    pub class_volumes: Vec<f64>,
    /// Total demand `D_t(-500)`.
    pub inelastic_demand: f64,
}

pub fn aggregate_price_curve(book: &OrderBook, scheme: &PriceClassScheme) -> PriceCurve {
    let mut class_volumes = vec![0.0; scheme.n_classes()];
    for (p, v) in book.supply().iter().chain(book.demand()) {
        class_volumes[scheme.class_of(*p)] += v;
    }
    PriceCurve {
        hour: book.hour,
        class_volumes,
        inelastic_demand: build_demand_curve(book).total(),
    }
}

/// Price at which the cumulative price curve first reaches the inelastic
/// demand. Always one of the merged boundaries.
pub fn clear_from_price_curve(pc: &PriceCurve, scheme: &PriceClassScheme) -> Result<PriceTick> {
    let bounds = scheme.merged_bounds();
    if pc.class_volumes.len() != scheme.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: scheme.n_classes(),
            actual: pc.class_volumes.len(),
        });
    }
    let mut cum = 0.0;
    if cum >= pc.inelastic_demand {
        return Ok(bounds[0]);
    }
    for (k, v) in pc.class_volumes.iter().enumerate() {
        cum += v;
        if cum >= pc.inelastic_demand {
            return Ok(bounds[k + 1]);
        }
    }
    Err(Error::NoIntersection {
        supply: cum,
        demand: pc.inelastic_demand,
    })
}

/// Class-aggregated supply and demand curves of a book.
///
/// Supply volume of class k is offered at `c_k`; demand volume of class k
/// bids up to the tick just below `c_k`. Clearing these two curves against
/// each other gives the same price as [`clear_from_price_curve`].
pub fn class_aggregated_curves(
    book: &OrderBook,
    scheme: &PriceClassScheme,
) -> Result<(StepCurve, StepCurve)> {
    let bounds = scheme.merged_bounds();
    let mut snapped = OrderBook::new(book.hour);
    for (side, levels) in [(Side::Supply, book.supply()), (Side::Demand, book.demand())] {
        let mut per_class = vec![0.0; scheme.n_classes()];
        for (p, v) in levels {
            per_class[scheme.class_of(*p)] += v;
        }
        for (k, v) in per_class.into_iter().enumerate() {
            let upper = bounds[k + 1];
            let at = match side {
                Side::Supply => upper,
                Side::Demand => upper.prev().expect("class upper bound above -500"),
            };
            snapped.add(side, at, v)?;
        }
    }
    Ok((build_supply_curve(&snapped), build_demand_curve(&snapped)))
}

/// Clears a book through its class-aggregated curves.
pub fn clear_aggregated(book: &OrderBook, scheme: &PriceClassScheme) -> Result<PriceTick> {
    let (s, d) = class_aggregated_curves(book, scheme)?;
    Ok(clear_auction(&s, &d)?.price)
}

/// The class-implied clearing price of a book.
pub fn class_implied_price(book: &OrderBook, scheme: &PriceClassScheme) -> Result<PriceTick> {
    clear_from_price_curve(&aggregate_price_curve(book, scheme), scheme)
}

/// How far class-implied prices sit from the exact clearing prices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproximationReport {
    /// Mean absolute deviation in EUR/MWh.
    pub mean_abs_error: f64,
    /// Median absolute percentage deviation as a fraction.
    pub mdape: f64,
    pub n: usize,
    /// Hours with an exact price of zero, left out of the MdAPE.
    pub n_excluded: usize,
}

pub fn approximation_report(
    books: &[OrderBook],
    scheme: &PriceClassScheme,
) -> Result<ApproximationReport> {
    if books.is_empty() {
        return Err(Error::EmptyInput("approximation_report needs at least one book"));
    }
    let pairs = books
        .par_iter()
        .map(|b| Ok((class_implied_price(b, scheme)?.eur(), clear_book(b)?.price.eur())))
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len();
    let mean_abs_error = pairs.iter().map(|(a, e)| (a - e).abs()).sum::<f64>() / n as f64;
    let mut ratios: Vec<f64> = pairs
        .iter()
        .filter(|(_, e)| *e != 0.0)
        .map(|(a, e)| (a - e).abs() / e.abs())
        .collect();
    let n_excluded = n - ratios.len();
    Ok(ApproximationReport {
        mean_abs_error,
        mdape: lower_median(&mut ratios).unwrap_or(f64::NAN),
        n,
        n_excluded,
    })
}

/// SHA-256 over a canonical rendering of the books.
pub fn training_hash(books: &[OrderBook]) -> String {
    let mut hasher = Sha256::new();
    for book in books {
        for side in [Side::Supply, Side::Demand] {
            for (p, v) in book.levels(side) {
                let line = format!(
                    "{},{},{},{},{:016x}\n",
                    book.hour.date,
                    book.hour.hour(),
                    side.code(),
                    p.tenths(),
                    v.to_bits()
                );
                hasher.update(line.as_bytes());
            }
        }
    }
    hex::encode(hasher.finalize())
}
