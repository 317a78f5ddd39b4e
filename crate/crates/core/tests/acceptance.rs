//! Acceptance criteria, run sequentially so that wall-clock limits are not
//! distorted by other tests sharing the CPU. Prints one line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{Duration as Days, NaiveDate};
use orderbook_forecast::cli::{build_features, fit_scheme, run_pipeline, with_workers, GridFile, RunManifest, PUBLISHED_GRID};
use orderbook_forecast::eval::{fold_ranges, grid_search, naive_forecast, PriceHistory};
use orderbook_forecast::models::forest::{select_features, ForestConfig};
use orderbook_forecast::models::linear::ols_fit;
use orderbook_forecast::models::mlp::{Activation, MlpConfig, Network, Optimizer};
use orderbook_forecast::models::{fit, rf_importance, ModelConfig};
use orderbook_forecast::partition::{aggregate_price_curve, approximation_report};
use orderbook_forecast::{
    build_demand_curve, build_supply_curve, clear_auction, compute_metrics, generate_synthetic, AuctionHour, Calendars,
    DatasetBundle, FeatureMatrix, OrderBook, PriceClassScheme, PriceTick, Side, SyntheticMarketSpec, TrainedModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn hour(y: i32, m: u32, d: u32, h: u8) -> AuctionHour {
    AuctionHour::new(NaiveDate::from_ymd_opt(y, m, d).unwrap(), h).unwrap()
}

const GRID_LEN: usize = 35_001;

fn tick(i: usize) -> PriceTick {
    PriceTick::from_tenths(-5000 + i as i32).unwrap()
}

/// Raw orders with dyadic volumes, so every partial sum is exact.
struct RawBook {
    supply: Vec<(usize, f64)>,
    demand: Vec<(usize, f64)>,
}

impl RawBook {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let levels = rng.random_range(1..=200);
        let n_supply = rng.random_range(0..=levels);
        let mut order = |heavy: bool| {
            let idx = if rng.random_bool(0.1) {
                *[0, GRID_LEN - 1, 5000].get(rng.random_range(0..3)).unwrap()
            } else {
                rng.random_range(4000..7000)
            };
            let q = if heavy { 20_000 } else { 4_000 };
            (idx, rng.random_range(0..q) as f64 * 0.25)
        };
        let supply = (0..n_supply).map(|_| order(true)).collect();
        let demand = (n_supply..levels).map(|_| order(false)).collect();
        RawBook { supply, demand }
    }

    fn book(&self) -> OrderBook {
        let mut b = OrderBook::new(hour(2018, 1, 1, 0));
        for &(i, v) in &self.supply {
            b.add(Side::Supply, tick(i), v).unwrap();
        }
        for &(i, v) in &self.demand {
            b.add(Side::Demand, tick(i), v).unwrap();
        }
        b
    }

    /// S and D at every grid price by prefix sums over per-tick volumes.
    fn cumulative(&self) -> (Vec<f64>, Vec<f64>) {
        let mut s = vec![0.0; GRID_LEN];
        let mut d = vec![0.0; GRID_LEN];
        for &(i, v) in &self.supply {
            s[i] += v;
        }
        for &(i, v) in &self.demand {
            d[i] += v;
        }
        for i in 1..GRID_LEN {
            s[i] += s[i - 1];
        }
        for i in (0..GRID_LEN - 1).rev() {
            d[i] += d[i + 1];
        }
        (s, d)
    }
}

fn c1_clearing_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cleared = 0;
    for n in 0..1000 {
        let raw = RawBook::random(&mut rng);
        let (s, d) = raw.cumulative();
        let oracle = if s[GRID_LEN - 1] == 0.0 && d[0] == 0.0 {
            None
        } else {
            (0..GRID_LEN).find(|&i| s[i] >= d[i]).map(|i| (tick(i), s[i].min(d[i])))
        };
        let book = raw.book();
        let got = clear_auction(&build_supply_curve(&book), &build_demand_curve(&book))
            .ok()
            .map(|r| (r.price, r.volume));
        ensure(got == oracle, format!("book {n}: clear_auction {got:?}, scan {oracle:?}"))?;
        cleared += usize::from(oracle.is_some());
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("1000 books identical to full scan ({cleared} clear), {:.2?}", elapsed))
}

fn c2_curve_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 0..100 {
        let raw = RawBook::random(&mut rng);
        let book = raw.book();
        let (s_curve, d_curve) = (build_supply_curve(&book), build_demand_curve(&book));
        for i in 0..GRID_LEN {
            let s: f64 = raw.supply.iter().filter(|o| o.0 <= i).map(|o| o.1).sum();
            let d: f64 = raw.demand.iter().filter(|o| o.0 >= i).map(|o| o.1).sum();
            let p = tick(i);
            ensure(
                s_curve.evaluate(p) == s && d_curve.evaluate(p) == d,
                format!("book {n} at {p}: S {} vs {s}, D {} vs {d}", s_curve.evaluate(p), d_curve.evaluate(p)),
            )?;
        }
    }
    Ok("100 books, every grid price re-summed exactly".into())
}

fn two_year_bundle() -> DatasetBundle {
    generate_synthetic(&SyntheticMarketSpec::default()).unwrap()
}

/// Averaged per-tick volume of one side over all books.
fn averaged_ticks(books: &[OrderBook], side: Side) -> Vec<f64> {
    let mut v = vec![0.0; GRID_LEN];
    for b in books {
        for (p, q) in b.levels(side) {
            v[(p.tenths() + 5000) as usize] += q;
        }
    }
    v.iter().map(|x| x / books.len() as f64).collect()
}

fn c3_partition(bundle: &DatasetBundle) -> Check {
    let books: Vec<OrderBook> = bundle.books.values().cloned().collect();
    let v_star = 1000.0;
    let scheme = PriceClassScheme::fit(&books, v_star).map_err(|e| e.to_string())?;
    let merged = scheme.merged_bounds();
    ensure(
        merged.first() == Some(&PriceTick::MIN) && merged.last() == Some(&PriceTick::MAX),
        "merged bounds must run from -500 to 3000",
    )?;
    // Every tick belongs to exactly one class: (c_{k-1}, c_k], -500 in the first.
    let mut members = vec![0usize; scheme.n_classes()];
    for i in 0..GRID_LEN {
        let p = tick(i);
        let owners: Vec<usize> = (0..scheme.n_classes())
            .filter(|&k| (merged[k] < p || (k == 0 && p == merged[0])) && p <= merged[k + 1])
            .collect();
        ensure(owners.len() == 1, format!("tick {p} lies in classes {owners:?}"))?;
        ensure(scheme.class_of(p) == owners[0], format!("class_of({p}) disagrees"))?;
        members[owners[0]] += 1;
    }
    ensure(members.iter().all(|&m| m > 0), "empty merged class")?;

    let mut worst = 0.0f64;
    for b in &books {
        let pc = aggregate_price_curve(b, &scheme);
        let total = b.total(Side::Supply) + b.total(Side::Demand);
        worst = worst.max((pc.class_volumes.iter().sum::<f64>() - total).abs());
    }
    ensure(worst <= 1e-9, format!("volume conservation off by {worst:e} MWh"))?;

    let mut interior = 0;
    for (side, bounds) in [(Side::Supply, scheme.supply_bounds()), (Side::Demand, scheme.demand_bounds())] {
        let avg = averaged_ticks(&books, side);
        let m = avg.iter().cloned().fold(0.0, f64::max);
        let class_vol = |k: usize| -> f64 {
            let lo = (bounds[k].tenths() + 5000) as usize;
            let hi = (bounds[k + 1].tenths() + 5000) as usize;
            let first = if k == 0 { lo } else { lo + 1 };
            avg[first..=hi].iter().sum()
        };
        let n = bounds.len() - 1;
        // The walk's final class (top for supply, bottom for demand) may hold less.
        let range = match side {
            Side::Supply => 0..n - 1,
            Side::Demand => 1..n,
        };
        for k in range {
            let v = class_vol(k);
            ensure(
                v >= v_star - 1e-6 && v < v_star + m + 1e-6,
                format!("{side:?} class {k}: averaged volume {v} outside [{v_star}, {})", v_star + m),
            )?;
            interior += 1;
        }
    }
    Ok(format!(
        "{} merged classes cover the grid, conservation error {worst:.1e} MWh, {interior} interior classes within bound",
        scheme.n_classes()
    ))
}

fn c4_refinement(bundle: &DatasetBundle) -> Check {
    let books: Vec<OrderBook> = bundle.books.values().cloned().collect();
    let mut errors = Vec::new();
    for v_star in [4000.0, 2000.0, 1000.0, 500.0, 250.0] {
        let scheme = PriceClassScheme::fit(&books, v_star).map_err(|e| e.to_string())?;
        errors.push(approximation_report(&books, &scheme).map_err(|e| e.to_string())?.mean_abs_error);
    }
    let exact = PriceClassScheme::tick_resolution(&books).map_err(|e| e.to_string())?;
    let limit = approximation_report(&books, &exact).map_err(|e| e.to_string())?.mean_abs_error;
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.3}")).collect();
    ensure(
        errors.windows(2).all(|w| w[1] <= w[0]),
        format!("mean errors not non-increasing: {shown:?}"),
    )?;
    ensure(limit == 0.0, format!("tick-resolution error {limit}"))?;
    Ok(format!("mean |error| {} -> {limit} at tick resolution", shown.join(" ")))
}

fn c5_gradient_check() -> Check {
    let cfg = MlpConfig {
        layer_sizes: vec![4, 3],
        activation: Activation::Tanh,
        optimizer: Optimizer::Adam,
        epochs: 1,
        batch_size: 8,
        dropout: vec![],
        batch_norm: false,
        learning_rate: None,
        seed: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n_in = 5;
    let mut net = Network::new(n_in, &cfg, &mut rng);
    let x: Vec<f64> = (0..8 * n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grads) = net.loss_and_gradients(&x, &y);
    let params = net.parameters();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut count = 0;
    for (t, tensor) in params.iter().enumerate() {
        for i in 0..tensor.len() {
            net.set_parameter(t, i, tensor[i] + h);
            let up = net.loss(&x, &y);
            net.set_parameter(t, i, tensor[i] - h);
            let down = net.loss(&x, &y);
            net.set_parameter(t, i, tensor[i]);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[t][i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max(rel);
            count += 1;
        }
    }
    ensure(worst < 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!("{count} parameters, max relative error {worst:.2e}"))
}

/// Solves the normal equations of `[1 | X] b = y` by Gaussian elimination
/// with partial pivoting.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len() + 1;
    let row = |r: &Vec<f64>| std::iter::once(1.0).chain(r.iter().copied()).collect::<Vec<f64>>();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, &t) in x.iter().zip(y) {
        let z = row(r);
        for i in 0..p {
            for j in 0..p {
                a[i][j] += z[i] * z[j];
            }
            a[i][p] += z[i] * t;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in c + 1..p {
            let f = a[r][c] / a[c][c];
            for k in c..=p {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    let mut b = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| a[i][k] * b[k]).sum();
        b[i] = (a[i][p] - s) / a[i][i];
    }
    b
}

fn c6_ols() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (mut exact_err, mut orth, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let p = rng.random_range(2..8);
        let n = rng.random_range(50..300);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|j| rng.random_range(-10.0..10.0) * (j + 1) as f64 + j as f64).collect())
            .collect();
        let beta: Vec<f64> = (0..=p).map(|_| rng.random_range(-5.0..5.0)).collect();
        let clean: Vec<f64> = x
            .iter()
            .map(|r| beta[0] + r.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect();

        let m = ols_fit(&x, &clean).map_err(|e| e.to_string())?;
        let (b0, b) = m.raw_coefficients();
        exact_err = exact_err.max((b0 - beta[0]).abs());
        for (got, want) in b.iter().zip(&beta[1..]) {
            exact_err = exact_err.max((got - want).abs());
        }

        let noisy: Vec<f64> = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
        let m = ols_fit(&x, &noisy).map_err(|e| e.to_string())?;
        let z = m.standardizer.transform(&x);
        let resid: Vec<f64> = x.iter().zip(&noisy).map(|(r, t)| m.predict_row(r) - t).collect();
        orth = orth.max(resid.iter().sum::<f64>().abs());
        for j in 0..p {
            orth = orth.max(z.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>().abs());
        }
        let (b0, b) = m.raw_coefficients();
        let oracle = normal_equations(&x, &noisy);
        for (got, want) in std::iter::once(&b0).chain(&b).zip(&oracle) {
            oracle_err = oracle_err.max((got - want).abs());
        }
    }
    ensure(exact_err < 1e-8, format!("noiseless coefficients off by {exact_err:e}"))?;
    ensure(orth < 1e-6, format!("residual orthogonality {orth:e}"))?;
    ensure(oracle_err < 1e-6, format!("normal-equations disagreement {oracle_err:e}"))?;
    Ok(format!(
        "20 problems: exact {exact_err:.1e}, orthogonality {orth:.1e}, oracle {oracle_err:.1e}"
    ))
}

fn c7_forest_recovery() -> Check {
    let start = Instant::now();
    let cfg = ForestConfig {
        n_trees: 1000,
        feature_fraction: 0.25,
        min_node_fraction: 0.01,
    };
    let names: Vec<String> = (1..=10).map(|i| format!("x{i}")).collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut hits = 0;
    for run in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let x: Vec<Vec<f64>> = (0..200).map(|_| (0..10).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] + noise.sample(&mut rng)).collect();
        let model = fit(&ModelConfig::RandomForest(cfg.clone()), &x, &y, &names, run).map_err(|e| e.to_string())?;
        let imp = rf_importance(&model).map_err(|e| e.to_string())?;
        hits += usize::from(imp.ranking[0].0 == "x1");
    }
    let elapsed = start.elapsed();
    ensure(hits >= 95, format!("x1 ranked first in {hits}/100 runs"))?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!("x1 ranked first in {hits}/100 runs, {:.1?}", elapsed))
}

fn c8_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..200.0)).collect();
        let truth: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(-100.0..200.0) })
            .collect();
        let r = compute_metrics(&pred, &truth).map_err(|e| e.to_string())?;
        let nf = n as f64;
        let rmse = (pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / nf).sqrt();
        let mae = pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / nf;
        let mut ape: Vec<f64> = pred
            .iter()
            .zip(&truth)
            .filter(|(_, t)| **t != 0.0)
            .map(|(p, t)| ((p - t) / t).abs())
            .collect();
        ape.sort_by(|a, b| a.partial_cmp(b).unwrap());
        worst = worst.max((r.rmse - rmse).abs()).max((r.mae - mae).abs());
        if ape.is_empty() {
            ensure(r.mdape.is_nan(), "MdAPE without non-zero truths must be undefined")?;
        } else {
            worst = worst.max((r.mdape - ape[(ape.len() - 1) / 2]).abs());
        }
        ensure(r.n_excluded_mdape == n - ape.len(), "excluded count")?;
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    let r = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).map_err(|e| e.to_string())?;
    ensure(
        (r.mae - 2.0 / 3.0).abs() < 1e-15 && (r.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15 && r.mdape == 0.5,
        format!("hand case gave {r:?}"),
    )?;
    Ok(format!("1000 vectors within {worst:.1e}; hand case MAE 2/3, RMSE sqrt(2/3), MdAPE 0.5"))
}

fn c9_naive() -> Check {
    let d = |day: u32| NaiveDate::from_ymd_opt(2019, 1, day).unwrap();
    // Mon 2019-01-07 .. Sun 2019-01-27 with a holiday on Wednesday the 23rd.
    let mut cal = Calendars::default();
    cal.holidays.insert(d(23));
    let price = |date: NaiveDate, h: u8| date.format("%d").to_string().parse::<f64>().unwrap() * 100.0 + h as f64;
    let cases = [
        (d(16), d(15), "Wednesday -> Tuesday"),
        (d(25), d(24), "Friday -> Thursday"),
        (d(21), d(14), "Monday -> previous Monday"),
        (d(19), d(12), "Saturday -> previous Saturday"),
        (d(20), d(13), "Sunday -> previous Sunday"),
        (d(23), d(20), "holiday -> latest Sunday"),
        (d(27), d(20), "Sunday after holiday week -> previous Sunday"),
    ];
    for (target, source, what) in cases {
        // Only prices strictly before the target date are visible.
        let mut history = PriceHistory::new();
        let mut day = d(7);
        while day < target {
            for h in 0..24 {
                history.insert(AuctionHour::new(day, h).unwrap(), price(day, h));
            }
            day += Days::days(1);
        }
        for h in 0..24 {
            let t = AuctionHour::new(target, h).unwrap();
            let got = naive_forecast(t, &history, &cal).map_err(|e| format!("{what}: {e}"))?;
            ensure(got == price(source, h), format!("{what} at hour {h}: got {got}"))?;
        }
    }
    Ok(format!("{} mapping cases exact for all 24 hours", cases.len()))
}

fn planted_matrix(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let hours = (0..n)
        .map(|i| AuctionHour::new(start + Days::days(i as i64 / 24), (i % 24) as u8).unwrap())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let targets = rows
        .iter()
        .map(|r| 4.0 + 2.0 * r[0] - 1.5 * r[1] + 0.5 * r[3] + noise.sample(&mut rng))
        .collect();
    FeatureMatrix::new((1..=5).map(|i| format!("x{i}")).collect(), hours, rows, targets).unwrap()
}

fn c10_grid_search() -> Check {
    let data = planted_matrix(503, 10);
    let mlp = |layers: Vec<usize>| {
        ModelConfig::Mlp(MlpConfig {
            layer_sizes: layers,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            epochs: 15,
            batch_size: 32,
            dropout: vec![],
            batch_norm: false,
            learning_rate: None,
            seed: None,
        })
    };
    let grid = vec![
        ModelConfig::RandomForest(ForestConfig {
            n_trees: 60,
            feature_fraction: 0.6,
            min_node_fraction: 0.01,
        }),
        mlp(vec![6]),
        ModelConfig::Ols,
        ModelConfig::RandomForest(ForestConfig {
            n_trees: 60,
            feature_fraction: 1.0,
            min_node_fraction: 0.05,
        }),
        mlp(vec![6, 6]),
    ];
    let k = 5;
    let serial = grid_search(&data, &grid, k, 3, false).map_err(|e| e.to_string())?;
    let parallel = with_workers(4, || grid_search(&data, &grid, k, 3, true))
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())?;
    ensure(serial == parallel, "serial and parallel tables differ")?;
    ensure(serial.to_csv() == parallel.to_csv(), "serial and parallel CSV differ")?;
    let best = serial.best().ok_or("no successful cell")?;
    ensure(best.config == ModelConfig::Ols, format!("winner was {}", best.config))?;
    let means: Vec<f64> = serial.cells.iter().filter_map(|c| c.outcome.as_ref().ok().map(|r| r.mean_rmse)).collect();
    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(best.outcome.as_ref().unwrap().mean_rmse == min, "winner is not the table minimum")?;

    let folds = fold_ranges(data.len(), k).map_err(|e| e.to_string())?;
    for i in 0..data.len() {
        let val = folds.iter().filter(|f| f.contains(&i)).count();
        ensure(val == 1, format!("row {i} in {val} validation folds"))?;
        let train = folds.iter().filter(|f| !f.contains(&i)).count();
        ensure(train == k - 1, format!("row {i} in {train} training folds"))?;
    }
    Ok(format!(
        "ols wins (mean rmse {min:.4}) over {} configs; fold coverage exact; serial == parallel",
        grid.len()
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c11_pipeline() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("run");
    let start = Instant::now();
    let summary = run_pipeline(&RunManifest::new(out.clone())).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(summary.failed_models().is_empty(), format!("failed models {:?}", summary.failed_models()))?;
    let n_configs: usize = GridFile::load(None).unwrap().groups.iter().map(|g| g.candidates.len()).sum();
    ensure(n_configs <= 12, format!("default grid has {n_configs} configs"))?;
    let oos = |m: &str| summary.comparison.row(m).map(|r| r.out_of_sample.rmse);
    let naive = oos("naive").ok_or("no naive row")?;
    let ols = oos("ols").ok_or("no ols row")?;
    let mlp = oos("mlp").ok_or("no mlp row")?;
    ensure(ols < naive, format!("ols {ols:.3} does not beat naive {naive:.3}"))?;
    ensure(mlp < naive, format!("mlp {mlp:.3} does not beat naive {naive:.3}"))?;
    ensure(elapsed < Duration::from_secs(300), format!("pipeline took {elapsed:?}"))?;

    let first = snapshot(&out);
    let manifest = RunManifest::load(&out.join("manifest.json")).map_err(|e| e.to_string())?;
    run_pipeline(&manifest).map_err(|e| e.to_string())?;
    let second = snapshot(&out);
    ensure(first.keys().eq(second.keys()), "rerun produced a different file set")?;
    let differing: Vec<_> = first.iter().filter(|(k, v)| second[*k] != **v).map(|(k, _)| k.clone()).collect();
    ensure(differing.is_empty(), format!("rerun changed {differing:?}"))?;
    Ok(format!(
        "out-of-sample rmse naive {naive:.3}, ols {ols:.3}, mlp {mlp:.3}; {n_configs} configs in {:.1?}; rerun of {} files byte-identical",
        elapsed,
        first.len()
    ))
}

fn c12_published_configs() -> Check {
    let grid = GridFile::parse(PUBLISHED_GRID, Path::new("published.json")).map_err(|e| e.to_string())?;
    let mlps: Vec<_> = grid.groups.iter().filter(|g| g.candidates.iter().all(|c| c.family() == "mlp")).collect();
    ensure(mlps.len() == 4, format!("{} network columns", mlps.len()))?;
    let deep = mlps.iter().find(|g| g.select_top == Some(20)).ok_or("no 20-feature column")?;
    match &deep.candidates[0] {
        ModelConfig::Mlp(c) => ensure(
            c.layer_sizes == vec![25; 25] && c.dropout == vec![0.1; 25] && c.batch_norm,
            "[25] * 25 column parsed wrongly",
        )?,
        _ => return Err("not a network".into()),
    }

    let spec = SyntheticMarketSpec {
        end_date: NaiveDate::from_ymd_opt(2016, 3, 31).unwrap(),
        ..Default::default()
    };
    let bundle = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let scheme = fit_scheme(&bundle, 2000.0, 0.2).map_err(|e| e.to_string())?;
    let matrix = build_features(&bundle, &scheme).map_err(|e| e.to_string())?;
    let forest_cfg = &grid.groups.iter().find(|g| g.name == "random_forest").ok_or("no forest")?.candidates[0];
    let forest = fit(forest_cfg, &matrix.rows, &matrix.targets, &matrix.names, 42).map_err(|e| e.to_string())?;
    let importance = rf_importance(&forest).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for group in mlps {
        let data = match (group.select_top, &group.features) {
            (Some(n), _) => matrix.select(&select_features(&importance, n).map_err(|e| e.to_string())?),
            (None, orderbook_forecast::cli::FeatureSubset::NoCurve) => Ok(matrix.without_curve_features()),
            (None, _) => Ok(matrix.clone()),
        }
        .map_err(|e| e.to_string())?;
        let model = fit(&group.candidates[0], &data.rows, &data.targets, &data.names, 42)
            .map_err(|e| format!("{}: {e}", group.name))?;
        let pred = model.predict(&data.rows).map_err(|e| e.to_string())?;
        ensure(pred.iter().all(|p| p.is_finite()), format!("{}: non-finite predictions", group.name))?;

        let path = dir.path().join(format!("{}.json", group.name));
        model.save(&path).map_err(|e| e.to_string())?;
        let back = TrainedModel::load(&path).map_err(|e| e.to_string())?;
        ensure(back == model, format!("{}: reloaded model differs", group.name))?;
        ensure(
            back.to_json().map_err(|e| e.to_string())? == std::fs::read_to_string(&path).unwrap(),
            format!("{}: re-serialization differs", group.name),
        )?;
        let again = back.predict(&data.rows).map_err(|e| e.to_string())?;
        ensure(
            again.iter().zip(&pred).all(|(a, b)| a.to_bits() == b.to_bits()),
            format!("{}: predictions differ after reload", group.name),
        )?;
        lines.push(format!("{} rmse {:.2}", group.name, model.meta.train_rmse));
    }
    Ok(format!("{} rows; {}; all round-trips bit-identical", matrix.len(), lines.join(", ")))
}

fn main() {
    let bundle = two_year_bundle();
    let criteria: Vec<Criterion> = vec![
        ("1 clearing oracle equivalence", Box::new(c1_clearing_oracle)),
        ("2 curve construction equivalence", Box::new(c2_curve_oracle)),
        ("3 partition properties", Box::new(|| c3_partition(&bundle))),
        ("4 refinement convergence", Box::new(|| c4_refinement(&bundle))),
        ("5 MLP gradient check", Box::new(c5_gradient_check)),
        ("6 OLS correctness", Box::new(c6_ols)),
        ("7 RF planted-model recovery", Box::new(c7_forest_recovery)),
        ("8 metrics", Box::new(c8_metrics)),
        ("9 naive benchmark", Box::new(c9_naive)),
        ("10 CV/grid-search sanity", Box::new(c10_grid_search)),
        ("11 end-to-end pipeline", Box::new(c11_pipeline)),
        ("12 published network configurations", Box::new(c12_published_configs)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(&format!("{f} "))) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail}) [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail}) [{:.1?}]", start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
