//! End-to-end acceptance suite. One test per criterion; each prints a
//! PASS line with the checked tolerance when it completes.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use parity_core::backtest::{
    run_backtest, replay_nav, BacktestConfig, CostConfig, DataSource, FeeConfig, FlowEvent,
    FundConfig, PotConfig, SafeHouseConfig, Scheme, UniverseSelection,
};
use parity_core::feeshare::{trickle_payout, FeeShareEventKind, RewardPot};
use parity_core::marketdata::{
    covariance_matrix, log_returns, rolling_volatility, AssetId, CovarianceMatrix,
};
use parity_core::metrics::{cri, CriAsset, CriInput};
use parity_core::money::Cents;
use parity_core::rebalancer::{
    waterfall_round_robin, AssetCapacity, AssetCost, CostModel, Side, TradeBound, TradeBounds,
};
use parity_core::safehouse::{
    verify_audit_chain, AuditAction, OperatorSecret, SafeHouse, WithdrawalDecision,
};
use parity_core::synthetic::{generate, SyntheticSpec};
use parity_core::weights::{
    build_weight_report, erc_weights, expected_returns, mvo_no_short_weights, mvo_weights,
    portfolio_stats, risk_contributions, vvv_profile, weight_report_csv, ExpectedReturns,
    WeightVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

fn id(s: &str) -> AssetId {
    AssetId::new(s).unwrap()
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn base_config(data: DataSource) -> BacktestConfig {
    BacktestConfig {
        data,
        from: None,
        to: None,
        rebalance_every_days: 1,
        vol_window: 90,
        vvv_window: 90,
        benchmark_rate: 0.10,
        band: 0.01,
        cost: CostConfig::default(),
        fee: FeeConfig::default(),
        pot: PotConfig::default(),
        safehouse: SafeHouseConfig::default(),
        funds: vec![FundConfig { label: "FUND".into(), scheme: Scheme::Vvv, universe: UniverseSelection::All }],
        flows: vec![],
        stakes: vec![],
        eligibility: None,
        seed: 7,
        networks: None,
    }
}

/// Criterion 1: the high-water-mark worked example. A scripted backtest with
/// NAV 10,000 -> 14,000 -> 12,000 -> 13,000 charges exactly one fee, on the
/// 4,000 profit, and nothing afterwards below the mark. Exact in cents.
#[test]
fn acceptance_01_hwm_worked_example() {
    let started = Instant::now();
    let mut csv = String::from("date,asset,close_usd,market_cap_usd\n");
    // 9 warm-up days of mild alternation, then the scripted path
    let prices = [100.5, 99.5, 100.5, 99.5, 100.5, 99.5, 100.5, 99.5, 100.5, 100.0, 140.0, 120.0, 130.0];
    for (i, p) in prices.iter().enumerate() {
        let d = date(2022, 1, 1) + chrono::Days::new(i as u64);
        csv.push_str(&format!("{d},AAA,{p},1000000\n"));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prices.csv");
    std::fs::write(&path, csv).unwrap();

    let mut config = base_config(DataSource::Csv { path });
    config.vol_window = 5;
    config.vvv_window = 5;
    config.cost.default_gas_usd = 0.0;
    // deep enough that slippage on a 10k order rounds to zero cents
    config.cost.default_pool_depth_usd = 1e13;
    config.flows = vec![FlowEvent {
        date: date(2022, 1, 10),
        investor_id: "investor".into(),
        fund: "FUND".into(),
        amount_usd: 10_000.0,
    }];
    let report = run_backtest(&config).unwrap();
    let fund = &report.funds[0];
    assert_eq!(fund.days.len(), 4);

    // day of the deposit: 10,000 invested at unit price 1.0
    assert_eq!(fund.days[0].tvl, Cents(1_000_000));
    assert_eq!(fund.days[0].fee, Cents::ZERO);

    // the 1.4x mark: gross NAV 14,000, profit 4,000, fee 20% = 800.00 exact
    assert_eq!(fund.days[1].pnl, Cents(400_000));
    assert_eq!(fund.days[1].fee, Cents(80_000));

    // below the mark afterwards: no further fees
    assert_eq!(fund.days[2].fee, Cents::ZERO);
    assert_eq!(fund.days[3].fee, Cents::ZERO);
    let fee_events: Vec<_> =
        fund.fee_events.iter().filter(|e| e.event == FeeShareEventKind::Fee).collect();
    assert_eq!(fee_events.len(), 1);
    assert_eq!(fee_events[0].amount, Cents(80_000));

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "acceptance 01: PASS - HWM worked example: one fee event of 800.00 on 4,000.00 profit, exact in cents ({elapsed:?})"
    );
}

/// Criterion 2: the trickle worked example. A 100,000 pot at 50% pays
/// 50,000 then 25,000 on consecutive empty epochs, and the balance after k
/// empty epochs is 100,000 * 0.5^k exact in cents.
#[test]
fn acceptance_02_trickle_worked_example() {
    let started = Instant::now();
    let mut pot = RewardPot::new(0.5, Cents::ZERO).unwrap();
    let p1 = trickle_payout(&mut pot, Cents(10_000_000)).unwrap();
    assert_eq!(p1, Cents(5_000_000));
    let p2 = trickle_payout(&mut pot, Cents::ZERO).unwrap();
    assert_eq!(p2, Cents(2_500_000));
    // balance after k empty epochs; 10^7 cents halves exactly 7 times
    let mut pot = RewardPot::new(0.5, Cents::ZERO).unwrap();
    trickle_payout(&mut pot, Cents(10_000_000)).unwrap();
    assert_eq!(pot.balance, Cents(5_000_000));
    for k in 2..=7u32 {
        trickle_payout(&mut pot, Cents::ZERO).unwrap();
        assert_eq!(pot.balance, Cents(10_000_000 >> k), "epoch {k}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "acceptance 02: PASS - trickle worked example: payouts 50,000.00 then 25,000.00, pot = 100,000*0.5^k exact in cents ({elapsed:?})"
    );
}

/// Criterion 3: the Sharpe formula. portfolio_stats(0.20, 0.05, b=0.10)
/// yields exactly 2.0, and random inputs match the formula to 1e-12.
#[test]
fn acceptance_03_sharpe_formula() {
    let assets = vec![id("A")];
    let w = WeightVector::new(assets.clone(), vec![1.0]).unwrap();
    let mu = ExpectedReturns { assets: assets.clone(), mu: vec![0.20] };
    let cov = CovarianceMatrix { assets, matrix: DMatrix::from_element(1, 1, 0.0025) };
    let stats = portfolio_stats(&w, &mu, &cov, 0.10).unwrap();
    assert_eq!(stats.expected_return, 0.20);
    assert_eq!(stats.volatility, 0.05);
    assert_eq!(stats.sharpe, Some(2.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.random_range(1..5usize);
        let assets: Vec<AssetId> = (0..n).map(|i| id(&format!("A{i}"))).collect();
        let mut weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|x| *x /= sum);
        let mu_v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.2).collect();
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let mut c = &a * a.transpose();
        for i in 0..n {
            c[(i, i)] += 0.01;
        }
        let b = rng.random::<f64>() * 0.2;
        let w = WeightVector::new(assets.clone(), weights.clone()).unwrap();
        let mu = ExpectedReturns { assets: assets.clone(), mu: mu_v.clone() };
        let cov = CovarianceMatrix { assets: assets.clone(), matrix: c.clone() };
        let stats = portfolio_stats(&w, &mu, &cov, b).unwrap();

        // independent recomputation with explicit loops
        let er: f64 = weights.iter().zip(&mu_v).map(|(x, y)| x * y).sum();
        let mut var = 0.0;
        for i in 0..n {
            for j in 0..n {
                var += weights[i] * c[(i, j)] * weights[j];
            }
        }
        let vol = var.sqrt();
        assert!((stats.expected_return - er).abs() < 1e-12);
        assert!((stats.volatility - vol).abs() < 1e-12);
        assert!((stats.sharpe.unwrap() - (er - b) / vol).abs() < 1e-12);
    }
    println!("acceptance 03: PASS - Sharpe = (return - 10%)/volatility, exact case 2.0 and 1000 random inputs to 1e-12");
}

fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let mut m = &a * a.transpose();
    for i in 0..n {
        m[(i, i)] += 0.10;
    }
    m * 0.25
}

/// Best grid Sharpe over the simplex at step 0.001, evaluated with
/// second-difference recurrences along the innermost axis.
fn grid_best_sharpe(ex: &[f64], cov: &DMatrix<f64>) -> f64 {
    const M: i64 = 1000;
    let n = ex.len();
    let mut best_num = f64::NEG_INFINITY;
    let mut best_q = 1.0f64;
    let mut bn2 = f64::NEG_INFINITY;
    let mut consider = |e: f64, q: f64, best_num: &mut f64, best_q: &mut f64, bn2: &mut f64| {
        if e <= 0.0 || q <= 0.0 {
            return;
        }
        if *best_num <= 0.0 || e * e * *best_q > *bn2 * q {
            *best_num = e;
            *best_q = q;
            *bn2 = e * e;
        }
    };
    let qf = |w: &[f64]| {
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += w[i] * cov[(i, j)] * w[j];
            }
        }
        q
    };
    match n {
        2 => {
            for i in 0..=M {
                let w = [i as f64 / M as f64, (M - i) as f64 / M as f64];
                let e = ex[0] * w[0] + ex[1] * w[1];
                consider(e, qf(&w), &mut best_num, &mut best_q, &mut bn2);
            }
        }
        3 => {
            for i in 0..=M {
                for j in 0..=(M - i) {
                    let k = M - i - j;
                    let w = [i as f64 / M as f64, j as f64 / M as f64, k as f64 / M as f64];
                    let e = ex[0] * w[0] + ex[1] * w[1] + ex[2] * w[2];
                    consider(e, qf(&w), &mut best_num, &mut best_q, &mut bn2);
                }
            }
        }
        4 => {
            let inv_m = 1.0 / M as f64;
            for i in 0..=M {
                for j in 0..=(M - i) {
                    let r = M - i - j;
                    // w(l) = u + l*v, u = (i, j, 0, r)/M, v = (0, 0, 1, -1)/M
                    let u = [i as f64 * inv_m, j as f64 * inv_m, 0.0, r as f64 * inv_m];
                    let q0 = qf(&u);
                    let mut ucv = 0.0;
                    for t in 0..4 {
                        ucv += u[t] * (cov[(t, 2)] - cov[(t, 3)]) * inv_m;
                    }
                    let q1 = 2.0 * ucv;
                    let q2 = (cov[(2, 2)] - 2.0 * cov[(2, 3)] + cov[(3, 3)]) * inv_m * inv_m;
                    let de = (ex[2] - ex[3]) * inv_m;
                    let mut e = ex[0] * u[0] + ex[1] * u[1] + ex[3] * u[3];
                    let mut q = q0;
                    let mut dq = q1 + q2;
                    for _l in 0..=r {
                        consider(e, q, &mut best_num, &mut best_q, &mut bn2);
                        e += de;
                        q += dq;
                        dq += 2.0 * q2;
                    }
                }
            }
        }
        _ => unreachable!("grid oracle supports n in 2..=4"),
    }
    if best_num <= 0.0 {
        f64::NEG_INFINITY
    } else {
        best_num / best_q.sqrt()
    }
}

/// Gauss-Jordan solve with partial pivoting; independent of the production
/// linear algebra path.
fn gauss_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[(i, j)];
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap()).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-14, "singular test matrix");
        for j in col..=n {
            m[col][j] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                for j in col..=n {
                    m[row][j] -= f * m[col][j];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n]).collect()
}

/// Criterion 4: optimizer oracle equivalence on 100 seeded instances with
/// N in {2,3,4}: long-only Sharpe within 1e-4 of the 0.001-step simplex
/// grid optimum, and the tangency portfolio matching the closed form
/// inv(cov)(mu - b) normalized to 1e-9. Total runtime under 60 s.
#[test]
fn acceptance_04_optimizer_oracles() {
    let started = Instant::now();
    let b = 0.10;
    let mut checked = 0;
    for instance in 0..100u64 {
        let n = 2 + (instance % 3) as usize; // 2, 3, 4 round-robin
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let cov_m = random_pd(n, &mut rng);
        let mut mu_v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 0.6 - 0.1).collect();
        if mu_v.iter().all(|m| *m <= b) {
            mu_v[0] = b + 0.15; // keep the Sharpe problem non-vacuous
        }
        let assets: Vec<AssetId> = (0..n).map(|i| id(&format!("A{i}"))).collect();
        let mu = ExpectedReturns { assets: assets.clone(), mu: mu_v.clone() };
        let cov = CovarianceMatrix { assets, matrix: cov_m.clone() };

        // closed-form tangency via an independent solver
        let w_impl = mvo_weights(&mu, &cov, b).unwrap();
        let ex: Vec<f64> = mu_v.iter().map(|m| m - b).collect();
        let x = gauss_solve(&cov_m, &ex);
        let s: f64 = x.iter().sum();
        for (wi, xi) in w_impl.weights.iter().zip(&x) {
            assert!((wi - xi / s).abs() < 1e-9, "tangency mismatch on instance {instance}");
        }

        // long-only solver against the grid
        let ns = mvo_no_short_weights(&mu, &cov, b).unwrap();
        assert!(!ns.min_variance_fallback);
        let e: f64 = ns.weights.weights.iter().zip(&ex).map(|(w, e)| w * e).sum();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += ns.weights.weights[i] * cov_m[(i, j)] * ns.weights.weights[j];
            }
        }
        let impl_sharpe = e / q.sqrt();
        let grid_sharpe = grid_best_sharpe(&ex, &cov_m);
        assert!(
            (impl_sharpe - grid_sharpe).abs() <= 1e-4,
            "instance {instance}: solver {impl_sharpe} vs grid {grid_sharpe}"
        );
        assert!(impl_sharpe >= grid_sharpe - 1e-9, "solver must not trail the grid");
        checked += 1;
    }
    let elapsed = started.elapsed();
    assert_eq!(checked, 100);
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "acceptance 04: PASS - 100 instances: no-short Sharpe within 1e-4 of 0.001-grid optimum, tangency matches closed form to 1e-9 ({elapsed:?})"
    );
}

/// Criterion 5: equal-risk-contribution self-check on 100 seeded positive-
/// definite matrices with N <= 8: every contribution equals 1/N to 1e-8.
#[test]
fn acceptance_05_erc_self_check() {
    for instance in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + instance);
        let n = rng.random_range(2..=8usize);
        let assets: Vec<AssetId> = (0..n).map(|i| id(&format!("A{i}"))).collect();
        let cov = CovarianceMatrix { assets, matrix: random_pd(n, &mut rng) };
        let w = erc_weights(&cov).unwrap();
        let rc = risk_contributions(&cov.matrix, &w.weights);
        for (i, r) in rc.iter().enumerate() {
            assert!(
                (r - 1.0 / n as f64).abs() < 1e-8,
                "instance {instance}: contribution {i} = {r}"
            );
        }
        assert!(w.weights.iter().all(|v| *v >= 0.0));
    }
    println!("acceptance 05: PASS - 100 PD instances (N <= 8): all risk contributions equal 1/N within 1e-8");
}

/// Independent re-simulation of the waterfall loop used as the plan oracle.
fn waterfall_oracle(
    caps: &[AssetCapacity],
    bounds: &TradeBounds,
    actionable: &BTreeSet<AssetId>,
    flow: Cents,
) -> (Vec<(AssetId, i64)>, i64) {
    let buying = flow.0 > 0;
    let mut lane: Vec<(AssetId, i64)> = caps
        .iter()
        .filter(|c| actionable.contains(&c.asset))
        .map(|c| {
            let h = c.capacity.0 - c.current.0;
            (c.asset.clone(), if buying { h } else { -h })
        })
        .filter(|(a, need)| *need > 0 && !bounds.per_asset[a].untradeable)
        .collect();
    lane.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut remaining = flow.0.abs();
    let mut orders = Vec::new();
    loop {
        let mut progressed = false;
        for (a, need) in lane.iter_mut() {
            if remaining == 0 {
                break;
            }
            let b = &bounds.per_asset[a];
            let chunk = b.max_trade.0.min(*need).min(remaining);
            if chunk <= 0 || chunk < b.min_trade.0 {
                continue;
            }
            orders.push((a.clone(), chunk));
            *need -= chunk;
            remaining -= chunk;
            progressed = true;
        }
        if remaining == 0 || !progressed {
            break;
        }
    }
    (orders, remaining)
}

/// Criterion 6: waterfall conservation and oracle agreement on 200 seeded
/// instances with N <= 6: plans match the loop oracle order for order,
/// buys - sells equals placed flow exactly in cents, and every order sits
/// within its bounds.
#[test]
fn acceptance_06_waterfall_oracle() {
    for instance in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + instance);
        let n = rng.random_range(1..=6usize);
        let names: Vec<String> = (0..n).map(|i| format!("A{i}")).collect();
        let caps: Vec<AssetCapacity> = names
            .iter()
            .map(|s| AssetCapacity {
                asset: id(s),
                capacity: Cents(rng.random_range(0..80_000)),
                current: Cents(rng.random_range(0..80_000)),
            })
            .collect();
        let bounds = TradeBounds {
            per_asset: names
                .iter()
                .map(|s| {
                    let min = rng.random_range(0..3_000);
                    let max = rng.random_range(1_000..25_000);
                    (
                        id(s),
                        TradeBound {
                            min_trade: Cents(min),
                            max_trade: Cents(max),
                            untradeable: min > max,
                        },
                    )
                })
                .collect(),
        };
        let actionable: BTreeSet<AssetId> =
            names.iter().filter(|_| rng.random::<f64>() > 0.15).map(|s| id(s)).collect();
        let flow = Cents(rng.random_range(-90_000..90_000));
        let cost = CostModel {
            per_asset: names
                .iter()
                .map(|s| (id(s), AssetCost { gas_fee: Cents(25), pool_depth: Cents(500_000_000) }))
                .collect(),
            max_gas_fraction: 0.01,
            max_slippage: 0.005,
        };
        let plan = waterfall_round_robin(&caps, &bounds, &actionable, flow, &cost).unwrap();
        let (oracle_orders, oracle_rest) = waterfall_oracle(&caps, &bounds, &actionable, flow);

        assert_eq!(plan.orders.len(), oracle_orders.len(), "instance {instance}");
        for (o, (oa, on)) in plan.orders.iter().zip(&oracle_orders) {
            assert_eq!(&o.asset, oa, "instance {instance}");
            assert_eq!(o.notional.0, *on, "instance {instance}");
            let expected_side = if flow.0 > 0 { Side::Buy } else { Side::Sell };
            assert_eq!(o.side, expected_side);
            let b = &bounds.per_asset[&o.asset];
            assert!(o.notional >= b.min_trade && o.notional <= b.max_trade);
        }
        assert_eq!(plan.unallocated.0, oracle_rest);
        let placed: i64 = plan.orders.iter().map(|o| o.notional.0).sum();
        assert_eq!(plan.net_placed().0, flow.0.signum() * placed, "conservation");
        assert_eq!(placed + plan.unallocated.0, flow.0.abs(), "conservation vs flow");
    }
    println!("acceptance 06: PASS - 200 instances (N <= 6): waterfall matches loop oracle order-for-order, conservation exact in cents");
}

/// Criterion 7: VVV structural reproduction. The report carries the exact
/// column schema and trailer rows on synthetic data; vvv weights are
/// inverse-monotone in adjusted volatility; adjusted equals volatility plus
/// vvvFactor with no tolerance.
#[test]
fn acceptance_07_vvv_structural() {
    let spec = SyntheticSpec { assets: 10, days: 545, seed: 77, ..Default::default() };
    let history = generate(&spec);
    let returns = log_returns(&history).unwrap();
    let vols = rolling_volatility(&returns, 90).unwrap();
    let profile = vvv_profile(&vols, 90).unwrap();
    let mu = expected_returns(&returns).unwrap();
    let cov = covariance_matrix(&returns).unwrap();
    let report = build_weight_report(&profile, &mu, &cov, 0.10).unwrap();
    let csv = weight_report_csv(&report);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "asset,volatility,vvv_factor,vvv_adj_volatility,vvv_weight,mvo_weight,no_short_weight"
    );
    assert_eq!(lines.len(), 1 + 10 + 3);
    assert!(lines[11].starts_with("portfolio_expected_return,,,,"));
    assert!(lines[12].starts_with("portfolio_volatility,,,,"));
    assert!(lines[13].starts_with("sharpe_ratio,,,,"));

    for row in &report.rows {
        assert_eq!(row.vvv_adj_volatility, row.volatility + row.vvv_factor, "additive, exact");
    }
    for a in &report.rows {
        for b in &report.rows {
            if a.vvv_adj_volatility < b.vvv_adj_volatility {
                assert!(
                    a.vvv_weight > b.vvv_weight,
                    "{}: {} should outweigh {}: {}",
                    a.asset,
                    a.vvv_weight,
                    b.asset,
                    b.vvv_weight
                );
            }
        }
    }
    let wsum: f64 = report.rows.iter().map(|r| r.vvv_weight).sum();
    assert!((wsum - 1.0).abs() < 1e-9);
    println!("acceptance 07: PASS - weights report reproduces the table schema; vvv inverse-monotone; adjusted = vol + vvvFactor exactly");
}

/// Criterion 8: CRI properties. Neutral modifiers reduce to the HH index
/// (single asset 1, N-fold split divides by N); randomized perturbations
/// are monotone in volatility and anti-monotone in market share.
#[test]
fn acceptance_08_cri_properties() {
    let neutral = |sym: &str, w: f64, universe: f64| CriAsset {
        asset: id(sym),
        weight: w,
        market_cap_usd: universe,
        volatility: 0.8,
        chain_fractions: None,
    };
    let single = CriInput {
        assets: vec![neutral("A", 1.0, 100.0)],
        universe_market_cap_usd: 100.0,
        sigma_ref: Some(0.8),
    };
    assert!((cri(&single).unwrap().portfolio_cri - 1.0).abs() < 1e-12);

    for n in [2usize, 4, 8, 16] {
        let split = CriInput {
            assets: (0..n)
                .map(|i| CriAsset {
                    asset: id(&format!("A{i}")),
                    weight: 1.0 / n as f64,
                    market_cap_usd: 100.0,
                    volatility: 0.8,
                    chain_fractions: None,
                })
                .collect(),
            universe_market_cap_usd: 100.0 * n as f64,
            sigma_ref: Some(0.8),
        };
        let solo = CriInput {
            assets: vec![CriAsset {
                asset: id("A0"),
                weight: 1.0,
                market_cap_usd: 100.0,
                volatility: 0.8,
                chain_fractions: None,
            }],
            universe_market_cap_usd: 100.0 * n as f64,
            sigma_ref: Some(0.8),
        };
        let ratio = cri(&solo).unwrap().portfolio_cri / cri(&split).unwrap().portfolio_cri;
        assert!((ratio - n as f64).abs() < 1e-9, "split by {n}: ratio {ratio}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for _ in 0..300 {
        let n = rng.random_range(2..7usize);
        let mut weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        let caps: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 1e9 + 1e6).collect();
        let vols: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
        let universe: f64 = caps.iter().sum::<f64>() * 2.0;
        let build = |caps: &[f64], vols: &[f64]| CriInput {
            assets: (0..n)
                .map(|i| CriAsset {
                    asset: id(&format!("A{i}")),
                    weight: weights[i],
                    market_cap_usd: caps[i],
                    volatility: vols[i],
                    chain_fractions: None,
                })
                .collect(),
            universe_market_cap_usd: universe,
            sigma_ref: Some(0.75),
        };
        let base = cri(&build(&caps, &vols)).unwrap().portfolio_cri;
        let k = rng.random_range(0..n);

        let mut vols_up = vols.clone();
        vols_up[k] *= 1.0 + rng.random::<f64>();
        assert!(cri(&build(&caps, &vols_up)).unwrap().portfolio_cri >= base - 1e-12);

        let mut caps_up = caps.clone();
        caps_up[k] *= 1.0 + rng.random::<f64>();
        assert!(cri(&build(&caps_up, &vols)).unwrap().portfolio_cri <= base + 1e-12);
    }
    println!("acceptance 08: PASS - CRI reduces to HH under neutral modifiers; monotone in volatility, anti-monotone in market share (300 perturbations)");
}

/// Criterion 9: safe house. Over 10,000 seeded adversarial sequences no
/// accepted withdrawal exceeds the per-transaction or daily limit, any
/// invalid reveal locks the house until a quorum unlock, and every audit
/// chain verifies end to end.
#[test]
fn acceptance_09_safehouse_adversarial() {
    let started = Instant::now();
    for seq in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + seq);
        let n_ops = rng.random_range(2..=3usize);
        let chain_len = 10u32;
        let mut secrets: Vec<OperatorSecret> = (0..n_ops)
            .map(|i| {
                let mut seed = [0u8; 32];
                rng.fill(&mut seed);
                OperatorSecret::new(&format!("op{i}"), seed, chain_len)
            })
            .collect();
        let per_tx = Cents(rng.random_range(500..5_000));
        let daily = Cents(per_tx.0 * rng.random_range(1..4));
        let chains = secrets.iter().map(|s| s.chain().unwrap()).collect();
        let mut house = SafeHouse::new(per_tx, daily, chains).unwrap();

        let mut locked_since_attack = false;
        let mut withdrawn_by_day: BTreeMap<NaiveDate, Cents> = BTreeMap::new();
        for step in 0..rng.random_range(5..25usize) {
            let day = date(2022, 1, 1) + chrono::Days::new((step % 5) as u64);
            match rng.random_range(0..10u32) {
                // honest withdrawal attempt, sometimes oversized
                0..=5 => {
                    let op = rng.random_range(0..n_ops);
                    let amount = Cents(rng.random_range(1..per_tx.0 * 2));
                    let Some(reveal) = peek_reveal(&mut secrets[op]) else { continue };
                    let decision = house
                        .request_withdrawal(day, &format!("op{op}"), amount, &reveal)
                        .unwrap();
                    if decision == WithdrawalDecision::Accepted {
                        assert!(amount <= per_tx, "seq {seq}: over per-tx accept");
                        let total = withdrawn_by_day.entry(day).or_insert(Cents::ZERO);
                        *total += amount;
                        assert!(*total <= daily, "seq {seq}: over daily accept");
                        assert!(!locked_since_attack, "seq {seq}: accepted while attacked");
                        secrets[op].next_reveal(); // consume on accept
                    }
                }
                // forged reveal
                6..=7 => {
                    let op = rng.random_range(0..n_ops);
                    let mut forged = [0u8; 32];
                    rng.fill(&mut forged);
                    let d = house
                        .request_withdrawal(day, &format!("op{op}"), Cents(100), &forged)
                        .unwrap();
                    assert_ne!(d, WithdrawalDecision::Accepted, "seq {seq}: forged accept");
                    locked_since_attack = true;
                }
                // unknown operator
                8 => {
                    let mut forged = [0u8; 32];
                    rng.fill(&mut forged);
                    let d = house
                        .request_withdrawal(day, "mallory", Cents(100), &forged)
                        .unwrap();
                    assert_ne!(d, WithdrawalDecision::Accepted);
                    locked_since_attack = true;
                }
                // quorum unlock attempt with two distinct valid reveals
                _ => {
                    if house.status == parity_core::safehouse::Status::Locked {
                        let r0 = secrets[0].next_reveal();
                        let r1 = secrets[1].next_reveal();
                        if let (Some(a), Some(b)) = (r0, r1) {
                            let unlocked = house
                                .unlock(day, &[("op0".into(), a), ("op1".into(), b)], 2)
                                .unwrap();
                            if unlocked {
                                locked_since_attack = false;
                            }
                        }
                    }
                }
            }
        }
        verify_audit_chain(&house.audit_log).unwrap_or_else(|e| panic!("seq {seq}: {e}"));
        // accepted withdrawals never appear while locked
        let mut locked = false;
        for e in &house.audit_log {
            match e.action {
                AuditAction::Lock => locked = true,
                AuditAction::Unlock => locked = false,
                AuditAction::Withdraw => assert!(!locked, "seq {seq}: withdraw while locked"),
                _ => {}
            }
        }
    }
    let elapsed = started.elapsed();
    println!(
        "acceptance 09: PASS - 10,000 adversarial sequences: limits never exceeded, attacks lock until quorum, audit chains verify ({elapsed:?})"
    );
}

/// Next reveal without consuming it (the safe house only burns a link on
/// acceptance, so honest retries reuse the same preimage).
fn peek_reveal(secret: &mut OperatorSecret) -> Option<[u8; 32]> {
    let mut probe = secret.clone();
    probe.next_reveal()
}

/// Criterion 10: multichain price identity. Aggregation over randomized
/// network splits keeps the global unit price bit-identical under fee-free
/// internal transfers, with total TVL conserved exactly in cents.
#[test]
fn acceptance_10_multichain_price_identity() {
    use parity_core::multichain::{aggregate_global, NetworkPortfolio};
    for seq in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + seq);
        let n = rng.random_range(2..=5usize);
        let mut networks: Vec<NetworkPortfolio> = (0..n)
            .map(|i| NetworkPortfolio {
                network_id: format!("N{i}"),
                holdings: [(id("BTC"), Cents(rng.random_range(1_000..1_000_000_000)))]
                    .into_iter()
                    .collect(),
                tokens_issued: rng.random_range(1_000..10_000_000) as f64,
                gas_fee: Cents(rng.random_range(0..5_000)),
            })
            .collect();
        let before = aggregate_global(&networks).unwrap();
        for _ in 0..rng.random_range(1..6usize) {
            let from = rng.random_range(0..n);
            let mut to = rng.random_range(0..n);
            while to == from {
                to = rng.random_range(0..n);
            }
            let available = networks[from].holdings[&id("BTC")];
            let moved = Cents(rng.random_range(0..=available.0));
            *networks[from].holdings.get_mut(&id("BTC")).unwrap() -= moved;
            *networks[to].holdings.get_mut(&id("BTC")).unwrap() += moved;
        }
        let after = aggregate_global(&networks).unwrap();
        assert_eq!(before.total_tvl, after.total_tvl, "seq {seq}: TVL must conserve");
        assert_eq!(
            before.unit_price.to_bits(),
            after.unit_price.to_bits(),
            "seq {seq}: unit price must be identical"
        );
    }
    println!("acceptance 10: PASS - 500 randomized splits: fee-free internal transfers leave the global unit price bit-identical, TVL exact in cents");
}

/// Criterion 11: backtest replay invariance and determinism. Two runs of
/// the same config serialize byte-identically, the event stream replays the
/// NAV path to the cent, and the full synthetic 365-day 10-asset run stays
/// under 10 seconds.
#[test]
fn acceptance_11_backtest_replay_and_determinism() {
    let started = Instant::now();
    // 179 warm-up days plus exactly 365 trading days
    let spec = SyntheticSpec { assets: 10, days: 544, seed: 42, ..Default::default() };
    let mut config = base_config(DataSource::Synthetic(spec.clone()));
    config.cost.default_gas_usd = 2.0;
    config.cost.default_pool_depth_usd = 5_000_000.0;
    let history = generate(&spec);
    let start = config.vol_window + config.vvv_window - 1;
    config.flows = vec![
        FlowEvent {
            date: history.dates[start],
            investor_id: "alice".into(),
            fund: "FUND".into(),
            amount_usd: 1_000_000.0,
        },
        FlowEvent {
            date: history.dates[start + 120],
            investor_id: "bob".into(),
            fund: "FUND".into(),
            amount_usd: 200_000.0,
        },
        FlowEvent {
            date: history.dates[start + 240],
            investor_id: "alice".into(),
            fund: "FUND".into(),
            amount_usd: -150_000.0,
        },
    ];

    let report1 = run_backtest(&config).unwrap();
    let report2 = run_backtest(&config).unwrap();
    let json1 = report1.to_json();
    let json2 = report2.to_json();
    assert_eq!(json1.as_bytes(), json2.as_bytes(), "byte-identical reports");

    // 365 trading days of a 10-asset universe
    assert_eq!(report1.funds[0].days.len(), 365);
    replay_nav(&report1).unwrap();
    // conservation identity, recomputed from the records
    for fund in &report1.funds {
        let mut tvl = Cents::ZERO;
        for day in &fund.days {
            tvl = tvl + day.pnl + day.deposits - day.redemptions_paid - day.costs - day.fee;
            assert_eq!(tvl, day.tvl, "{}: {}", fund.label, day.date);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "acceptance 11: PASS - double run byte-identical; event stream replays NAV to the cent; 365-day 10-asset run in {elapsed:?}"
    );
}
