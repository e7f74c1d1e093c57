//! Exception-series backtests of VaR forecasts.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, Normal};

/// Backtests need at least this many forecasts.
pub const MIN_OBS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BacktestKind {
    TrafficLight,
    Binomial,
    Pof,
    Tuff,
    Cc,
    Cci,
    Tbf,
    Tbfi,
}

pub const ALL_TESTS: [BacktestKind; 8] = [
    BacktestKind::TrafficLight,
    BacktestKind::Binomial,
    BacktestKind::Pof,
    BacktestKind::Tuff,
    BacktestKind::Cc,
    BacktestKind::Cci,
    BacktestKind::Tbf,
    BacktestKind::Tbfi,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: BacktestKind,
    /// Likelihood ratio, z-score or, for the traffic light, the binomial
    /// CDF at the exception count. `None` when undefined.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub zone: Option<Zone>,
    pub pass: bool,
    /// Passed only because the test is undefined without exceptions.
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub level: f64,
    pub significance: f64,
    pub n_obs: usize,
    pub exception_count: usize,
    pub tests: Vec<TestOutcome>,
}

impl BacktestReport {
    pub fn passed(&self) -> usize {
        self.tests.iter().filter(|t| t.pass).count()
    }

    pub fn get(&self, kind: BacktestKind) -> &TestOutcome {
        self.tests.iter().find(|t| t.test == kind).expect("every test is reported")
    }
}

/// `a ln b`, zero when `a` is.
fn xlny(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

/// `-2 ln L(p) + 2 ln L(1/n)` for a geometric waiting time `n`.
fn geometric_lr(n: usize, p: f64) -> f64 {
    let n = n as f64;
    let h = 1.0 / n;
    let null = p.ln() + xlny(n - 1.0, 1.0 - p);
    let alt = h.ln() + xlny(n - 1.0, 1.0 - h);
    (-2.0 * (null - alt)).max(0.0)
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    1.0 - ChiSquared::new(df).expect("positive degrees of freedom").cdf(x)
}

fn lr_outcome(test: BacktestKind, lr: f64, df: f64, significance: f64) -> TestOutcome {
    let p = chi2_sf(lr, df);
    TestOutcome { test, statistic: Some(lr), p_value: Some(p), zone: None, pass: p >= significance, vacuous: false }
}

fn vacuous(test: BacktestKind) -> TestOutcome {
    TestOutcome { test, statistic: None, p_value: None, zone: None, pass: true, vacuous: true }
}

/// Runs the eight tests on an exception series (`true` = the realized
/// return fell below the VaR at confidence `level`).
pub fn backtest_suite(exceptions: &[bool], level: f64, significance: f64) -> Result<BacktestReport> {
    let n = exceptions.len();
    if n < MIN_OBS {
        return Err(Error::InsufficientSample(format!("{n} forecasts, need at least {MIN_OBS}")));
    }
    if !(level > 0.0 && level < 1.0) || !(significance > 0.0 && significance < 1.0) {
        return Err(Error::InvalidArgument("level and significance must lie in (0, 1)".into()));
    }
    let p = 1.0 - level;
    let nf = n as f64;
    let x = exceptions.iter().filter(|&&e| e).count();
    let xf = x as f64;
    let mut tests = Vec::with_capacity(8);

    let cum = Binomial::new(p, n as u64).unwrap().cdf(x as u64);
    let zone = if cum <= 0.95 {
        Zone::Green
    } else if cum < 0.9999 {
        Zone::Yellow
    } else {
        Zone::Red
    };
    tests.push(TestOutcome {
        test: BacktestKind::TrafficLight,
        statistic: Some(cum),
        p_value: None,
        zone: Some(zone),
        pass: zone != Zone::Red,
        vacuous: false,
    });

    let z = (xf - nf * p) / (nf * p * (1.0 - p)).sqrt();
    let pz = 2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z.abs()));
    tests.push(TestOutcome {
        test: BacktestKind::Binomial,
        statistic: Some(z),
        p_value: Some(pz),
        zone: None,
        pass: pz >= significance,
        vacuous: false,
    });

    let phat = xf / nf;
    let pof = (-2.0 * (xlny(nf - xf, 1.0 - p) + xlny(xf, p) - xlny(nf - xf, 1.0 - phat) - xlny(xf, phat))).max(0.0);
    tests.push(lr_outcome(BacktestKind::Pof, pof, 1.0, significance));

    let fails: Vec<usize> = exceptions.iter().enumerate().filter(|(_, &e)| e).map(|(i, _)| i + 1).collect();
    tests.push(match fails.first() {
        Some(&first) => lr_outcome(BacktestKind::Tuff, geometric_lr(first, p), 1.0, significance),
        None => vacuous(BacktestKind::Tuff),
    });

    let cci = independence_lr(exceptions);
    tests.push(lr_outcome(BacktestKind::Cc, pof + cci, 2.0, significance));
    tests.push(lr_outcome(BacktestKind::Cci, cci, 1.0, significance));

    if fails.is_empty() {
        tests.push(vacuous(BacktestKind::Tbf));
        tests.push(vacuous(BacktestKind::Tbfi));
    } else {
        let gaps: Vec<usize> = fails.iter().scan(0, |prev, &f| {
            let g = f - *prev;
            *prev = f;
            Some(g)
        })
        .collect();
        let tbf: f64 = gaps.iter().map(|&g| geometric_lr(g, p)).sum();
        tests.push(lr_outcome(BacktestKind::Tbf, tbf, xf, significance));
        let tbfi: f64 = gaps.iter().map(|&g| geometric_lr(g, phat)).sum();
        tests.push(lr_outcome(BacktestKind::Tbfi, tbfi, (xf - 1.0).max(1.0), significance));
    }

    Ok(BacktestReport { level, significance, n_obs: n, exception_count: x, tests })
}

/// Markov-chain independence likelihood ratio on the transition counts.
fn independence_lr(e: &[bool]) -> f64 {
    let mut c = [[0.0f64; 2]; 2];
    for w in e.windows(2) {
        c[w[0] as usize][w[1] as usize] += 1.0;
    }
    let [[n00, n01], [n10, n11]] = c;
    let p0 = if n00 + n01 > 0.0 { n01 / (n00 + n01) } else { 0.0 };
    let p1 = if n10 + n11 > 0.0 { n11 / (n10 + n11) } else { 0.0 };
    let total = n00 + n01 + n10 + n11;
    let pi = (n01 + n11) / total;
    let null = xlny(n00 + n10, 1.0 - pi) + xlny(n01 + n11, pi);
    let alt = xlny(n00, 1.0 - p0) + xlny(n01, p0) + xlny(n10, 1.0 - p1) + xlny(n11, p1);
    (-2.0 * (null - alt)).max(0.0)
}
