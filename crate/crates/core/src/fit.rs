//! Least-squares helpers and the shared "bounded over frequencies" test.

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LineFit { slope, intercept, r2 })
}

/// Number of top octaves used by the boundedness test.
pub const TOP_OCTAVES: f64 = 6.0;
/// Number of final octaves checked for an upward trend.
pub const TREND_OCTAVES: f64 = 3.0;
/// Largest allowed max/min ratio.
pub const MAX_SPREAD: f64 = 10.0;
/// Slope of ln(value) vs ln<xi> above which a trend counts as positive.
pub const TREND_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedTest {
    pub spread: f64,
    pub trend: f64,
    pub pass: bool,
}

/// "Bounded" means: max/min spread <= 10 over the top six octaves of the
/// frequency grid and no positive trend (log-log slope <= 0.05) over the
/// last three octaves. Values must be positive.
pub fn bounded_over_octaves(xi: &[f64], values: &[f64]) -> BoundedTest {
    let xmax = xi.iter().cloned().fold(f64::MIN, f64::max);
    let top: Vec<(f64, f64)> = xi
        .iter()
        .zip(values)
        .filter(|(x, _)| **x >= xmax / 2f64.powf(TOP_OCTAVES) * (1.0 - 1e-12))
        .map(|(x, v)| (*x, *v))
        .collect();
    spread_and_trend(&top, xmax)
}

/// Same test over every supplied point (used when the grid itself spans
/// only the range of interest).
pub fn bounded_over_all(xi: &[f64], values: &[f64]) -> BoundedTest {
    let xmax = xi.iter().cloned().fold(f64::MIN, f64::max);
    let pts: Vec<(f64, f64)> = xi.iter().zip(values).map(|(x, v)| (*x, *v)).collect();
    spread_and_trend(&pts, xmax)
}

fn spread_and_trend(pts: &[(f64, f64)], xmax: f64) -> BoundedTest {
    if pts.is_empty() || pts.iter().any(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return BoundedTest { spread: f64::INFINITY, trend: f64::NAN, pass: false };
    }
    let max = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let min = pts.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let spread = max / min;
    let tail: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(x, _)| *x >= xmax / 2f64.powf(TREND_OCTAVES) * (1.0 - 1e-12))
        .cloned()
        .collect();
    let lx: Vec<f64> = tail.iter().map(|p| crate::japanese(p.0).ln()).collect();
    let ly: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let trend = ols(&lx, &ly).map(|f| f.slope).unwrap_or(0.0);
    BoundedTest {
        spread,
        trend,
        pass: spread <= MAX_SPREAD && trend <= TREND_TOL,
    }
}

/// Dyadic grid `2^lo .. 2^hi`.
pub fn dyadic(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|j| 2f64.powi(j)).collect()
}

/// `n` log-spaced points in `[a, b]`.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && a > 0.0 && b > a);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `n` evenly spaced points in `[a, b]`.
pub fn lin_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}
