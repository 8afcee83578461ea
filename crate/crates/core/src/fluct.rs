//! Fluctuation statistics of scattering signals: histograms and
//! distribution tests, the energy autocorrelation of a cross section and its
//! Lorentzian fit, and decay fits of survival probabilities.

use std::f64::consts::SQRT_2;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` uniform edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Probability density, integrates to one.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn finite_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    Ok(())
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let x = p * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (x - i as f64) * (sorted[j] - sorted[i])
}

/// Freedman-Diaconis bin count, `ceil(range / (2 IQR n^(-1/3)))`, at least 1.
pub fn freedman_diaconis_bins(samples: &[f64]) -> Result<usize> {
    finite_samples(samples)?;
    let s = sorted(samples);
    let range = s[s.len() - 1] - s[0];
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    if range == 0.0 || iqr == 0.0 {
        return Ok(1);
    }
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    Ok(((range / width).ceil() as usize).clamp(1, 100_000))
}

/// Uniform histogram over `[min, max]` of the samples; `bins = None` picks
/// the Freedman-Diaconis count.
pub fn histogram(samples: &[f64], bins: Option<usize>) -> Result<Histogram> {
    finite_samples(samples)?;
    let bins = match bins {
        Some(0) => return Err(Error::InvalidParameter("bin count must be at least 1".into())),
        Some(b) => b,
        None => freedman_diaconis_bins(samples)?,
    };
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    histogram_range(samples, bins, lo, hi)
}

/// Uniform histogram over `[lo, hi]`; samples outside are ignored and the
/// density is normalised over the samples that fall inside.
pub fn histogram_range(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::InvalidParameter(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        if x >= lo && x <= hi {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InsufficientData("no samples inside the histogram range".into()));
    }
    let density = counts.iter().map(|&c| c as f64 / (total as f64 * width)).collect();
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    Ok(Histogram { edges, counts, density })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    /// Non-excess kurtosis, 3 for a Gaussian.
    pub kurtosis: f64,
}

pub fn moments(samples: &[f64]) -> Result<Moments> {
    finite_samples(samples)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let kurtosis = if variance > 0.0 { m4 / (variance * variance) } else { f64::NAN };
    Ok(Moments { count: samples.len(), mean, variance, kurtosis })
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub count: usize,
    /// Asymptotic p-value with the Stephens small-sample correction.
    pub p_value: f64,
    /// Asymptotic 1% critical value `1.628 / sqrt(n)`.
    pub critical_1pct: f64,
}

impl KsTest {
    pub fn passes_1pct(&self) -> bool {
        self.statistic < self.critical_1pct
    }
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsTest> {
    finite_samples(samples)?;
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    let p_value = kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d);
    Ok(KsTest { statistic: d, count: s.len(), p_value, critical_1pct: 1.628 / sn })
}

pub fn ks_standard_normal(samples: &[f64]) -> Result<KsTest> {
    ks_test(samples, standard_normal_cdf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialTest {
    /// Slope of `ln P(x)` against `x`; `-1` for `P(x) = exp(-x)`.
    pub slope: f64,
    pub intercept: f64,
    /// Weighted coefficient of determination of the log-linear fit.
    pub r_squared: f64,
    pub bins_used: usize,
    pub histogram: Histogram,
}

/// Weighted least-squares line `y = a + b x`; returns `(a, b, r^2)`.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for ((x, y), w) in x.iter().zip(y).zip(w) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
        syy += w * (y - my) * (y - my);
    }
    let b = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (my - b * mx, b, r2)
}

/// Fit `ln P(x)` of normalised samples (mean one) by a straight line.
///
/// The histogram runs from 0 to the 99.9% quantile with Freedman-Diaconis
/// bins; bins with fewer than `min_count` entries are left out and the rest
/// are weighted by their count (the inverse variance of `ln count`).
pub fn exponential_test(samples: &[f64], min_count: u64) -> Result<ExponentialTest> {
    if samples.len() <= 100 {
        return Err(Error::InsufficientData(format!("exponential test needs more than 100 samples, got {}", samples.len())));
    }
    let m = moments(samples)?;
    if !(m.variance > 0.0) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    if samples.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParameter("normalised cross sections must be non-negative".into()));
    }
    let s = sorted(samples);
    let hi = quantile(&s, 0.999);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let bins = ((hi * (s.len() as f64).cbrt() / (2.0 * iqr)).ceil() as usize).clamp(2, 10_000);
    let histogram = histogram_range(samples, bins, 0.0, hi)?;
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for ((c, &count), &d) in histogram.centers().iter().zip(&histogram.counts).zip(&histogram.density) {
        if count >= min_count.max(1) {
            x.push(*c);
            y.push(d.ln());
            w.push(count as f64);
        }
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("only {} populated bins for the log-density fit", x.len())));
    }
    let (intercept, slope, r_squared) = weighted_line(&x, &y, &w);
    Ok(ExponentialTest { slope, intercept, r_squared, bins_used: x.len(), histogram })
}

/// Centred moving average over `2 * half + 1` points, clipped at the ends.
pub fn moving_average(series: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = vec![0.0; series.len() + 1];
    for (i, x) in series.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    (0..series.len())
        .map(|i| {
            let (a, b) = (i.saturating_sub(half), (i + half + 1).min(series.len()));
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// `sigma / sigma_bar` with `sigma_bar` the centred moving average. Points
/// with a vanishing local mean are skipped.
pub fn normalize_by_local_mean(series: &[f64], half: usize) -> Vec<f64> {
    series
        .iter()
        .zip(moving_average(series, half))
        .filter(|&(_, m)| m > 0.0)
        .map(|(x, m)| x / m)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    /// Grid spacing of the series.
    pub step: f64,
    /// Indices of the averaging window.
    pub window: Range<usize>,
    /// Window mean of the series.
    pub mean: f64,
    /// Lags `k * step`, `k = 0..=max_lag`.
    pub lags: Vec<f64>,
    pub raw: Vec<f64>,
    /// `raw / raw[0]`, all zeros for a constant series.
    pub normalized: Vec<f64>,
}

impl Autocorrelation {
    /// Lags and values mirrored to `-max..=max`.
    pub fn symmetric(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.lags.len();
        let lags = (1..k).rev().map(|i| -self.lags[i]).chain(self.lags.iter().cloned()).collect();
        let vals = (1..k).rev().map(|i| self.raw[i]).chain(self.raw.iter().cloned()).collect();
        (lags, vals)
    }
}

/// Discrete energy autocorrelation
/// `C(k) = 1/M sum_{i in window} (s[i+k] - s_bar)(s[i] - s_bar)`
/// with `s_bar` the mean over the `M`-point window, so that `C(0)` is the
/// window variance. Lags reach past the window end into the series.
pub fn autocorrelation(series: &[f64], step: f64, window: Range<usize>, max_lag: usize) -> Result<Autocorrelation> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid step must be positive, got {step}")));
    }
    if window.len() < 2 {
        return Err(Error::InsufficientData("autocorrelation window needs at least 2 points".into()));
    }
    if window.end + max_lag > series.len() {
        return Err(Error::WindowTooLarge { window: window.end + max_lag, extent: series.len() });
    }
    if 4 * max_lag >= window.len() {
        return Err(Error::InvalidParameter(format!("max lag {max_lag} must be below a quarter of the window ({})", window.len())));
    }
    let m = window.len() as f64;
    let mean = series[window.clone()].iter().sum::<f64>() / m;
    let raw: Vec<f64> = (0..=max_lag)
        .map(|k| window.clone().map(|i| (series[i + k] - mean) * (series[i] - mean)).sum::<f64>() / m)
        .collect();
    let normalized = if raw[0] > 0.0 { raw.iter().map(|c| c / raw[0]).collect() } else { vec![0.0; raw.len()] };
    let lags = (0..=max_lag).map(|k| k as f64 * step).collect();
    Ok(Autocorrelation { step, window, mean, lags, raw, normalized })
}

/// Point-wise mean of the normalised autocorrelations of several series
/// sharing one lag grid.
pub fn mean_normalized(results: &[Autocorrelation]) -> Result<Vec<f64>> {
    let first = results.first().ok_or_else(|| Error::InsufficientData("no autocorrelations to average".into()))?;
    let k = first.normalized.len();
    if results.iter().any(|r| r.normalized.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: results.iter().map(|r| r.normalized.len()).max().unwrap_or(0) });
    }
    Ok((0..k).map(|i| results.iter().map(|r| r.normalized[i]).sum::<f64>() / results.len() as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitQuality {
    Good,
    /// Relative residual above the threshold.
    PoorResidual,
    /// Width below two lag steps, the grid does not resolve it.
    Unresolved,
    /// Optimum sits on the edge of the search grid.
    GridBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// Half width at half maximum, in lag units.
    pub gamma: f64,
    pub amplitude: f64,
    /// `|y - fit|_2 / |y|_2` over the fitted lags.
    pub residual: f64,
    /// Largest lag included in the fit.
    pub max_lag: f64,
    pub quality: FitQuality,
}

impl LorentzianFit {
    pub fn is_good(&self) -> bool {
        self.quality == FitQuality::Good
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianOptions {
    /// Fit lags up to this many half-widths of the initial estimate.
    pub lag_cutoff: f64,
    pub residual_threshold: f64,
    pub grid_points: usize,
    /// Length of the window whose mean was subtracted before correlating.
    /// Subtracting a finite-window mean lowers a Lorentzian of area
    /// `pi A Gamma` by the constant `pi A Gamma / window`; when set, the
    /// model carries that offset.
    pub mean_window: Option<f64>,
}

impl Default for LorentzianOptions {
    fn default() -> Self {
        Self { lag_cutoff: 10.0, residual_threshold: 0.1, grid_points: 200, mean_window: None }
    }
}

fn lorentz_shape(eps: f64, gamma: f64, offset: f64) -> f64 {
    gamma * gamma / (eps * eps + gamma * gamma) - offset
}

/// Profile over `gamma`: best amplitude and squared residual.
fn lorentz_profile(lags: &[f64], values: &[f64], gamma: f64, window: Option<f64>) -> (f64, f64) {
    let offset = window.map_or(0.0, |w| std::f64::consts::PI * gamma / w);
    let (mut yf, mut ff) = (0.0, 0.0);
    for (e, y) in lags.iter().zip(values) {
        let f = lorentz_shape(*e, gamma, offset);
        yf += y * f;
        ff += f * f;
    }
    let a = yf / ff;
    let r: f64 = lags.iter().zip(values).map(|(e, y)| (y - a * lorentz_shape(*e, gamma, offset)).powi(2)).sum();
    (a, r)
}

/// Least-squares fit of `A Gamma^2 / (eps^2 + Gamma^2)` to an autocorrelation
/// on non-negative, increasing lags starting at zero.
///
/// The lag range is cut at `lag_cutoff` times the half width read off where
/// the data first fall to half of `values[0]`. `Gamma` is searched on a
/// log grid spanning a factor 100 on either side of that estimate (never
/// below half a lag step), then refined by golden section; the amplitude
/// is solved in closed form at every trial width.
pub fn lorentzian_fit(lags: &[f64], values: &[f64], options: &LorentzianOptions) -> Result<LorentzianFit> {
    if lags.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: lags.len(), got: values.len() });
    }
    if lags.len() < 3 || lags[0] != 0.0 || lags.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("lags must start at 0, increase, and hold at least 3 points".into()));
    }
    if let Some(w) = options.mean_window {
        if !(w > 0.0) {
            return Err(Error::InvalidParameter(format!("mean window must be positive, got {w}")));
        }
    }
    if !(values[0] > 0.0) {
        return Err(Error::InvalidParameter(format!("C(0) must be positive, got {}", values[0])));
    }
    let step = lags[1];
    let half = 0.5 * values[0];
    let hwhm = match values.iter().position(|&v| v <= half) {
        Some(i) => lags[i - 1] + (lags[i] - lags[i - 1]) * (values[i - 1] - half) / (values[i - 1] - values[i]),
        None => lags[lags.len() - 1],
    };
    let cutoff = options.lag_cutoff * hwhm;
    let n = lags.iter().take_while(|&&e| e <= cutoff).count().max(3).min(lags.len());
    let (x, y) = (&lags[..n], &values[..n]);

    let lo = (hwhm / 100.0).max(0.5 * step);
    let hi = (hwhm * 100.0).max(2.0 * lo);
    let k = options.grid_points.max(3);
    let grid: Vec<f64> = (0..k).map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (k - 1) as f64).exp()).collect();
    let scores: Vec<f64> = grid.iter().map(|&g| lorentz_profile(x, y, g, options.mean_window).1).collect();
    let best = (0..k).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });

    let (mut a, mut b) = (grid[best.saturating_sub(1)].ln(), grid[(best + 1).min(k - 1)].ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |lg: f64| lorentz_profile(x, y, lg.exp(), options.mean_window).1;
    let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let gamma = (0.5 * (a + b)).exp();
    let (amplitude, sq) = lorentz_profile(x, y, gamma, options.mean_window);
    let norm: f64 = y.iter().map(|v| v * v).sum();
    let residual = (sq / norm).sqrt();

    let quality = if best == 0 || best == k - 1 {
        FitQuality::GridBoundary
    } else if gamma < 2.0 * step {
        FitQuality::Unresolved
    } else if residual > options.residual_threshold {
        FitQuality::PoorResidual
    } else {
        FitQuality::Good
    };
    Ok(LorentzianFit { gamma, amplitude, residual, max_lag: x[n - 1], quality })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub beta: f64,
    /// `ln P` at `t = 0` of the fitted line.
    pub intercept: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// RMS deviation of `ln P` from the line.
    pub residual: f64,
    pub points: usize,
}

/// Fit `P(t) = exp(intercept - beta t)` by linear regression of `ln P` on the
/// samples from the first time `P <= upper` up to the first time `P < lower`.
pub fn exponential_decay_fit(times: &[f64], p: &[f64], lower: f64, upper: f64) -> Result<DecayFit> {
    if times.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: p.len() });
    }
    if !(0.0 < lower && lower < upper) {
        return Err(Error::InvalidParameter(format!("decay window needs 0 < lower < upper, got [{lower}, {upper}]")));
    }
    let start = p
        .iter()
        .position(|&v| v <= upper)
        .ok_or_else(|| Error::EmptyFitWindow(format!("P never drops to {upper}")))?;
    let end = p[start..].iter().position(|&v| v < lower).map_or(p.len(), |i| start + i);
    if end - start < 2 {
        return Err(Error::EmptyFitWindow(format!("fewer than two samples with P in [{lower}, {upper}]")));
    }
    let (t, lp): (Vec<f64>, Vec<f64>) = (start..end).map(|i| (times[i], p[i].ln())).unzip();
    let w = vec![1.0; t.len()];
    let (intercept, slope, _) = weighted_line(&t, &lp, &w);
    let residual = (t.iter().zip(&lp).map(|(t, l)| (l - intercept - slope * t).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
    Ok(DecayFit { beta: -slope, intercept, t_start: t[0], t_end: t[t.len() - 1], residual, points: t.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalAutocorr {
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    /// Set when the series has not decayed below `1e-3 P(0)` at its end.
    pub insufficient_decay: bool,
}

/// `|int dt P(t) exp(i eps t)|^2` for `P` sampled every `dt` from `t = 0`.
///
/// `P` is interpolated linearly between samples and each segment is
/// integrated exactly against the phase factor.
pub fn classical_autocorr(p: &[f64], dt: f64, eps: &[f64]) -> Result<ClassicalAutocorr> {
    if p.len() < 2 {
        return Err(Error::InsufficientData("need at least two samples of P(t)".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let values = eps
        .iter()
        .map(|&e| {
            let x = e * dt;
            // weights of P_k and P_{k+1} over one segment, times exp(-i e t_k)
            let i = Complex64::i();
            let (w0, w1) = if x.abs() < 1e-4 {
                (0.5 + i * x / 6.0 - x * x / 24.0, 0.5 + i * x / 3.0 - x * x / 8.0)
            } else {
                let ph = (i * x).exp();
                let total = (ph - 1.0) / (i * x);
                let w1 = ph / (i * x) + (ph - 1.0) / (x * x);
                (total - w1, w1)
            };
            let step = Complex64::new(0.0, x).exp();
            let mut phase = Complex64::new(1.0, 0.0);
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..p.len() - 1 {
                acc += phase * (w0 * p[k] + w1 * p[k + 1]);
                phase *= step;
            }
            (acc * dt).norm_sqr()
        })
        .collect();
    let insufficient_decay = p[p.len() - 1].abs() >= 1e-3 * p[0].abs();
    Ok(ClassicalAutocorr { eps: eps.to_vec(), values, insufficient_decay })
}
