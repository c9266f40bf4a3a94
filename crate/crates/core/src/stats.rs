//! Ensemble statistics for avalanches and quakes: log-binned histograms,
//! discrete power-law MLE and a criticality report.
//!
//! Every reduction here runs over value counts in ascending order, so results
//! are bitwise invariant under any reordering of the input.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::event::CascadeEvent;

/// Smallest tail the estimator will report on.
pub const MIN_TAIL: usize = 50;
/// Smallest ensemble accepted by [`criticality_report`].
pub const MIN_REPORT_EVENTS: usize = 10_000;
/// Bins with fewer samples than this are left out of shape diagnostics
/// (monotonicity, slope); they are still part of the histogram.
pub const MIN_RESOLVED_COUNT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSource {
    pub model: String,
    pub config: String,
    pub seed: u64,
}

/// Sizes, durations and (for quakes) moments of non-empty events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnsemble {
    pub sizes: Vec<u64>,
    pub moments: Option<Vec<f64>>,
    pub durations: Vec<u64>,
    pub source: EnsembleSource,
}

impl EventEnsemble {
    pub fn new(
        sizes: Vec<u64>,
        moments: Option<Vec<f64>>,
        durations: Vec<u64>,
        source: EnsembleSource,
    ) -> Result<Self, StatsError> {
        if sizes.len() != durations.len() || moments.as_ref().is_some_and(|m| m.len() != sizes.len()) {
            return Err(StatsError::Domain("ensemble columns differ in length".into()));
        }
        if sizes.contains(&0) || durations.contains(&0) {
            return Err(StatsError::Domain("ensemble entries must be at least 1".into()));
        }
        if let Some(m) = &moments {
            if m.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(StatsError::Domain("moments must be positive and finite".into()));
            }
        }
        Ok(Self {
            sizes,
            moments,
            durations,
            source,
        })
    }

    /// Collects the non-empty events. Moments are kept only if every kept event has one.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a CascadeEvent>, source: EnsembleSource) -> Self {
        let mut sizes = Vec::new();
        let mut durations = Vec::new();
        let mut moments = Vec::new();
        let mut all_moments = true;
        for ev in events.into_iter().filter(|e| e.size > 0) {
            sizes.push(ev.size);
            durations.push(ev.duration);
            match ev.moment {
                Some(m) => moments.push(m),
                None => all_moments = false,
            }
        }
        let moments = (all_moments && !sizes.is_empty()).then_some(moments);
        Self {
            sizes,
            moments,
            durations,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Geometric mean of the smallest and largest integer in the bin.
    pub center: f64,
    pub density: f64,
    pub count: u64,
    /// Smallest integer in the bin.
    pub lo: u64,
    /// One past the largest integer in the bin.
    pub hi: u64,
}

impl HistogramBin {
    /// Number of integers covered.
    pub fn width(&self) -> u64 {
        self.hi - self.lo
    }
}

fn counts(sizes: &[u64]) -> BTreeMap<u64, u64> {
    let mut map = BTreeMap::new();
    for &s in sizes {
        *map.entry(s).or_insert(0) += 1;
    }
    map
}

/// Lower integer edge of geometric bin `k`: the smallest integer `>= 10^(k/b)`.
fn bin_edge(k: u32, bins_per_decade: u32) -> u64 {
    let edge = libm::pow(10.0, f64::from(k) / f64::from(bins_per_decade));
    let mut e = libm::ceil(edge) as u64;
    // Exact decade edges must land on the decade itself.
    if k.is_multiple_of(bins_per_decade) {
        e = 10u64.pow(k / bins_per_decade);
    }
    e.max(1)
}

/// Log-binned histogram of positive integer sizes.
///
/// Bins are geometric with `bins_per_decade` bins per factor of ten, starting
/// at 1. Because sizes are integers, each bin's width is the number of
/// integers it covers and bins covering no integer or no sample are omitted.
/// Densities are normalized so that `sum(density * width) = 1`.
pub fn log_binned_histogram(sizes: &[u64], bins_per_decade: u32) -> Result<Vec<HistogramBin>, StatsError> {
    if sizes.is_empty() {
        return Err(StatsError::Domain("cannot bin an empty sample".into()));
    }
    if bins_per_decade == 0 {
        return Err(StatsError::Domain("need at least one bin per decade".into()));
    }
    if sizes.contains(&0) {
        return Err(StatsError::Domain("sizes must be at least 1".into()));
    }
    let total = sizes.len() as f64;
    let mut bins = Vec::new();
    let mut values = counts(sizes).into_iter().peekable();
    let mut k = 0u32;
    while let Some(&(first, _)) = values.peek() {
        let (lo, hi) = (bin_edge(k, bins_per_decade), bin_edge(k + 1, bins_per_decade));
        k += 1;
        if hi <= lo || first >= hi {
            continue;
        }
        let mut count = 0;
        while let Some(&(v, c)) = values.peek() {
            if v >= hi {
                break;
            }
            count += c;
            values.next();
        }
        if count > 0 {
            bins.push(HistogramBin {
                center: ((lo as f64) * ((hi - 1) as f64)).sqrt(),
                density: count as f64 / (total * (hi - lo) as f64),
                count,
                lo,
                hi,
            });
        }
    }
    Ok(bins)
}

/// Least-squares slope of `log10(density)` against `log10(center)` over bins
/// holding at least `min_count` samples. `None` with fewer than two such bins.
pub fn loglog_slope(bins: &[HistogramBin], min_count: u64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = bins
        .iter()
        .filter(|b| b.count >= min_count)
        .map(|b| (libm::log10(b.center), libm::log10(b.density)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// True when density strictly decreases across all bins holding at least `min_count` samples.
pub fn is_strictly_decreasing(bins: &[HistogramBin], min_count: u64) -> bool {
    let resolved: Vec<f64> = bins.iter().filter(|b| b.count >= min_count).map(|b| b.density).collect();
    resolved.windows(2).all(|w| w[1] < w[0])
}

/// Number of decades between the smallest and largest size.
pub fn decades_spanned(sizes: &[u64]) -> f64 {
    match (sizes.iter().min(), sizes.iter().max()) {
        (Some(&lo), Some(&hi)) if lo > 0 => libm::log10(hi as f64 / lo as f64),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub tau_hat: f64,
    pub s_min: u64,
    pub n_tail: usize,
    pub stderr: f64,
}

/// Discrete power-law MLE over the tail `s >= s_min`:
/// `tau = 1 + n / sum(ln(s / (s_min - 1/2)))`, with standard error `(tau - 1) / sqrt(n)`.
pub fn fit_power_law(sizes: &[u64], s_min: u64) -> Result<PowerLawFit, StatsError> {
    if s_min == 0 {
        return Err(StatsError::Domain("s_min must be at least 1".into()));
    }
    let tail: BTreeMap<u64, u64> = counts(sizes).into_iter().filter(|&(s, _)| s >= s_min).collect();
    let n_tail: u64 = tail.values().sum();
    if (n_tail as usize) < MIN_TAIL {
        return Err(StatsError::Estimation(format!(
            "only {n_tail} samples at or above s_min = {s_min}, need {MIN_TAIL}"
        )));
    }
    if tail.len() < 2 {
        return Err(StatsError::Estimation(format!(
            "every tail sample equals {}; the exponent is not identifiable",
            tail.keys().next().copied().unwrap_or(s_min)
        )));
    }
    let shift = s_min as f64 - 0.5;
    let denom: f64 = tail.iter().map(|(&s, &c)| c as f64 * libm::log(s as f64 / shift)).sum();
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(StatsError::Estimation("log-likelihood denominator is not positive".into()));
    }
    let tau_hat = 1.0 + n_tail as f64 / denom;
    Ok(PowerLawFit {
        tau_hat,
        s_min,
        n_tail: n_tail as usize,
        stderr: (tau_hat - 1.0) / (n_tail as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub source: EnsembleSource,
    pub n_events: usize,
    pub min_size: u64,
    pub max_size: u64,
    pub mean_size: f64,
    pub decades: f64,
    pub fit: PowerLawFit,
    pub bins_per_decade: u32,
    /// Least-squares log-log slope over resolved bins.
    pub histogram_slope: Option<f64>,
    /// Density strictly decreases over resolved bins.
    pub histogram_decreasing: bool,
    pub histogram: Vec<HistogramBin>,
}

impl CriticalityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `bin_center,density` rows under a header line.
    pub fn histogram_csv(&self) -> String {
        histogram_csv(&self.histogram)
    }
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_center,density\n");
    for b in bins {
        let _ = writeln!(out, "{},{}", b.center, b.density);
    }
    out
}

pub fn criticality_report(
    ensemble: &EventEnsemble,
    s_min: u64,
    bins_per_decade: u32,
) -> Result<CriticalityReport, StatsError> {
    let n = ensemble.len();
    if n < MIN_REPORT_EVENTS {
        return Err(StatsError::Estimation(format!(
            "{n} events is too few for a criticality report, need {MIN_REPORT_EVENTS}"
        )));
    }
    let sizes = &ensemble.sizes;
    let histogram = log_binned_histogram(sizes, bins_per_decade)?;
    let fit = fit_power_law(sizes, s_min)?;
    let total: f64 = counts(sizes).iter().map(|(&s, &c)| (s * c) as f64).sum();
    Ok(CriticalityReport {
        source: ensemble.source.clone(),
        n_events: n,
        min_size: sizes.iter().copied().min().unwrap_or(0),
        max_size: sizes.iter().copied().max().unwrap_or(0),
        mean_size: total / n as f64,
        decades: decades_spanned(sizes),
        fit,
        bins_per_decade,
        histogram_slope: loglog_slope(&histogram, MIN_RESOLVED_COUNT),
        histogram_decreasing: is_strictly_decreasing(&histogram, MIN_RESOLVED_COUNT),
        histogram,
    })
}
