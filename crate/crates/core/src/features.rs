//! Filterbank views for the convolutional branch and statistical feature
//! tokens for the attention branch.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::domain::{Matrix, Window};
use crate::error::{invalid, Result};
use crate::filter::{Sos, ZeroPhasePlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterbankSpec {
    pub bands: Vec<(f64, f64)>,
}

impl Default for FilterbankSpec {
    fn default() -> Self {
        Self {
            bands: vec![(0.1, 3.0), (3.0, 10.0), (10.0, 30.0)],
        }
    }
}

impl FilterbankSpec {
    pub fn filters(&self, rate_hz: f64) -> Result<Vec<Sos>> {
        if self.bands.is_empty() {
            return invalid("filterbank needs at least one band");
        }
        self.bands
            .iter()
            .map(|&(lo, hi)| Sos::bandpass(lo, hi, rate_hz))
            .collect()
    }
}

/// Band-passes every channel through every band. Output column `c * B + b`
/// holds channel `c` filtered by band `b`. Each channel has its mean removed
/// first (no band passes DC) and is then filtered forward and backward with
/// least-squares initial states.
pub fn filterbank(samples: &Matrix, spec: &FilterbankSpec, rate_hz: f64) -> Result<Matrix> {
    let filters = spec.filters(rate_hz)?;
    filterbank_with(samples, &filters)
}

pub fn filterbank_with(samples: &Matrix, filters: &[Sos]) -> Result<Matrix> {
    let plans: Vec<ZeroPhasePlan> = filters.iter().map(|f| f.zero_phase_plan(samples.rows())).collect();
    filterbank_planned(samples, &plans)
}

/// Filterbank with initial-state solves already computed for the window length.
pub fn filterbank_planned(samples: &Matrix, plans: &[ZeroPhasePlan]) -> Result<Matrix> {
    if let Some(p) = plans.iter().find(|p| p.len() != samples.rows()) {
        return invalid(format!("filter planned for {} samples, window has {}", p.len(), samples.rows()));
    }
    let mut cols = Vec::with_capacity(samples.cols() * plans.len());
    for c in samples.columns() {
        let m = mean(&c);
        let centered: Vec<f64> = c.iter().map(|v| v - m).collect();
        for p in plans {
            cols.push(p.apply(&centered));
        }
    }
    Matrix::from_columns(&cols)
}

pub const N_TIME_FEATURES: usize = 21;
pub const TIME_FEATURE_NAMES: [&str; N_TIME_FEATURES] = [
    "mean",
    "variance",
    "std",
    "min",
    "max",
    "range",
    "median",
    "q25",
    "q75",
    "iqr",
    "rms",
    "mad",
    "energy",
    "zero_crossing_rate",
    "acf_lag1",
    "acf_lag2",
    "skewness",
    "kurtosis",
    "hjorth_activity",
    "hjorth_mobility",
    "hjorth_complexity",
];
/// Time-feature slots that make up the maskable "shape" group:
/// IQR, median absolute deviation, skewness and kurtosis.
pub const SHAPE_FEATURES: [usize; 4] = [9, 11, 16, 17];
pub const N_FREQ_BASE: usize = 9;

/// Relative tolerance below which a variance counts as zero.
const DEGENERATE_REL: f64 = 1e-12;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance, snapped to exactly zero when it is indistinguishable
/// from rounding noise on the signal's scale.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if v <= (DEGENERATE_REL * scale).powi(2) {
        0.0
    } else {
        v
    }
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    let f = pos - lo as f64;
    s[lo] + (s[hi] - s[lo]) * f
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// The 21 time-domain statistics, in [`TIME_FEATURE_NAMES`] order.
pub fn time_features(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return vec![0.0; N_TIME_FEATURES];
    }
    let nf = n as f64;
    let m = mean(x);
    let var = variance(x);
    let std = var.sqrt();
    let s = sorted(x);
    let (min, max) = (s[0], s[n - 1]);
    let median = quantile_sorted(&s, 0.5);
    let q25 = quantile_sorted(&s, 0.25);
    let q75 = quantile_sorted(&s, 0.75);
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let rms = (energy / nf).sqrt();
    let mad = {
        let dev: Vec<f64> = x.iter().map(|v| (v - median).abs()).collect();
        quantile_sorted(&sorted(&dev), 0.5)
    };
    let zcr = if n > 1 {
        x.windows(2).filter(|w| w[0] * w[1] < 0.0).count() as f64 / (n - 1) as f64
    } else {
        0.0
    };
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let ss: f64 = centered.iter().map(|v| v * v).sum();
    let acf = |lag: usize| -> f64 {
        if var == 0.0 || lag >= n {
            return 0.0;
        }
        let num: f64 = (0..n - lag).map(|i| centered[i] * centered[i + lag]).sum();
        num / ss
    };
    let (skew, kurt) = if var == 0.0 {
        (0.0, 0.0)
    } else {
        let m2 = ss / nf;
        let m3 = centered.iter().map(|v| v.powi(3)).sum::<f64>() / nf;
        let m4 = centered.iter().map(|v| v.powi(4)).sum::<f64>() / nf;
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    let d1 = diff(x);
    let (mobility, complexity) = if var == 0.0 || d1.len() < 2 {
        (0.0, 0.0)
    } else {
        let v1 = variance(&d1);
        let mob = (v1 / var).sqrt();
        let d2 = diff(&d1);
        let cplx = if v1 == 0.0 || d2.is_empty() {
            0.0
        } else {
            let mob_d = (variance(&d2) / v1).sqrt();
            ratio_or_zero(mob_d, mob)
        };
        (mob, cplx)
    };
    vec![
        m,
        var,
        std,
        min,
        max,
        max - min,
        median,
        q25,
        q75,
        q75 - q25,
        rms,
        mad,
        energy,
        zcr,
        acf(1),
        acf(2),
        skew,
        kurt,
        var,
        mobility,
        complexity,
    ]
}

/// Cached FFT plans keyed by length.
pub struct SpectrumPlanner {
    planner: FftPlanner<f64>,
    cache: Vec<(usize, Arc<dyn Fft<f64>>)>,
}

impl Default for SpectrumPlanner {
    fn default() -> Self {
        Self {
            planner: FftPlanner::new(),
            cache: Vec::new(),
        }
    }
}

impl SpectrumPlanner {
    pub fn new() -> Self {
        Self::default()
    }

    fn plan(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        if let Some((_, f)) = self.cache.iter().find(|(k, _)| *k == n) {
            return f.clone();
        }
        let f = self.planner.plan_fft_forward(n);
        self.cache.push((n, f.clone()));
        f
    }

    /// One-sided power `|X_k|^2` of the mean-removed signal for `k = 1..=n/2`.
    pub fn power(&mut self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return Vec::new();
        }
        let m = mean(x);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
        self.plan(n).process(&mut buf);
        buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect()
    }
}

fn normalized(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    if s == 0.0 {
        vec![0.0; p.len()]
    } else {
        p.iter().map(|v| v / s).collect()
    }
}

/// Spectral statistics, `9 + k_top` values: centroid, normalized entropy,
/// half-window flux, peak frequency, low/mid/high band fractions, 85%
/// roll-off, flatness, then the `k_top` strongest bin frequencies.
pub fn freq_features(
    x: &[f64],
    rate_hz: f64,
    k_top: usize,
    bands: &[(f64, f64)],
    planner: &mut SpectrumPlanner,
) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; N_FREQ_BASE + k_top];
    if n < 4 || variance(x) == 0.0 {
        return out;
    }
    let p = planner.power(x);
    let freq = |k: usize| (k + 1) as f64 * rate_hz / n as f64;
    let total: f64 = p.iter().sum();
    if total == 0.0 {
        return out;
    }
    let centroid = p.iter().enumerate().map(|(k, v)| freq(k) * v).sum::<f64>() / total;
    let entropy = if p.len() > 1 {
        -p.iter()
            .map(|v| v / total)
            .filter(|&q| q > 0.0)
            .map(|q| q * q.ln())
            .sum::<f64>()
            / (p.len() as f64).ln()
    } else {
        0.0
    };
    let h = n / 2;
    let flux = {
        let a = normalized(&planner.power(&x[..h]));
        let b = normalized(&planner.power(&x[n - h..]));
        a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
    };
    let peak_k = p
        .iter()
        .enumerate()
        .fold(0, |best, (k, v)| if *v > p[best] { k } else { best });
    let band = |lo: f64, hi: f64| -> f64 {
        p.iter()
            .enumerate()
            .filter(|(k, _)| freq(*k) >= lo && freq(*k) < hi)
            .map(|(_, v)| v)
            .sum::<f64>()
            / total
    };
    let mut cum = 0.0;
    let mut rolloff = freq(p.len() - 1);
    for (k, v) in p.iter().enumerate() {
        cum += v;
        if cum >= 0.85 * total {
            rolloff = freq(k);
            break;
        }
    }
    let flatness = if p.iter().any(|&v| v <= 0.0) {
        0.0
    } else {
        let log_mean = p.iter().map(|v| v.ln()).sum::<f64>() / p.len() as f64;
        log_mean.exp() / (total / p.len() as f64)
    };
    out[0] = centroid;
    out[1] = entropy;
    out[2] = flux;
    out[3] = freq(peak_k);
    for (i, &(lo, hi)) in bands.iter().take(3).enumerate() {
        out[4 + i] = band(lo, hi);
    }
    out[7] = rolloff;
    out[8] = flatness;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    for (slot, &k) in order.iter().take(k_top).enumerate() {
        out[N_FREQ_BASE + slot] = freq(k);
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if variance(a) == 0.0 || variance(b) == 0.0 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    sab / (saa * sbb).sqrt()
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn cosine_centered(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let ua: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let ub: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = ua.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = ub.iter().map(|v| v * v).sum::<f64>().sqrt();
    if variance(a) == 0.0 || variance(b) == 0.0 {
        return 0.0;
    }
    ua.iter().zip(&ub).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn bin_index(v: f64, min: f64, max: f64, bins: usize) -> usize {
    if max <= min {
        return 0;
    }
    (((v - min) / (max - min) * bins as f64).floor() as usize).min(bins - 1)
}

/// Plug-in mutual information (nats) over an equal-width `bins x bins` histogram.
pub fn mutual_information(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let n = a.len();
    if n == 0 || bins == 0 {
        return 0.0;
    }
    let range = |x: &[f64]| x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (amin, amax) = range(a);
    let (bmin, bmax) = range(b);
    let mut joint = vec![0usize; bins * bins];
    for (x, y) in a.iter().zip(b) {
        joint[bin_index(*x, amin, amax, bins) * bins + bin_index(*y, bmin, bmax, bins)] += 1;
    }
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for i in 0..bins {
        for j in 0..bins {
            pa[i] += joint[i * bins + j];
            pb[j] += joint[i * bins + j];
        }
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let pij = c as f64 / nf;
                mi += pij * (pij * nf * nf / (pa[i] as f64 * pb[j] as f64)).ln();
            }
        }
    }
    mi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossFeatures {
    /// Per unordered pair `(i, j)`, `i < j`, in lexicographic order:
    /// Pearson, Spearman, centered cosine, mutual information.
    pub pairs: Vec<((usize, usize), [f64; 4])>,
    /// Explained-variance ratios of the leading `min(C, 3)` principal components.
    pub pca: Vec<f64>,
}

pub fn cross_features(w: &Matrix, mi_bins: usize) -> Result<CrossFeatures> {
    let c = w.cols();
    if c < 2 {
        return invalid(format!("cross-channel features need at least 2 channels, got {c}"));
    }
    let cols = w.columns();
    let ranks: Vec<Vec<f64>> = cols.iter().map(|x| average_ranks(x)).collect();
    let mut pairs = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            pairs.push((
                (i, j),
                [
                    pearson(&cols[i], &cols[j]),
                    pearson(&ranks[i], &ranks[j]),
                    cosine_centered(&cols[i], &cols[j]),
                    mutual_information(&cols[i], &cols[j], mi_bins),
                ],
            ));
        }
    }
    Ok(CrossFeatures {
        pairs,
        pca: pca_ratios(&cols, c.min(3)),
    })
}

/// Leading explained-variance ratios of the population covariance matrix.
pub fn pca_ratios(cols: &[Vec<f64>], k: usize) -> Vec<f64> {
    let c = cols.len();
    let n = cols.first().map_or(0, |x| x.len());
    if n == 0 {
        return vec![0.0; k];
    }
    let means: Vec<f64> = cols.iter().map(|x| mean(x)).collect();
    let cov = DMatrix::from_fn(c, c, |i, j| {
        cols[i]
            .iter()
            .zip(&cols[j])
            .map(|(a, b)| (a - means[i]) * (b - means[j]))
            .sum::<f64>()
            / n as f64
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if total == 0.0 {
        return vec![0.0; k];
    }
    eig.iter().take(k).map(|v| v / total).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureMasks {
    pub time: bool,
    pub frequency: bool,
    pub cross: bool,
    pub shape: bool,
}

impl FeatureMasks {
    pub const NONE: FeatureMasks = FeatureMasks {
        time: false,
        frequency: false,
        cross: false,
        shape: false,
    };

    pub fn all() -> Self {
        Self {
            time: true,
            frequency: true,
            cross: true,
            shape: true,
        }
    }

    /// Parses one group name and sets it.
    pub fn set(&mut self, group: &str) -> Result<()> {
        match group {
            "time" => self.time = true,
            "frequency" | "freq" => self.frequency = true,
            "cross" => self.cross = true,
            "shape" => self.shape = true,
            other => return invalid(format!("unknown feature group {other:?}")),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenGroup {
    Time,
    Frequency,
    Cross,
    Pca,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub group: TokenGroup,
    /// Channel index, channel pair, or all channels for the PCA token.
    pub source: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTokenSequence {
    pub tokens: Vec<Token>,
    pub masks: FeatureMasks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub k_top: usize,
    pub mi_bins: usize,
    pub filterbank: FilterbankSpec,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k_top: 3,
            mi_bins: 8,
            filterbank: FilterbankSpec::default(),
        }
    }
}

impl FeatureConfig {
    pub fn freq_len(&self) -> usize {
        N_FREQ_BASE + self.k_top
    }
}

/// Number of tokens produced for `c` channels: `c` time, `c` frequency,
/// `c(c-1)/2` cross and one PCA token.
pub fn token_count(c: usize) -> usize {
    2 * c + c * (c.saturating_sub(1)) / 2 + 1
}

/// Builds the fixed-order token sequence: time tokens by channel, frequency
/// tokens by channel, cross tokens by lexicographic pair, then PCA. Masked
/// groups keep their slots with every value set to zero.
pub fn tokenize(
    window: &Window,
    cfg: &FeatureConfig,
    masks: FeatureMasks,
    rate_hz: f64,
    planner: &mut SpectrumPlanner,
) -> Result<FeatureTokenSequence> {
    let cols = window.samples.columns();
    let c = cols.len();
    let mut tokens = Vec::with_capacity(token_count(c));
    for (ch, x) in cols.iter().enumerate() {
        let mut v = if masks.time {
            vec![0.0; N_TIME_FEATURES]
        } else {
            time_features(x)
        };
        if masks.shape {
            for &i in &SHAPE_FEATURES {
                v[i] = 0.0;
            }
        }
        tokens.push(Token {
            group: TokenGroup::Time,
            source: vec![ch],
            values: v,
        });
    }
    for (ch, x) in cols.iter().enumerate() {
        let values = if masks.frequency {
            vec![0.0; cfg.freq_len()]
        } else {
            freq_features(x, rate_hz, cfg.k_top, &cfg.filterbank.bands, planner)
        };
        tokens.push(Token {
            group: TokenGroup::Frequency,
            source: vec![ch],
            values,
        });
    }
    let cross = cross_features(&window.samples, cfg.mi_bins)?;
    for ((i, j), v) in cross.pairs {
        tokens.push(Token {
            group: TokenGroup::Cross,
            source: vec![i, j],
            values: if masks.cross { vec![0.0; 4] } else { v.to_vec() },
        });
    }
    let pca_len = c.min(3);
    tokens.push(Token {
        group: TokenGroup::Pca,
        source: (0..c).collect(),
        values: if masks.cross { vec![0.0; pca_len] } else { cross.pca },
    });
    Ok(FeatureTokenSequence { tokens, masks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_signal_conventions() {
        let f = time_features(&[2.5; 50]);
        assert_eq!(f[0], 2.5);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[5], 0.0);
        assert_eq!(f[13], 0.0);
        assert_eq!(f[12], 50.0 * 6.25);
        for i in [14, 15, 16, 17, 19, 20] {
            assert_eq!(f[i], 0.0, "{}", TIME_FEATURE_NAMES[i]);
        }
    }

    #[test]
    fn alternating_signal() {
        let x: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let f = time_features(&x);
        assert_eq!(f[13], 1.0);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[10], 1.0);
    }

    #[test]
    fn zero_signal_has_zero_spectrum_features() {
        let mut p = SpectrumPlanner::new();
        let f = freq_features(&[0.0; 64], 100.0, 3, &FilterbankSpec::default().bands, &mut p);
        assert_eq!(f, vec![0.0; 12]);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn token_counts() {
        assert_eq!(token_count(6), 28);
        assert_eq!(token_count(7), 36);
    }

    #[test]
    fn unknown_mask_is_rejected() {
        let mut m = FeatureMasks::default();
        assert!(m.set("spectral").is_err());
        m.set("freq").unwrap();
        assert!(m.frequency);
    }
}
