//! From-definition references for the window statistics.

use std::f64::consts::PI;

pub fn mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

pub fn central_moment(x: &[f64], p: i32) -> f64 {
    let m = mean(x);
    let mut s = 0.0;
    for v in x {
        s += (v - m).powi(p);
    }
    s / x.len() as f64
}

fn insertion_sorted(x: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in x {
        let pos = out.iter().position(|&u| u > v).unwrap_or(out.len());
        out.insert(pos, v);
    }
    out
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let s = insertion_sorted(x);
    let h = (s.len() as f64 - 1.0) * q;
    let below = h.floor();
    let i = below as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] * (1.0 - (h - below)) + s[i + 1] * (h - below)
}

fn acf(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let num: f64 = (lag..x.len()).map(|t| (x[t] - m) * (x[t - lag] - m)).sum();
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    num / den
}

fn first_difference(x: &[f64]) -> Vec<f64> {
    (1..x.len()).map(|i| x[i] - x[i - 1]).collect()
}

pub fn time(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let var = central_moment(x, 2);
    let mn = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let med = quantile(x, 0.5);
    let abs_dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let mut crossings = 0.0;
    for i in 1..x.len() {
        if (x[i] > 0.0 && x[i - 1] < 0.0) || (x[i] < 0.0 && x[i - 1] > 0.0) {
            crossings += 1.0;
        }
    }
    let d1 = first_difference(x);
    let d2 = first_difference(&d1);
    let mob = (central_moment(&d1, 2) / var).sqrt();
    let mob_d = (central_moment(&d2, 2) / central_moment(&d1, 2)).sqrt();
    vec![
        mean(x),
        var,
        var.sqrt(),
        mn,
        mx,
        mx - mn,
        med,
        quantile(x, 0.25),
        quantile(x, 0.75),
        quantile(x, 0.75) - quantile(x, 0.25),
        (energy / n).sqrt(),
        quantile(&abs_dev, 0.5),
        energy,
        crossings / (n - 1.0),
        acf(x, 1),
        acf(x, 2),
        central_moment(x, 3) / var.powf(1.5),
        central_moment(x, 4) / (var * var) - 3.0,
        var,
        mob,
        mob_d / mob,
    ]
}

/// Naive one-sided power spectrum, bins 1..=n/2 of the mean-removed signal.
pub fn power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += (v - m) * ang.cos();
                im += (v - m) * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

pub fn freq(x: &[f64], rate: f64, k_top: usize, bands: &[(f64, f64)]) -> Vec<f64> {
    let n = x.len();
    let p = power(x);
    let f: Vec<f64> = (1..=n / 2).map(|k| k as f64 * rate / n as f64).collect();
    let total: f64 = p.iter().sum();
    let pn: Vec<f64> = p.iter().map(|v| v / total).collect();
    let mut out = Vec::new();
    out.push(f.iter().zip(&pn).map(|(a, b)| a * b).sum());
    out.push(-pn.iter().map(|q| if *q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>() / (p.len() as f64).ln());
    let norm = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|u| u / s).collect::<Vec<_>>()
    };
    let a = norm(power(&x[..n / 2]));
    let b = norm(power(&x[n - n / 2..]));
    out.push(a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt());
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    out.push(f[best]);
    for &(lo, hi) in bands {
        let mut e = 0.0;
        for k in 0..p.len() {
            if f[k] >= lo && f[k] < hi {
                e += pn[k];
            }
        }
        out.push(e);
    }
    let mut acc = 0.0;
    let mut roll = f[f.len() - 1];
    for k in 0..p.len() {
        acc += pn[k];
        if acc >= 0.85 {
            roll = f[k];
            break;
        }
    }
    out.push(roll);
    let geo = p.iter().map(|v| v.ln()).sum::<f64>() / p.len() as f64;
    out.push(geo.exp() / (total / p.len() as f64));
    let mut used = vec![false; p.len()];
    for _ in 0..k_top {
        let mut pick = None;
        for k in 0..p.len() {
            if !used[k] && pick.is_none_or(|j: usize| p[k] > p[j]) {
                pick = Some(k);
            }
        }
        match pick {
            Some(k) => {
                used[k] = true;
                out.push(f[k]);
            }
            None => out.push(0.0),
        }
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / va.sqrt() / vb.sqrt()
}

/// Rank = 1 + (#strictly smaller) + (#equal others) / 2.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let eq = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let na = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let width = (hi - lo) / bins as f64;
    let mut b = 0;
    while b + 1 < bins && v >= lo + (b + 1) as f64 * width {
        b += 1;
    }
    b
}

pub fn mi(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let n = a.len() as f64;
    let (alo, ahi) = (a.iter().cloned().fold(f64::INFINITY, f64::min), a.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (blo, bhi) = (b.iter().cloned().fold(f64::INFINITY, f64::min), b.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let ia: Vec<usize> = a.iter().map(|&v| bin_of(v, alo, ahi, bins)).collect();
    let ib: Vec<usize> = b.iter().map(|&v| bin_of(v, blo, bhi, bins)).collect();
    let mut total = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let nij = ia.iter().zip(&ib).filter(|(x, y)| **x == i && **y == j).count() as f64;
            if nij == 0.0 {
                continue;
            }
            let ni = ia.iter().filter(|x| **x == i).count() as f64;
            let nj = ib.iter().filter(|y| **y == j).count() as f64;
            total += nij / n * ((nij / n) / ((ni / n) * (nj / n))).ln();
        }
    }
    total
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn pca(cols: &[Vec<f64>], k: usize) -> Vec<f64> {
    let c = cols.len();
    let cov: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            (0..c)
                .map(|j| {
                    let (mi, mj) = (mean(&cols[i]), mean(&cols[j]));
                    cols[i].iter().zip(&cols[j]).map(|(a, b)| (a - mi) * (b - mj)).sum::<f64>() / cols[i].len() as f64
                })
                .collect()
        })
        .collect();
    let mut ev: Vec<f64> = jacobi_eigenvalues(cov).into_iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let s: f64 = ev.iter().sum();
    ev.into_iter().take(k).map(|v| v / s).collect()
}
