//! Second-order-section IIR filters and forward-backward (zero-phase) filtering.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// One normalized biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

const BUTTERWORTH_Q: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn check_corner(f: f64, fs: f64) -> Result<()> {
    if !(fs > 0.0 && f > 0.0 && f < fs / 2.0) {
        return invalid(format!("corner {f} Hz must lie in (0, {}) Hz", fs / 2.0));
    }
    Ok(())
}

impl Biquad {
    /// Second-order Butterworth low-pass (bilinear transform, prewarped).
    pub fn lowpass(f0: f64, fs: f64) -> Result<Self> {
        check_corner(f0, fs)?;
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * BUTTERWORTH_Q);
        let a0 = 1.0 + alpha;
        Ok(Self {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        })
    }

    /// Second-order Butterworth high-pass.
    pub fn highpass(f0: f64, fs: f64) -> Result<Self> {
        check_corner(f0, fs)?;
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * BUTTERWORTH_Q);
        let a0 = 1.0 + alpha;
        Ok(Self {
            b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        })
    }

    /// Gain at DC.
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Magnitude response at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let (s1, c1) = w.sin_cos();
        let (s2, c2) = (2.0 * w).sin_cos();
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, -(self.b[1] * s1 + self.b[2] * s2));
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, -(self.a[0] * s1 + self.a[1] * s2));
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Transposed direct-form II state reached after a unit step settles.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }
}

/// Cascade of biquads.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Fourth-order band-pass: Butterworth high-pass at `low` then low-pass at `high`.
    pub fn bandpass(low: f64, high: f64, fs: f64) -> Result<Self> {
        if !(low < high) {
            return invalid(format!("band {low}-{high} Hz is empty"));
        }
        Ok(Self {
            sections: vec![Biquad::highpass(low, fs)?, Biquad::lowpass(high, fs)?],
        })
    }

    pub fn lowpass(f0: f64, fs: f64) -> Result<Self> {
        Ok(Self {
            sections: vec![Biquad::lowpass(f0, fs)?],
        })
    }

    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(f, fs)).product()
    }

    /// Single forward pass starting from the steady state of a constant
    /// input equal to `x[0]`.
    pub fn filter_steady(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            let z0 = s.step_state();
            let mut z = [z0[0] * level, z0[1] * level];
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + z[0];
                z[0] = s.b[1] * xin - s.a[0] * out + z[1];
                z[1] = s.b[2] * xin - s.a[1] * out;
                *v = out;
            }
            level *= s.dc_gain();
        }
        y
    }

    /// Number of samples of odd extension added at each end by [`Sos::filtfilt`].
    pub fn pad_len(&self, n: usize) -> usize {
        (3 * (2 * self.sections.len() + 1)).min(n.saturating_sub(1))
    }

    /// Zero-phase filtering: odd-reflection padding, steady-state initial
    /// conditions, then a forward and a backward pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len(n);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.filter_steady(&ext);
        y.reverse();
        let mut y = self.filter_steady(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }

    /// Expands the cascade into one rational transfer function `(b, a)`
    /// with `a[0] = 1`.
    pub fn transfer_function(&self) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![1.0];
        let mut a = vec![1.0];
        for s in &self.sections {
            b = poly_mul(&b, &s.b);
            a = poly_mul(&a, &[1.0, s.a[0], s.a[1]]);
        }
        (b, a)
    }

    /// Precomputes Gustafsson's initial-state solve for signals of length `n`.
    pub fn zero_phase_plan(&self, n: usize) -> ZeroPhasePlan {
        ZeroPhasePlan::new(self, n)
    }
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, u) in p.iter().enumerate() {
        for (j, v) in q.iter().enumerate() {
            out[i + j] += u * v;
        }
    }
    out
}

/// Direct-form II transposed filtering with initial state `zi`.
fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64]) -> Vec<f64> {
    let order = zi.len();
    let mut z = zi.to_vec();
    x.iter()
        .map(|&xin| {
            let out = b[0] * xin + z.first().copied().unwrap_or(0.0);
            for k in 0..order {
                let next = if k + 1 < order { z[k + 1] } else { 0.0 };
                z[k] = b[k + 1] * xin - a[k + 1] * out + next;
            }
            out
        })
        .collect()
}

/// Forward-backward filtering whose forward and backward initial states are
/// chosen by least squares so that filtering forward-then-backward and
/// backward-then-forward agree. Unlike padded filtering this leaves no slow
/// start-up transient on short windows with very low corner frequencies.
#[derive(Clone, Debug)]
pub struct ZeroPhasePlan {
    b: Vec<f64>,
    a: Vec<f64>,
    n: usize,
    /// `[Sr | Obsr]`, maps the initial states onto their output contribution.
    basis: DMatrix<f64>,
    /// Pseudo-inverse of `[Sr - Obs | Obsr - S]`.
    solve: DMatrix<f64>,
}

impl ZeroPhasePlan {
    fn new(sos: &Sos, n: usize) -> Self {
        let (b, a) = sos.transfer_function();
        let order = b.len() - 1;
        let mut e0 = vec![0.0; order];
        e0[0] = 1.0;
        let impulse = lfilter(&b, &a, &vec![0.0; n], &e0);
        let obs = DMatrix::from_fn(n, order, |i, k| if i >= k { impulse[i - k] } else { 0.0 });
        let obs_r = DMatrix::from_fn(n, order, |i, k| obs[(n - 1 - i, k)]);
        let mut s = DMatrix::zeros(n, order);
        for k in 0..order {
            let col: Vec<f64> = obs_r.column(k).iter().copied().collect();
            for (i, v) in lfilter(&b, &a, &col, &vec![0.0; order]).into_iter().enumerate() {
                s[(i, k)] = v;
            }
        }
        let s_r = DMatrix::from_fn(n, order, |i, k| s[(n - 1 - i, k)]);
        let mut m = DMatrix::zeros(n, 2 * order);
        let mut basis = DMatrix::zeros(n, 2 * order);
        for i in 0..n {
            for k in 0..order {
                m[(i, k)] = s_r[(i, k)] - obs[(i, k)];
                m[(i, order + k)] = obs_r[(i, k)] - s[(i, k)];
                basis[(i, k)] = s_r[(i, k)];
                basis[(i, order + k)] = obs_r[(i, k)];
            }
        }
        let svd = m.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        let solve = svd
            .pseudo_inverse(tol)
            .unwrap_or_else(|_| DMatrix::zeros(2 * order, n));
        Self { b, a, n, basis, solve }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Filters `x`, which must have the planned length.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "signal length differs from the planned length");
        let order = self.b.len() - 1;
        let zeros = vec![0.0; order];
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<f64>>();
        let y_f = lfilter(&self.b, &self.a, x, &zeros);
        let y_fb = rev(&lfilter(&self.b, &self.a, &rev(&y_f), &zeros));
        let y_b = rev(&lfilter(&self.b, &self.a, &rev(x), &zeros));
        let y_bf = lfilter(&self.b, &self.a, &y_b, &zeros);
        let delta = DVector::from_iterator(self.n, y_bf.iter().zip(&y_fb).map(|(u, v)| u - v));
        let ic = &self.solve * delta;
        let corr = &self.basis * ic;
        y_fb.iter().zip(corr.iter()).map(|(y, c)| y + c).collect()
    }
}
