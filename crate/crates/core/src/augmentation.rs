//! Training-set augmentation: wrist mirroring, signal-space perturbations
//! (scale, time warp, smooth noise) and additive walking overlays.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::Split;
use crate::domain::{Matrix, SensorClip, Window, IMU_CHANNELS};
use crate::error::{invalid, Error, Result};
use crate::filter::Sos;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    pub scale_range: (f64, f64),
    /// Bound on `|tau(t) - t|` as a fraction of the window length.
    pub warp_strength: f64,
    /// Noise standard deviation relative to the channel's own.
    pub noise_amp: f64,
    pub noise_cutoff_hz: f64,
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub seed: u64,
    pub mirror: bool,
    /// Perturbed copies generated per training clip.
    pub n_perturb: usize,
    /// Walking-overlay copies generated per training clip.
    pub n_overlay: usize,
    pub walk_segment_len: usize,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            scale_range: (0.8, 1.2),
            warp_strength: 0.1,
            noise_amp: 0.05,
            noise_cutoff_hz: 2.0,
            alpha_range: (0.3, 1.0),
            beta_range: (0.3, 1.0),
            seed: 42,
            mirror: true,
            n_perturb: 1,
            n_overlay: 1,
            walk_segment_len: 500,
        }
    }
}

impl AugConfig {
    /// Configuration under which every operation is the identity.
    pub fn disabled() -> Self {
        Self {
            scale_range: (1.0, 1.0),
            warp_strength: 0.0,
            noise_amp: 0.0,
            alpha_range: (0.0, 0.0),
            beta_range: (0.0, 0.0),
            mirror: false,
            n_perturb: 0,
            n_overlay: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("scale_range", self.scale_range),
            ("alpha_range", self.alpha_range),
            ("beta_range", self.beta_range),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return invalid(format!("{name} ({lo}, {hi}) is not an ordered range"));
            }
        }
        if self.warp_strength < 0.0 || self.noise_amp < 0.0 {
            return invalid("warp_strength and noise_amp must be non-negative");
        }
        if self.noise_amp > 0.0 && self.noise_cutoff_hz <= 0.0 {
            return invalid("noise_cutoff_hz must be positive");
        }
        if self.walk_segment_len == 0 {
            return invalid("walk_segment_len must be at least 1");
        }
        Ok(())
    }
}

/// Uniform draw; a degenerate range returns its lower end exactly.
fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub const MIRRORED_CHANNELS: [usize; 3] = [0, 3, 5];

/// Sagittal-plane reflection: negates acc_x, gyro_x and gyro_z and swaps the wrist.
pub fn mirror_wrist(clip: &SensorClip) -> Result<SensorClip> {
    if !clip.layout.has_canonical_imu() {
        return invalid("mirroring needs the canonical IMU channels");
    }
    let mut out = clip.clone();
    let c = out.samples.cols();
    for row in out.samples.data_mut().chunks_mut(c) {
        for &ch in &MIRRORED_CHANNELS {
            row[ch] = -row[ch];
        }
    }
    out.wrist = clip.wrist.flipped();
    Ok(out)
}

/// Random values drawn by one [`perturb`] call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbDraw {
    pub scale: f64,
    pub warp_max_shift: f64,
}

/// Strictly increasing reparameterization `tau` of `0..n` with fixed
/// endpoints and `max |tau(t) - t| <= strength * n`.
///
/// The displacement is a random sum of three half-sine modes, rescaled so
/// that its slope never reaches -1.
pub fn warp_grid<R: Rng + ?Sized>(n: usize, strength: f64, rng: &mut R) -> Vec<f64> {
    let ident: Vec<f64> = (0..n).map(|t| t as f64).collect();
    if n < 3 || strength <= 0.0 {
        return ident;
    }
    let span = (n - 1) as f64;
    let coef: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let disp = |t: f64| -> f64 {
        coef.iter()
            .enumerate()
            .map(|(j, c)| c * (std::f64::consts::PI * (j + 1) as f64 * t / span).sin())
            .sum()
    };
    let slope = |t: f64| -> f64 {
        coef.iter()
            .enumerate()
            .map(|(j, c)| {
                let w = std::f64::consts::PI * (j + 1) as f64 / span;
                c * w * (w * t).cos()
            })
            .sum()
    };
    let d: Vec<f64> = ident.iter().map(|&t| disp(t)).collect();
    let max_abs = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Dense sampling of the slope between grid points.
    let steepest_fall = (0..=8 * (n - 1))
        .map(|i| -slope(i as f64 / 8.0))
        .fold(0.0f64, f64::max);
    if max_abs == 0.0 {
        return ident;
    }
    let mut k = strength * n as f64 / max_abs;
    if steepest_fall > 0.0 {
        k = k.min(0.9 / steepest_fall);
    }
    k *= rng.random::<f64>();
    ident.iter().zip(&d).map(|(t, di)| t + k * di).collect()
}

fn interpolate(x: &[f64], tau: &[f64]) -> Vec<f64> {
    let last = x.len() - 1;
    tau.iter()
        .map(|&p| {
            let p = p.clamp(0.0, last as f64);
            let i = (p.floor() as usize).min(last);
            let f = p - i as f64;
            if i == last || f == 0.0 {
                x[i]
            } else {
                x[i] * (1.0 - f) + x[i + 1] * f
            }
        })
        .collect()
}

fn std_of(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// Scale, warp and noise applied to a `T x C` sample matrix, in that order.
pub fn perturb_samples<R: Rng + ?Sized>(
    samples: &Matrix,
    cfg: &AugConfig,
    rate_hz: f64,
    rng: &mut R,
) -> Result<(Matrix, PerturbDraw)> {
    let scale = draw(rng, cfg.scale_range);
    let n = samples.rows();
    let mut cols: Vec<Vec<f64>> = samples
        .columns()
        .into_iter()
        .map(|c| c.into_iter().map(|v| v * scale).collect())
        .collect();
    let mut warp_max_shift = 0.0;
    if cfg.warp_strength > 0.0 && n >= 3 {
        let tau = warp_grid(n, cfg.warp_strength, rng);
        warp_max_shift = tau
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (t, v)| m.max((v - t as f64).abs()));
        for c in cols.iter_mut() {
            *c = interpolate(c, &tau);
        }
    }
    if cfg.noise_amp > 0.0 && n >= 2 {
        let lp = Sos::lowpass(cfg.noise_cutoff_hz, rate_hz)?;
        for c in cols.iter_mut() {
            let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let smooth = lp.filtfilt(&raw);
            let (sn, sc) = (std_of(&smooth), std_of(c));
            if sn > 0.0 && sc > 0.0 {
                let g = cfg.noise_amp * sc / sn;
                for (v, e) in c.iter_mut().zip(&smooth) {
                    *v += g * e;
                }
            }
        }
    }
    let out = if cols.is_empty() {
        samples.clone()
    } else {
        Matrix::from_columns(&cols)?
    };
    Ok((out, PerturbDraw {
        scale,
        warp_max_shift,
    }))
}

pub fn perturb<R: Rng + ?Sized>(
    window: &Window,
    cfg: &AugConfig,
    rate_hz: f64,
    rng: &mut R,
) -> Result<Window> {
    let (samples, _) = perturb_samples(&window.samples, cfg, rate_hz, rng)?;
    Ok(Window {
        samples,
        ..window.clone()
    })
}

/// Walking recordings cut into equal-length six-channel segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkBank {
    segments: Vec<Matrix>,
    segment_len: usize,
}

impl WalkBank {
    pub fn new(segments: Vec<Matrix>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidInput("walk bank is empty".into()))?;
        let len = first.rows();
        if len == 0 {
            return invalid("walk segments must have at least one sample");
        }
        if segments
            .iter()
            .any(|s| s.rows() != len || s.cols() != IMU_CHANNELS)
        {
            return invalid(format!(
                "walk segments must all be {len} x {IMU_CHANNELS}"
            ));
        }
        Ok(Self {
            segments,
            segment_len: len,
        })
    }

    /// Splits continuous recordings (first six columns) into non-overlapping
    /// segments of `segment_len` samples; trailing remainders are dropped.
    pub fn from_recordings(recordings: &[Matrix], segment_len: usize) -> Result<Self> {
        if segment_len == 0 {
            return invalid("segment length must be positive");
        }
        let mut segments = Vec::new();
        for r in recordings {
            let imu = r.take_columns(IMU_CHANNELS)?;
            let mut start = 0;
            while start + segment_len <= imu.rows() {
                segments.push(imu.slice_rows(start, segment_len)?);
                start += segment_len;
            }
        }
        Self::new(segments)
    }

    /// Quasi-periodic 1.8 Hz gait template with seeded cadence and amplitude
    /// jitter, used when no real walking recordings are available.
    pub fn synthetic(n_segments: usize, segment_len: usize, rate_hz: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = n_segments * segment_len;
        let mut data = Vec::with_capacity(total * IMU_CHANNELS);
        let phases: Vec<f64> = (0..IMU_CHANNELS)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let gains = [1.2, 0.6, 2.0, 0.5, 0.8, 0.3];
        let mut phase = 0.0;
        for _ in 0..total {
            let cadence = 1.8 * (1.0 + 0.03 * rng.sample::<f64, _>(StandardNormal));
            phase += std::f64::consts::TAU * cadence / rate_hz;
            for ch in 0..IMU_CHANNELS {
                let p = phase + phases[ch];
                let v = gains[ch] * (p.sin() + 0.35 * (2.0 * p).sin())
                    + 0.05 * rng.sample::<f64, _>(StandardNormal);
                data.push(v);
            }
        }
        let rec = Matrix::new(total, IMU_CHANNELS, data)?;
        Self::from_recordings(&[rec], segment_len)
    }

    pub fn segments(&self) -> &[Matrix] {
        &self.segments
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }
}

/// Values drawn by one [`walking_overlay`] call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayDraw {
    pub segment: usize,
    pub alpha: f64,
    pub beta: f64,
}

/// Adds `alpha * w_acc` to the accelerometer and `beta * w_gyro` to the
/// gyroscope, tiling the walking segment cyclically (`w(t mod L_w)`).
pub fn walking_overlay_with(clip: &SensorClip, segment: &Matrix, alpha: f64, beta: f64) -> Result<SensorClip> {
    if !clip.layout.has_canonical_imu() {
        return invalid("walking overlay needs the canonical IMU channels");
    }
    if segment.cols() != IMU_CHANNELS || segment.rows() == 0 {
        return invalid("walking segment must be non-empty with six channels");
    }
    let mut out = clip.clone();
    let c = out.samples.cols();
    let lw = segment.rows();
    for (t, row) in out.samples.data_mut().chunks_mut(c).enumerate() {
        let w = segment.row(t % lw);
        for ch in 0..3 {
            row[ch] += alpha * w[ch];
        }
        for ch in 3..6 {
            row[ch] += beta * w[ch];
        }
    }
    Ok(out)
}

pub fn walking_overlay<R: Rng + ?Sized>(
    clip: &SensorClip,
    bank: &WalkBank,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<(SensorClip, OverlayDraw)> {
    let segment = rng.random_range(0..bank.segments.len());
    let alpha = draw(rng, cfg.alpha_range);
    let beta = draw(rng, cfg.beta_range);
    let out = walking_overlay_with(clip, &bank.segments[segment], alpha, beta)?;
    Ok((out, OverlayDraw {
        segment,
        alpha,
        beta,
    }))
}

/// How an expanded clip was derived from the input set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: usize,
    pub transforms: Vec<String>,
    pub perturb: Option<PerturbDraw>,
    pub overlay: Option<OverlayDraw>,
}

/// Originals, then mirrored duplicates (participant ids suffixed
/// `_mirror`), then per-clip perturbed and overlaid variants. Each source
/// clip draws from its own ChaCha stream so the result does not depend on
/// processing order.
pub fn expand_training_set(
    clips: &[(SensorClip, Split)],
    cfg: &AugConfig,
    bank: Option<&WalkBank>,
) -> Result<Vec<(SensorClip, Provenance)>> {
    cfg.validate()?;
    if let Some((i, (_, s))) = clips.iter().enumerate().find(|(_, (_, s))| *s != Split::Train) {
        return invalid(format!("clip {i} belongs to the {s:?} split; only training clips may be augmented"));
    }
    if cfg.n_overlay > 0 && bank.is_none() {
        return invalid("walking overlay requested without a walk bank");
    }
    let mut out: Vec<(SensorClip, Provenance)> = clips
        .iter()
        .enumerate()
        .map(|(i, (c, _))| {
            (c.clone(), Provenance {
                source: i,
                transforms: Vec::new(),
                perturb: None,
                overlay: None,
            })
        })
        .collect();
    if cfg.mirror {
        for (i, (c, _)) in clips.iter().enumerate() {
            let mut m = mirror_wrist(c)?;
            m.participant_id = format!("{}_mirror", c.participant_id);
            out.push((m, Provenance {
                source: i,
                transforms: vec!["mirror".into()],
                perturb: None,
                overlay: None,
            }));
        }
    }
    for (i, (c, _)) in clips.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let rate = c.layout.sample_rate_hz();
        for _ in 0..cfg.n_perturb {
            let (samples, d) = perturb_samples(&c.samples, cfg, rate, &mut rng)?;
            out.push((SensorClip { samples, ..c.clone() }, Provenance {
                source: i,
                transforms: vec!["scale".into(), "warp".into(), "noise".into()],
                perturb: Some(d),
                overlay: None,
            }));
        }
        if let Some(bank) = bank {
            for _ in 0..cfg.n_overlay {
                let (o, d) = walking_overlay(c, bank, cfg, &mut rng)?;
                out.push((o, Provenance {
                    source: i,
                    transforms: vec!["walking_overlay".into()],
                    perturb: None,
                    overlay: Some(d),
                }));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_range_returns_lower_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(draw(&mut rng, (0.7, 0.7)), 0.7);
        let v = draw(&mut rng, (1.0, 2.0));
        assert!((1.0..2.0).contains(&v));
    }

    #[test]
    fn interpolation_at_integer_points_is_exact() {
        let x = [1.0, 4.0, -2.0];
        assert_eq!(interpolate(&x, &[0.0, 1.0, 2.0]), x.to_vec());
        assert_eq!(interpolate(&x, &[0.5]), vec![2.5]);
    }

    #[test]
    fn config_validation() {
        assert!(AugConfig::default().validate().is_ok());
        let bad = AugConfig {
            scale_range: (2.0, 1.0),
            ..AugConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn synthetic_bank_shapes() {
        let bank = WalkBank::synthetic(3, 500, 100.0, 1).unwrap();
        assert_eq!(bank.segments().len(), 3);
        assert_eq!(bank.segment_len(), 500);
        assert!(WalkBank::new(Vec::new()).is_err());
    }
}
