//! Gesture segmentation from continuous IMU streams (band-pass, motion
//! envelope, smoothing, peak picking, fixed-length cuts) and the
//! per-clip sliding-window extractor.

use serde::{Deserialize, Serialize};

use crate::domain::{Matrix, SensorClip, Window, IMU_CHANNELS};
use crate::error::{invalid, Error, Result};
use crate::filter::Sos;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegConfig {
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    pub smooth_window: usize,
    pub peak_min_distance: usize,
    /// Envelope threshold; `None` means mean + 1.5 standard deviations.
    pub peak_min_height: Option<f64>,
    pub segment_halfwidth: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            bandpass_low_hz: 0.5,
            bandpass_high_hz: 20.0,
            smooth_window: 25,
            peak_min_distance: 100,
            peak_min_height: None,
            segment_halfwidth: 100,
        }
    }
}

impl SegConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let (lo, hi) = (self.bandpass_low_hz, self.bandpass_high_hz);
        if !(lo > 0.0 && lo < hi && hi < sample_rate_hz / 2.0) {
            return invalid(format!(
                "band {lo}-{hi} Hz must satisfy 0 < low < high < {}",
                sample_rate_hz / 2.0
            ));
        }
        if self.smooth_window == 0 || self.segment_halfwidth == 0 {
            return invalid("smooth_window and segment_halfwidth must be at least 1");
        }
        Ok(())
    }
}

/// Zero-phase 4th-order band-pass applied to every column.
pub fn bandpass(signal: &Matrix, low_hz: f64, high_hz: f64, rate_hz: f64) -> Result<Matrix> {
    let sos = Sos::bandpass(low_hz, high_hz, rate_hz)?;
    let cols: Vec<Vec<f64>> = signal.columns().iter().map(|c| sos.filtfilt(c)).collect();
    if cols.is_empty() {
        return Ok(signal.clone());
    }
    Matrix::from_columns(&cols)
}

/// `|acc[t]| + |gyro[t]|` for a six-column IMU matrix.
pub fn motion_envelope(filtered: &Matrix) -> Result<Vec<f64>> {
    if filtered.cols() != IMU_CHANNELS {
        return Err(Error::Shape(format!(
            "motion envelope needs {IMU_CHANNELS} IMU channels, got {}",
            filtered.cols()
        )));
    }
    Ok((0..filtered.rows())
        .map(|t| {
            let r = filtered.row(t);
            (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
                + (r[3] * r[3] + r[4] * r[4] + r[5] * r[5]).sqrt()
        })
        .collect())
}

/// Centered moving average of width `k`; near the edges the average runs
/// over the samples that exist.
pub fn smooth(env: &[f64], k: usize) -> Vec<f64> {
    let k = k.max(1);
    let n = env.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in env {
        prefix.push(prefix.last().unwrap() + v);
    }
    let left = (k - 1) / 2;
    let right = k / 2;
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(left);
            let hi = (t + right + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Local maxima (plateaus report their middle sample; the ends of the
/// signal count when the neighbour inside is lower) at or above the height
/// threshold, thinned greedily so that higher peaks win and every pair is at
/// least `peak_min_distance` apart. Ties in height go to the earlier index.
pub fn detect_peaks(env: &[f64], cfg: &SegConfig) -> Vec<usize> {
    let n = env.len();
    if n == 0 {
        return Vec::new();
    }
    let height = cfg.peak_min_height.unwrap_or_else(|| {
        let mean = env.iter().sum::<f64>() / n as f64;
        let var = env.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        mean + 1.5 * var.sqrt()
    });
    let mut candidates = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && env[j + 1] == env[i] {
            j += 1;
        }
        let left_lower = i > 0 && env[i - 1] < env[i];
        let right_lower = j + 1 < n && env[j + 1] < env[i];
        let left_ok = i == 0 || left_lower;
        let right_ok = j + 1 == n || right_lower;
        if left_ok && right_ok && (left_lower || right_lower) && env[i] >= height {
            candidates.push((i + j) / 2);
        }
        i = j + 1;
    }
    candidates.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= cfg.peak_min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Cuts `[c - halfwidth, c + halfwidth)` around each center, replicating the
/// first/last sample where the span leaves the stream.
pub fn extract_segments(
    stream: &SensorClip,
    centers: &[usize],
    halfwidth: usize,
) -> Result<Vec<SensorClip>> {
    let t_len = stream.len() as isize;
    let c = stream.samples.cols();
    centers
        .iter()
        .map(|&center| {
            let mut data = Vec::with_capacity(2 * halfwidth * c);
            for idx in center as isize - halfwidth as isize..center as isize + halfwidth as isize {
                let src = idx.clamp(0, t_len - 1) as usize;
                data.extend_from_slice(stream.samples.row(src));
            }
            let samples = Matrix::new(2 * halfwidth, c, data)?;
            SensorClip::new(
                samples,
                stream.layout.clone(),
                stream.label,
                stream.participant_id.clone(),
                stream.condition,
                stream.wrist,
            )
        })
        .collect()
}

/// Full four-stage pipeline: band-pass the IMU channels, envelope, smooth,
/// pick peaks, then cut segments from the unfiltered stream.
pub fn segment_stream(stream: &SensorClip, cfg: &SegConfig) -> Result<(Vec<usize>, Vec<SensorClip>)> {
    let rate = stream.layout.sample_rate_hz();
    cfg.validate(rate)?;
    if !stream.layout.has_canonical_imu() {
        return invalid("stream lacks the canonical IMU channels");
    }
    let imu = stream.samples.take_columns(IMU_CHANNELS)?;
    let filtered = bandpass(&imu, cfg.bandpass_low_hz, cfg.bandpass_high_hz, rate)?;
    let env = smooth(&motion_envelope(&filtered)?, cfg.smooth_window);
    let centers = detect_peaks(&env, cfg);
    let segments = extract_segments(stream, &centers, cfg.segment_halfwidth)?;
    Ok((centers, segments))
}

/// Start offsets of the (up to) six stride-spaced windows whose union is
/// centered on the clip, clamped into `[0, T - W]` and deduplicated.
pub fn window_starts(t_len: usize, w: usize, stride: usize) -> Result<Vec<usize>> {
    if w == 0 {
        return invalid("window length must be positive");
    }
    if t_len < w {
        return invalid(format!("clip of {t_len} samples is shorter than window {w}"));
    }
    let slack = (t_len - w) as isize;
    let first = (slack - 5 * stride as isize).div_euclid(2);
    let mut starts: Vec<usize> = (0..6)
        .map(|j| (first + j * stride as isize).clamp(0, slack) as usize)
        .collect();
    starts.dedup();
    Ok(starts)
}

pub fn window_clip(clip: &SensorClip, clip_ref: &str, w: usize, stride: usize) -> Result<Vec<Window>> {
    window_starts(clip.len(), w, stride)?
        .into_iter()
        .map(|s| {
            Ok(Window {
                samples: clip.samples.slice_rows(s, w)?,
                label: clip.label,
                clip_ref: clip_ref.to_string(),
                start_index: s,
            })
        })
        .collect()
}
