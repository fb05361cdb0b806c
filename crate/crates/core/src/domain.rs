//! Domain types shared across the pipeline, and channel-wise z-scoring.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const CANONICAL_CHANNELS: [&str; 7] =
    ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "ppg"];
pub const IMU_CHANNELS: usize = 6;
pub const SAMPLE_RATE_HZ: f64 = 100.0;
pub const N_BENCHMARK_CLASSES: usize = 6;
pub const NEGATIVE: u8 = 5;
pub const MAX_CLASS_ID: u8 = 58;
/// Floor applied to the standard deviation of constant channels.
pub const NORM_EPS: f64 = 1e-8;

/// Gesture class ids that make up the benchmark, in benchmark-id order:
/// double clench, double pinch, pinch down, pinch up, slide.
pub const BENCHMARK_CLASS_IDS: [u8; 5] = [3, 4, 13, 16, 20];
pub const BENCHMARK_NAMES: [&str; 6] = [
    "double_clench",
    "double_pinch",
    "pinch_down",
    "pinch_up",
    "slide",
    "negative",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelLayout {
    names: Vec<String>,
    sample_rate_hz: f64,
}

impl ChannelLayout {
    pub fn new(names: Vec<String>, sample_rate_hz: f64) -> Result<Self> {
        if names.is_empty() {
            return invalid("channel layout needs at least one channel");
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return invalid(format!("sample rate {sample_rate_hz} must be positive"));
        }
        Ok(Self {
            names,
            sample_rate_hz,
        })
    }

    /// All seven channels: six IMU axes and the averaged PPG channel.
    pub fn canonical(sample_rate_hz: f64) -> Self {
        Self {
            names: CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
            sample_rate_hz,
        }
    }

    pub fn imu_only(sample_rate_hz: f64) -> Self {
        Self {
            names: CANONICAL_CHANNELS[..IMU_CHANNELS]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            sample_rate_hz,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// True when the first six channels are the IMU axes in canonical order.
    pub fn has_canonical_imu(&self) -> bool {
        self.names.len() >= IMU_CHANNELS
            && self.names[..IMU_CHANNELS]
                .iter()
                .zip(CANONICAL_CHANNELS)
                .all(|(a, b)| a == b)
    }
}

/// Row-major `rows x cols` matrix of finite values; rows are time samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        Matrix::new(r.rows, r.cols, r.data)
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> Self {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "non-finite value {} at row {}, column {}",
                data[i],
                i / cols.max(1),
                i % cols.max(1)
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from column vectors of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("columns differ in length".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for t in 0..rows {
            data.extend(columns.iter().map(|c| c[t]));
        }
        Matrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.cols + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.get(t, c)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|c| self.column(c)).collect()
    }

    /// Contiguous rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Matrix> {
        if start + len > self.rows {
            return Err(Error::Shape(format!(
                "rows {start}..{} out of {}",
                start + len,
                self.rows
            )));
        }
        Ok(Matrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        })
    }

    /// First `n` columns.
    pub fn take_columns(&self, n: usize) -> Result<Matrix> {
        if n > self.cols {
            return Err(Error::Shape(format!("{n} of {} columns", self.cols)));
        }
        let mut data = Vec::with_capacity(self.rows * n);
        for t in 0..self.rows {
            data.extend_from_slice(&self.row(t)[..n]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols: n,
            data,
        })
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Sitting,
    Standing,
    ArmDown,
    Walking,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Sitting,
        Condition::Standing,
        Condition::ArmDown,
        Condition::Walking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Sitting => "sitting",
            Condition::Standing => "standing",
            Condition::ArmDown => "arm_down",
            Condition::Walking => "walking",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrist {
    Left,
    Right,
    #[default]
    Unspecified,
}

impl Wrist {
    pub fn flipped(self) -> Self {
        match self {
            Wrist::Left => Wrist::Right,
            Wrist::Right => Wrist::Left,
            Wrist::Unspecified => Wrist::Unspecified,
        }
    }
}

/// Maps a raw gesture class id (0..=58) to its benchmark id (0..=5).
pub fn benchmark_id(class_id: u8) -> Result<u8> {
    if class_id > MAX_CLASS_ID {
        return invalid(format!("class id {class_id} outside 0..={MAX_CLASS_ID}"));
    }
    Ok(BENCHMARK_CLASS_IDS
        .iter()
        .position(|&c| c == class_id)
        .map_or(NEGATIVE, |p| p as u8))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GestureLabel {
    pub class_id: u8,
    pub benchmark_id: u8,
}

impl GestureLabel {
    pub fn new(class_id: u8) -> Result<Self> {
        Ok(Self {
            class_id,
            benchmark_id: benchmark_id(class_id)?,
        })
    }
}

/// Recomputes the benchmark id from the raw class id.
pub fn collapse_to_benchmark(label: GestureLabel) -> Result<GestureLabel> {
    GestureLabel::new(label.class_id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorClip {
    pub samples: Matrix,
    pub layout: ChannelLayout,
    pub label: GestureLabel,
    pub participant_id: String,
    pub condition: Condition,
    pub wrist: Wrist,
}

impl SensorClip {
    pub fn new(
        samples: Matrix,
        layout: ChannelLayout,
        label: GestureLabel,
        participant_id: impl Into<String>,
        condition: Condition,
        wrist: Wrist,
    ) -> Result<Self> {
        if samples.rows() == 0 {
            return invalid("clip has no samples");
        }
        if samples.cols() != layout.len() {
            return Err(Error::Shape(format!(
                "{} sample columns for {} layout channels",
                samples.cols(),
                layout.len()
            )));
        }
        Ok(Self {
            samples,
            layout,
            label,
            participant_id: participant_id.into(),
            condition,
            wrist,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub samples: Matrix,
    pub label: GestureLabel,
    pub clip_ref: String,
    pub start_index: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-channel mean and population standard deviation over every sample of
/// every window.
pub fn fit_norm_stats(windows: &[Window]) -> Result<NormStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidInput("no training data".into()))?;
    let c = first.channels();
    let mut n = 0usize;
    let mut sum = vec![0.0; c];
    for w in windows {
        if w.channels() != c {
            return Err(Error::Shape(format!(
                "window with {} channels among {c}-channel windows",
                w.channels()
            )));
        }
        for t in 0..w.len() {
            for (s, v) in sum.iter_mut().zip(w.samples.row(t)) {
                *s += v;
            }
        }
        n += w.len();
    }
    if n < 2 {
        return invalid("normalization needs at least two samples per channel");
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; c];
    for w in windows {
        for t in 0..w.len() {
            for ((s, v), m) in sq.iter_mut().zip(w.samples.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| (s / n as f64).sqrt().max(NORM_EPS))
        .collect();
    Ok(NormStats { mean, std })
}

pub fn apply_norm(x: &Window, stats: &NormStats) -> Result<Window> {
    let c = x.channels();
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::Shape(format!(
            "window has {c} channels, stats have {}",
            stats.mean.len()
        )));
    }
    let mut out = x.clone();
    for row in out.samples.data_mut().chunks_mut(c) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}
