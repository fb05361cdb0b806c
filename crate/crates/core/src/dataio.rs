//! Dataset layout on disk, subject-independent splits, and the synthetic
//! dataset generator.
//!
//! Layout: `root/<participant>/<condition>/<class_id>_<clip_idx>.csv`, an
//! optional `root/<participant>/meta.json` holding `{"wrist": "left"}`, and
//! `root/index.json` listing every clip with its split. Directory entries
//! whose names start with `_` or `.` are not participants (the generator
//! keeps its walking recordings under `_walk_bank/`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augmentation::WalkBank;
use crate::domain::{
    ChannelLayout, Condition, GestureLabel, Matrix, SensorClip, Wrist, BENCHMARK_CLASS_IDS,
    IMU_CHANNELS, NEGATIVE, SAMPLE_RATE_HZ,
};
use crate::error::{invalid, io_err, Error, Result};

pub const IMU_COLUMNS: [&str; 6] = ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"];
pub const INDEX_FILE: &str = "index.json";
pub const WALK_BANK_DIR: &str = "_walk_bank";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub participant_id: String,
    pub condition: Condition,
    pub class_id: u8,
    pub clip_idx: u32,
    pub wrist: Wrist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ClipEntry {
    pub fn label(&self) -> Result<GestureLabel> {
        GestureLabel::new(self.class_id)
    }

    /// Stable identifier used to tie windows back to their clip.
    pub fn clip_ref(&self) -> &str {
        &self.path
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    #[serde(skip)]
    pub root: PathBuf,
    pub sample_rate_hz: f64,
    pub clips: Vec<ClipEntry>,
}

impl DatasetIndex {
    pub fn participants(&self) -> Vec<String> {
        let mut p: Vec<String> = self.clips.iter().map(|c| c.participant_id.clone()).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == Some(split))
    }

    pub fn load_clip(&self, entry: &ClipEntry) -> Result<SensorClip> {
        let path = self.root.join(&entry.path);
        let samples = read_clip_csv(&path)?;
        SensorClip::new(
            samples,
            ChannelLayout::canonical(self.sample_rate_hz),
            entry.label()?,
            entry.participant_id.clone(),
            entry.condition,
            entry.wrist,
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(io_err(path))
    }

    /// Reads an index manifest; clip paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut idx: DatasetIndex = serde_json::from_str(&text)?;
        idx.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(idx)
    }
}

fn parse_err(file: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses one clip CSV into a `T x 7` matrix (six IMU axes and the mean of
/// all PPG columns).
pub fn read_clip_csv(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = find("t").ok_or_else(|| parse_err(path, 1, "missing column t"))?;
    let imu_cols = IMU_COLUMNS
        .iter()
        .map(|n| find(n).ok_or_else(|| parse_err(path, 1, format!("missing column {n}"))))
        .collect::<Result<Vec<_>>>()?;
    let ppg_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            let h = h.trim();
            h == "ppg" || h.starts_with("ppg_")
        })
        .map(|(i, _)| i)
        .collect();
    if ppg_cols.is_empty() {
        return Err(parse_err(path, 1, "missing column ppg"));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    let mut last_t = f64::NEG_INFINITY;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            let s = rec
                .get(i)
                .ok_or_else(|| parse_err(path, line, format!("missing field {}", i + 1)))?;
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number {s:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value {s:?}")));
            }
            Ok(v)
        };
        let t = field(t_col)?;
        if t <= last_t {
            return Err(parse_err(path, line, "timestamps must increase"));
        }
        last_t = t;
        for &c in &imu_cols {
            data.push(field(c)?);
        }
        let mut ppg = 0.0;
        for &c in &ppg_cols {
            ppg += field(c)?;
        }
        data.push(ppg / ppg_cols.len() as f64);
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 1, "no samples"));
    }
    Matrix::new(rows, IMU_CHANNELS + 1, data)
}

/// Writes a canonical clip; values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_clip_csv(path: &Path, samples: &Matrix, rate_hz: f64) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let wrap = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut header = vec!["t"];
    header.extend(IMU_COLUMNS);
    header.push("ppg");
    if samples.cols() != IMU_CHANNELS + 1 {
        return invalid(format!("expected 7 columns, got {}", samples.cols()));
    }
    w.write_record(&header).map_err(wrap)?;
    for t in 0..samples.rows() {
        let mut rec = vec![format!("{}", t as f64 * 1000.0 / rate_hz)];
        rec.extend(samples.row(t).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Deserialize)]
struct ParticipantMeta {
    #[serde(default)]
    wrist: Wrist,
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let e = e.map_err(io_err(dir))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.starts_with('_') || name.starts_with('.') {
            continue;
        }
        out.push((name, e.path()));
    }
    out.sort();
    Ok(out)
}

/// Enumerates the directory layout in lexicographic order. Clips are not
/// read until [`DatasetIndex::load_clip`].
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return invalid(format!("{} is not a directory", root.display()));
    }
    let mut clips = Vec::new();
    for (pid, pdir) in sorted_entries(root)? {
        if !pdir.is_dir() {
            continue;
        }
        let meta_path = pdir.join("meta.json");
        let wrist = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
            serde_json::from_str::<ParticipantMeta>(&text)?.wrist
        } else {
            Wrist::Unspecified
        };
        for (cname, cdir) in sorted_entries(&pdir)? {
            if !cdir.is_dir() {
                continue;
            }
            let condition = Condition::parse(&cname).ok_or_else(|| {
                Error::InvalidInput(format!("{}: unknown condition {cname:?}", cdir.display()))
            })?;
            for (fname, _) in sorted_entries(&cdir)? {
                let Some(stem) = fname.strip_suffix(".csv") else {
                    continue;
                };
                let parsed = stem
                    .split_once('_')
                    .and_then(|(a, b)| Some((a.parse::<u8>().ok()?, b.parse::<u32>().ok()?)));
                let (class_id, clip_idx) = parsed.ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{}: clip file names must be <class_id>_<clip_idx>.csv",
                        cdir.join(&fname).display()
                    ))
                })?;
                GestureLabel::new(class_id)?;
                clips.push(ClipEntry {
                    path: format!("{pid}/{cname}/{fname}"),
                    participant_id: pid.clone(),
                    condition,
                    class_id,
                    clip_idx,
                    wrist,
                    split: None,
                });
            }
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        sample_rate_hz: SAMPLE_RATE_HZ,
        clips,
    })
}

/// Number of participants per split: validation and test each get
/// `max(1, round(n * ratio))`, training keeps the rest.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3]> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return invalid(format!("split ratios {ratios:?} must be positive and sum to 1"));
    }
    if n < 3 {
        return invalid(format!("subject-independent splits need at least 3 participants, got {n}"));
    }
    let val = ((n as f64 * b).round() as usize).max(1);
    let test = ((n as f64 * c).round() as usize).max(1);
    if val + test >= n {
        return invalid(format!("{n} participants leave none for training"));
    }
    Ok([n - val - test, val, test])
}

/// Assigns whole participants to splits. Participants are shuffled by
/// `seed`, ordered by clip count (largest first, stable), and each goes to
/// the split with spare capacity whose per-condition clip counts lag
/// furthest behind their proportional targets.
pub fn make_splits(index: &DatasetIndex, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetIndex> {
    let mut per_participant: BTreeMap<&str, BTreeMap<Condition, usize>> = BTreeMap::new();
    for c in &index.clips {
        *per_participant
            .entry(&c.participant_id)
            .or_default()
            .entry(c.condition)
            .or_default() += 1;
    }
    let sizes = split_sizes(per_participant.len(), ratios)?;
    let mut order: Vec<(&str, &BTreeMap<Condition, usize>)> =
        per_participant.iter().map(|(k, v)| (*k, v)).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by_key(|(_, conds)| std::cmp::Reverse(conds.values().sum::<usize>()));

    let shares = [ratios.0, ratios.1, ratios.2];
    let mut totals: BTreeMap<Condition, usize> = BTreeMap::new();
    for conds in per_participant.values() {
        for (c, n) in conds.iter() {
            *totals.entry(*c).or_default() += n;
        }
    }
    let mut current = [BTreeMap::<Condition, usize>::new(), BTreeMap::new(), BTreeMap::new()];
    let mut filled = [0usize; 3];
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for (pid, conds) in order {
        let mut best: Option<(usize, f64)> = None;
        for s in 0..3 {
            if filled[s] >= sizes[s] {
                continue;
            }
            let score: f64 = conds
                .iter()
                .map(|(c, n)| {
                    let target = totals[c] as f64 * shares[s];
                    let have = *current[s].get(c).unwrap_or(&0) as f64;
                    *n as f64 * (target - have) / target.max(1e-12)
                })
                .sum();
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((s, score));
            }
        }
        let (s, _) = best.expect("split capacities cover every participant");
        filled[s] += 1;
        for (c, n) in conds.iter() {
            *current[s].entry(*c).or_default() += n;
        }
        assignment.insert(pid, Split::ALL[s]);
    }
    let mut out = index.clone();
    for c in out.clips.iter_mut() {
        c.split = Some(assignment[c.participant_id.as_str()]);
    }
    Ok(out)
}

/// Per-class signal recipe for the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    /// Benchmark id 0..=5; 5 is the negative class.
    pub benchmark_id: u8,
    /// Dominant frequency of the burst; ignored for the negative class.
    pub freq_hz: f64,
    pub amplitude: f64,
    /// Standard deviation of the Gaussian burst envelope, in samples.
    pub burst_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_participants: usize,
    pub n_clips_per_class: usize,
    pub seed: u64,
    pub clip_length_range: (usize, usize),
    pub sample_rate_hz: f64,
    pub window: usize,
    pub classes: Vec<SynthClass>,
    pub noise_std: f64,
    pub split_ratios: (f64, f64, f64),
    pub walk_recording_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let freqs = [3.0, 5.0, 8.0, 12.0, 17.0];
        let mut classes: Vec<SynthClass> = freqs
            .iter()
            .enumerate()
            .map(|(i, &f)| SynthClass {
                benchmark_id: i as u8,
                freq_hz: f,
                amplitude: 1.0,
                burst_width: 40.0,
            })
            .collect();
        classes.push(SynthClass {
            benchmark_id: NEGATIVE,
            freq_hz: 0.0,
            amplitude: 0.3,
            burst_width: 0.0,
        });
        Self {
            n_participants: 6,
            n_clips_per_class: 4,
            seed: 42,
            clip_length_range: (200, 260),
            sample_rate_hz: SAMPLE_RATE_HZ,
            window: 100,
            classes,
            noise_std: 0.1,
            split_ratios: (0.7, 0.15, 0.15),
            walk_recording_len: 3000,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.clip_length_range;
        if lo < self.window || hi < lo {
            return invalid(format!(
                "clip length range ({lo}, {hi}) must be ordered and at least the window {}",
                self.window
            ));
        }
        if self.n_participants == 0 || self.n_clips_per_class == 0 || self.classes.is_empty() {
            return invalid("synthetic spec needs participants, clips and classes");
        }
        for c in &self.classes {
            if c.benchmark_id > NEGATIVE {
                return invalid(format!("benchmark id {} out of range", c.benchmark_id));
            }
            if c.benchmark_id != NEGATIVE && !(c.freq_hz > 0.0 && c.freq_hz < self.sample_rate_hz / 2.0) {
                return invalid(format!("class frequency {} Hz outside Nyquist", c.freq_hz));
            }
        }
        Ok(())
    }
}

fn gravity(condition: Condition) -> [f64; 3] {
    match condition {
        Condition::Sitting => [0.0, 0.0, 9.81],
        Condition::Standing => [0.0, 9.81, 0.0],
        Condition::ArmDown => [-9.81, 0.0, 0.0],
        Condition::Walking => [0.0, 6.94, 6.94],
    }
}

/// One synthetic clip as `T x 7` samples. Positive classes carry a
/// Gaussian-windowed sinusoid at the class frequency on every IMU axis;
/// the negative class is broadband noise.
fn synth_samples(
    class: &SynthClass,
    t_len: usize,
    rate: f64,
    noise_std: f64,
    condition: Condition,
    participant_gain: f64,
    freq_jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    let g = gravity(condition);
    let center = t_len as f64 / 2.0 + rng.random_range(-10.0..10.0);
    let axis_gain: Vec<f64> = (0..IMU_CHANNELS)
        .map(|ch| {
            let base = if ch < 3 { 1.0 } else { 0.5 };
            base * rng.random_range(0.6..1.4)
        })
        .collect();
    let phase: Vec<f64> = (0..IMU_CHANNELS)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let freq = class.freq_hz * (1.0 + freq_jitter);
    let ppg_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut data = Vec::with_capacity(t_len * (IMU_CHANNELS + 1));
    for t in 0..t_len {
        let tf = t as f64;
        for ch in 0..IMU_CHANNELS {
            let mut v = if ch < 3 { g[ch] } else { 0.0 };
            if class.benchmark_id == NEGATIVE {
                v += class.amplitude * participant_gain * axis_gain[ch] * rng.sample::<f64, _>(StandardNormal);
            } else {
                let env = (-0.5 * ((tf - center) / class.burst_width).powi(2)).exp();
                v += class.amplitude
                    * participant_gain
                    * axis_gain[ch]
                    * env
                    * (std::f64::consts::TAU * freq * tf / rate + phase[ch]).sin();
            }
            v += noise_std * rng.sample::<f64, _>(StandardNormal);
            data.push(v);
        }
        let ppg = 100.0
            + 2.0 * (std::f64::consts::TAU * 1.2 * tf / rate + ppg_phase).sin()
            + 0.2 * rng.sample::<f64, _>(StandardNormal);
        data.push(ppg);
    }
    Matrix::new(t_len, IMU_CHANNELS + 1, data)
}

/// Generates the clips of a synthetic dataset in memory, in the same order
/// [`load_dataset`] would enumerate them.
pub fn synth_clips(spec: &SynthSpec) -> Result<Vec<(ClipEntry, SensorClip)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = ChannelLayout::canonical(spec.sample_rate_hz);
    let mut out = Vec::new();
    let mut negative_counter = 0usize;
    for p in 0..spec.n_participants {
        let pid = format!("p{:02}", p + 1);
        let wrist = if p % 2 == 0 { Wrist::Left } else { Wrist::Right };
        let participant_gain = rng.random_range(0.8..1.25);
        let freq_jitter = rng.random_range(-0.04..0.04);
        for class in &spec.classes {
            for k in 0..spec.n_clips_per_class {
                let class_id = if class.benchmark_id == NEGATIVE {
                    let id = 27 + (negative_counter % 32) as u8;
                    negative_counter += 1;
                    id
                } else {
                    BENCHMARK_CLASS_IDS[class.benchmark_id as usize]
                };
                let condition = Condition::ALL[k % Condition::ALL.len()];
                let (lo, hi) = spec.clip_length_range;
                let t_len = rng.random_range(lo..=hi);
                let samples = synth_samples(
                    class,
                    t_len,
                    spec.sample_rate_hz,
                    spec.noise_std,
                    condition,
                    participant_gain,
                    freq_jitter,
                    &mut rng,
                )?;
                let clip = SensorClip::new(
                    samples,
                    layout.clone(),
                    GestureLabel::new(class_id)?,
                    pid.clone(),
                    condition,
                    wrist,
                )?;
                let entry = ClipEntry {
                    path: format!("{pid}/{}/{class_id}_{k}.csv", condition.as_str()),
                    participant_id: pid.clone(),
                    condition,
                    class_id,
                    clip_idx: k as u32,
                    wrist,
                    split: None,
                };
                out.push((entry, clip));
            }
        }
    }
    out.sort_by(|a, b| a.0.path.cmp(&b.0.path));
    Ok(out)
}

/// Writes a synthetic dataset (clips, participant metadata, a walking
/// recording and a split index) under `out_dir`.
pub fn generate_synth(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetIndex> {
    let clips = synth_clips(spec)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut entries = Vec::with_capacity(clips.len());
    let mut metas: BTreeMap<String, Wrist> = BTreeMap::new();
    for (entry, clip) in &clips {
        write_clip_csv(&out_dir.join(&entry.path), &clip.samples, spec.sample_rate_hz)?;
        metas.insert(entry.participant_id.clone(), entry.wrist);
        entries.push(entry.clone());
    }
    for (pid, wrist) in &metas {
        let path = out_dir.join(pid).join("meta.json");
        let text = serde_json::to_string(&serde_json::json!({ "wrist": wrist }))?;
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    let walk = synth_walk_recording(spec.walk_recording_len, spec.sample_rate_hz, spec.seed)?;
    write_clip_csv(&out_dir.join(WALK_BANK_DIR).join("walk_0.csv"), &walk, spec.sample_rate_hz)?;
    let index = DatasetIndex {
        root: out_dir.to_path_buf(),
        sample_rate_hz: spec.sample_rate_hz,
        clips: entries,
    };
    let index = make_splits(&index, spec.split_ratios, spec.seed)?;
    index.write(&out_dir.join(INDEX_FILE))?;
    Ok(index)
}

/// Continuous synthetic walking recording (`T x 7`, PPG column constant).
pub fn synth_walk_recording(len: usize, rate: f64, seed: u64) -> Result<Matrix> {
    let bank = WalkBank::synthetic(1, len, rate, seed ^ 0x5741_4c4b)?;
    let seg = &bank.segments()[0];
    let mut data = Vec::with_capacity(len * 7);
    for t in 0..len {
        data.extend_from_slice(seg.row(t));
        data.push(100.0);
    }
    Matrix::new(len, 7, data)
}

/// Walking bank for augmentation: recordings under `_walk_bank/` if the
/// dataset has them, otherwise the concatenated training clips recorded in
/// the walking condition with a negative label.
pub fn load_walk_bank(index: &DatasetIndex, segment_len: usize) -> Result<WalkBank> {
    let dir = index.root.join(WALK_BANK_DIR);
    if dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let recs = files.iter().map(|f| read_clip_csv(f)).collect::<Result<Vec<_>>>()?;
        return WalkBank::from_recordings(&recs, segment_len);
    }
    let mut joined = Vec::new();
    let mut rows = 0;
    for e in index.clips_in(Split::Train) {
        if e.condition == Condition::Walking && e.label()?.benchmark_id == NEGATIVE {
            let clip = index.load_clip(e)?;
            joined.extend_from_slice(clip.samples.data());
            rows += clip.len();
        }
    }
    if rows == 0 {
        return invalid("no walking recordings available for the walk bank");
    }
    WalkBank::from_recordings(&[Matrix::new(rows, 7, joined)?], segment_len)
}

/// Continuous stream with `n_bursts` well separated 5 Hz gesture bursts,
/// returned with the sample index of each burst center.
pub fn synth_stream(n_bursts: usize, seed: u64) -> Result<(SensorClip, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = 300usize;
    let len = spacing * (n_bursts + 1);
    let centers: Vec<usize> = (1..=n_bursts)
        .map(|i| (i * spacing) as i64 + rng.random_range(-30i64..=30))
        .map(|c| c as usize)
        .collect();
    let amps: Vec<f64> = centers.iter().map(|_| rng.random_range(0.8..1.2)).collect();
    let phases: Vec<f64> = (0..IMU_CHANNELS)
        .map(|ch| ch as f64 * std::f64::consts::TAU / IMU_CHANNELS as f64)
        .collect();
    let g = gravity(Condition::Sitting);
    let mut data = Vec::with_capacity(len * 7);
    for t in 0..len {
        let tf = t as f64;
        let burst = centers
            .iter()
            .zip(&amps)
            .map(|(&c, &a)| a * (-0.5 * ((tf - c as f64) / 25.0).powi(2)).exp())
            .fold(0.0, f64::max);
        for ch in 0..IMU_CHANNELS {
            let base = if ch < 3 { g[ch] } else { 0.0 };
            let scale = if ch < 3 { 1.0 } else { 0.5 };
            let v = base
                + scale * burst * (std::f64::consts::TAU * 5.0 * tf / SAMPLE_RATE_HZ + phases[ch]).sin()
                + 0.02 * rng.sample::<f64, _>(StandardNormal);
            data.push(v);
        }
        data.push(100.0 + 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    let clip = SensorClip::new(
        Matrix::new(len, 7, data)?,
        ChannelLayout::canonical(SAMPLE_RATE_HZ),
        GestureLabel::new(BENCHMARK_CLASS_IDS[1])?,
        "stream",
        Condition::Sitting,
        Wrist::Unspecified,
    )?;
    Ok((clip, centers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_size_rounding() {
        assert_eq!(split_sizes(10, (0.8, 0.1, 0.1)).unwrap(), [8, 1, 1]);
        assert_eq!(split_sizes(6, (0.7, 0.15, 0.15)).unwrap(), [4, 1, 1]);
        assert_eq!(split_sizes(3, (0.7, 0.15, 0.15)).unwrap(), [1, 1, 1]);
        assert!(split_sizes(2, (0.7, 0.15, 0.15)).is_err());
        assert!(split_sizes(10, (0.5, 0.1, 0.1)).is_err());
    }

    #[test]
    fn synthetic_counts() {
        let clips = synth_clips(&SynthSpec::default()).unwrap();
        assert_eq!(clips.len(), 144);
        let negatives = clips.iter().filter(|(e, _)| e.label().unwrap().benchmark_id == NEGATIVE).count();
        assert_eq!(negatives, 24);
        for (_, c) in &clips {
            assert!((200..=260).contains(&c.len()));
        }
    }

    #[test]
    fn stream_centers_are_separated() {
        let (clip, centers) = synth_stream(7, 3).unwrap();
        assert_eq!(centers.len(), 7);
        assert!(centers.windows(2).all(|w| w[1] - w[0] >= 240));
        assert_eq!(clip.len(), 2400);
    }
}
