#![allow(dead_code)]

pub mod feature_oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wristgest::domain::{GestureLabel, Matrix, Window, BENCHMARK_CLASS_IDS};
use wristgest::features::FeatureMasks;
use wristgest::mixtoken::{MixTokenConfig, PreparedWindow, Preparer};

/// Raw class id whose benchmark id is `k` (27 stands in for the negatives).
pub fn class_id_for(k: usize) -> u8 {
    BENCHMARK_CLASS_IDS.get(k).copied().unwrap_or(27)
}

/// Window of `len` samples over 7 channels; class `k` oscillates at
/// `2 + 3k` Hz with small noise.
pub fn tone_window(len: usize, k: usize, rng: &mut ChaCha8Rng, clip_ref: &str, start: usize) -> Window {
    let f = 2.0 + 3.0 * k as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut data = Vec::with_capacity(len * 7);
    for t in 0..len {
        let s = (std::f64::consts::TAU * f * t as f64 / 100.0 + phase).sin();
        for c in 0..7 {
            data.push(s * (1.0 + 0.1 * c as f64) + 0.05 * rng.random_range(-1.0..1.0));
        }
    }
    Window {
        samples: Matrix::new(len, 7, data).unwrap(),
        label: GestureLabel::new(class_id_for(k)).unwrap(),
        clip_ref: clip_ref.to_string(),
        start_index: start,
    }
}

pub fn random_window(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Window {
    let data = (0..len * 7).map(|_| rng.random_range(-2.0..2.0)).collect();
    Window {
        samples: Matrix::new(len, 7, data).unwrap(),
        label: GestureLabel::new(class_id_for(k)).unwrap(),
        clip_ref: "random".into(),
        start_index: 0,
    }
}

pub fn prepare(cfg: &MixTokenConfig, windows: &[Window]) -> Vec<PreparedWindow> {
    Preparer::new(cfg, FeatureMasks::NONE).unwrap().prepare_all(windows).unwrap()
}

pub fn random_prepared(cfg: &MixTokenConfig, n: usize, seed: u64) -> Vec<PreparedWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws: Vec<Window> = (0..n)
        .map(|i| random_window(cfg.window_len, i % cfg.n_classes, &mut rng))
        .collect();
    prepare(cfg, &ws)
}

/// Tone windows grouped into clips of `per_clip` consecutive windows.
pub fn tone_prepared(cfg: &MixTokenConfig, n_clips_per_class: usize, per_clip: usize, seed: u64) -> Vec<PreparedWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = Vec::new();
    for k in 0..cfg.n_classes {
        for c in 0..n_clips_per_class {
            for i in 0..per_clip {
                ws.push(tone_window(cfg.window_len, k, &mut rng, &format!("k{k}c{c}"), i * 10));
            }
        }
    }
    prepare(cfg, &ws)
}

/// Reference clip aggregation: find the smallest end index of any window of
/// `k` equal labels; otherwise count labels and break ties by first position.
pub fn brute_force_clip(seq: &[usize], k: usize) -> usize {
    let mut first_end: Option<usize> = None;
    for start in 0..seq.len() {
        let end = start + k - 1;
        if end < seq.len() && seq[start..=end].iter().all(|&x| x == seq[start]) {
            first_end = Some(first_end.map_or(end, |e: usize| e.min(end)));
        }
    }
    if let Some(e) = first_end {
        return seq[e];
    }
    let max_label = *seq.iter().max().unwrap();
    let counts: Vec<usize> = (0..=max_label).map(|l| seq.iter().filter(|&&x| x == l).count()).collect();
    let top = *counts.iter().max().unwrap();
    *seq.iter().find(|&&l| counts[l] == top).unwrap()
}
