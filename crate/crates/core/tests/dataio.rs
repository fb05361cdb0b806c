use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wristgest::dataio::*;
use wristgest::domain::{Condition, Matrix, Wrist};
use wristgest::features::{freq_features, SpectrumPlanner};

fn write_raw(path: &Path, header: &str, rows: &[String]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn directory_layout_is_indexed() {
    let dir = tempfile::tempdir().unwrap();
    let header = "t,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,ppg";
    let rows: Vec<String> = (0..5).map(|i| format!("{},1,2,3,4,5,6,7", i * 10)).collect();
    for p in ["p01", "p02"] {
        for (c, name) in [(3, "3_0"), (16, "16_1"), (41, "41_0")] {
            let _ = c;
            write_raw(&dir.path().join(p).join("sitting").join(format!("{name}.csv")), header, &rows);
        }
    }
    fs::write(dir.path().join("p02/meta.json"), r#"{"wrist": "right"}"#).unwrap();
    let idx = load_dataset(dir.path()).unwrap();
    assert_eq!(idx.clips.len(), 6);
    assert_eq!(idx.participants(), vec!["p01", "p02"]);
    let p2: Vec<_> = idx.clips.iter().filter(|c| c.participant_id == "p02").collect();
    assert!(p2.iter().all(|c| c.wrist == Wrist::Right && c.condition == Condition::Sitting));
    let labels: BTreeSet<u8> = idx.clips.iter().map(|c| c.label().unwrap().benchmark_id).collect();
    assert_eq!(labels, BTreeSet::from([0, 3, 5]));
    let clip = idx.load_clip(&idx.clips[0]).unwrap();
    assert_eq!(clip.samples.row(0), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
}

#[test]
fn ppg_columns_are_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    let rows: Vec<String> = (0..3).map(|i| format!("{i},0,0,0,0,0,0,10,20")).collect();
    write_raw(&path, "t,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,ppg_1,ppg_2", &rows);
    let m = read_clip_csv(&path).unwrap();
    assert_eq!(m.column(6), vec![15.0; 3]);
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let rows = vec!["0,0,0,0,0,0,0,1".to_string(), "10,0,x,0,0,0,0,1".to_string()];
    write_raw(&path, "t,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,ppg", &rows);
    let err = read_clip_csv(&path).unwrap_err().to_string();
    assert!(err.contains('3'), "{err}");
    let path = dir.path().join("noppg.csv");
    write_raw(&path, "t,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z", &["0,0,0,0,0,0,0".to_string()]);
    assert!(read_clip_csv(&path).is_err());
}

#[test]
fn synth_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_participants: 3,
        n_clips_per_class: 1,
        ..SynthSpec::default()
    };
    let idx = generate_synth(&spec, dir.path()).unwrap();
    let mem = synth_clips(&spec).unwrap();
    let reread = load_dataset(dir.path()).unwrap();
    assert_eq!(reread.clips.len(), mem.len());
    let from_file = DatasetIndex::read(&dir.path().join(INDEX_FILE)).unwrap();
    assert_eq!(from_file.clips, idx.clips);
    for (entry, clip) in &mem {
        let loaded = idx.load_clip(idx.clips.iter().find(|c| c.path == entry.path).unwrap()).unwrap();
        for (a, b) in loaded.samples.data().iter().zip(clip.samples.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn synth_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_clips_per_class: 1,
        ..SynthSpec::default()
    };
    generate_synth(&spec, a.path()).unwrap();
    generate_synth(&spec, b.path()).unwrap();
    assert_eq!(files_under(a.path()), files_under(b.path()));
}

#[test]
fn synth_default_counts() {
    let clips = synth_clips(&SynthSpec::default()).unwrap();
    assert_eq!(clips.len(), 144);
}

#[test]
fn synth_peak_frequency_matches_class() {
    let spec = SynthSpec::default();
    let class5 = spec.classes.iter().position(|c| c.freq_hz == 5.0).unwrap();
    let mut planner = SpectrumPlanner::new();
    let mut n = 0;
    for (entry, clip) in synth_clips(&spec).unwrap() {
        if entry.label().unwrap().benchmark_id as usize != class5 {
            continue;
        }
        let mid = clip.len() / 2 - 50;
        let x: Vec<f64> = clip.samples.column(0)[mid..mid + 100].to_vec();
        let f = freq_features(&x, 100.0, 3, &[(0.1, 3.0), (3.0, 10.0), (10.0, 30.0)], &mut planner);
        let peak = f[3];
        assert!((peak - 5.0).abs() <= 1.0, "peak {peak} Hz");
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn split_partition_examples() {
    let mut clips = Vec::new();
    for p in 0..10 {
        for k in 0..3u32 {
            clips.push(ClipEntry {
                path: format!("p{p}/sitting/3_{k}.csv"),
                participant_id: format!("p{p:02}"),
                condition: Condition::Sitting,
                class_id: 3,
                clip_idx: k,
                wrist: Wrist::Left,
                split: None,
            });
        }
    }
    let idx = DatasetIndex {
        root: Default::default(),
        sample_rate_hz: 100.0,
        clips,
    };
    let a = make_splits(&idx, (0.8, 0.1, 0.1), 42).unwrap();
    let b = make_splits(&idx, (0.8, 0.1, 0.1), 42).unwrap();
    assert_eq!(a, b);
    let mut per_split: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for c in &a.clips {
        per_split.entry(c.split.unwrap()).or_default().insert(c.participant_id.clone());
    }
    assert_eq!(per_split[&Split::Train].len(), 8);
    assert_eq!(per_split[&Split::Val].len(), 1);
    assert_eq!(per_split[&Split::Test].len(), 1);
    let all: BTreeSet<&String> = per_split.values().flatten().collect();
    assert_eq!(all.len(), 10);
}

/// Re-runs the greedy participant balancer from its definition.
fn greedy_oracle(idx: &DatasetIndex, ratios: (f64, f64, f64), seed: u64) -> BTreeMap<String, usize> {
    use rand::seq::SliceRandom;
    let mut per: BTreeMap<String, BTreeMap<Condition, usize>> = BTreeMap::new();
    for c in &idx.clips {
        *per.entry(c.participant_id.clone()).or_default().entry(c.condition).or_default() += 1;
    }
    let n = per.len();
    let val = ((n as f64 * ratios.1).round() as usize).max(1);
    let test = ((n as f64 * ratios.2).round() as usize).max(1);
    let caps = [n - val - test, val, test];
    let mut order: Vec<(String, BTreeMap<Condition, usize>)> = per.clone().into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|a, b| b.1.values().sum::<usize>().cmp(&a.1.values().sum::<usize>()));
    let shares = [ratios.0, ratios.1, ratios.2];
    let mut totals: BTreeMap<Condition, f64> = BTreeMap::new();
    for m in per.values() {
        for (c, k) in m {
            *totals.entry(*c).or_default() += *k as f64;
        }
    }
    let mut have = vec![BTreeMap::<Condition, f64>::new(); 3];
    let mut used = [0usize; 3];
    let mut out = BTreeMap::new();
    for (pid, m) in order {
        let mut pick = None;
        let mut best = f64::NEG_INFINITY;
        for s in 0..3 {
            if used[s] == caps[s] {
                continue;
            }
            let mut score = 0.0;
            for (c, k) in &m {
                let target = totals[c] * shares[s];
                score += *k as f64 * (target - have[s].get(c).copied().unwrap_or(0.0)) / target.max(1e-12);
            }
            if pick.is_none() || score > best {
                pick = Some(s);
                best = score;
            }
        }
        let s = pick.unwrap();
        used[s] += 1;
        for (c, k) in &m {
            *have[s].entry(*c).or_default() += *k as f64;
        }
        out.insert(pid, s);
    }
    out
}

#[test]
fn condition_balance_matches_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut clips = Vec::new();
    for p in 0..12 {
        for cond in [Condition::Sitting, Condition::Walking] {
            for k in 0..rng.random_range(1..6u32) {
                clips.push(ClipEntry {
                    path: format!("p{p}/{}/4_{k}.csv", cond.as_str()),
                    participant_id: format!("p{p:02}"),
                    condition: cond,
                    class_id: 4,
                    clip_idx: k,
                    wrist: Wrist::Unspecified,
                    split: None,
                });
            }
        }
    }
    let idx = DatasetIndex {
        root: Default::default(),
        sample_rate_hz: 100.0,
        clips,
    };
    let ratios = (0.7, 0.15, 0.15);
    let split = make_splits(&idx, ratios, 42).unwrap();
    let oracle = greedy_oracle(&idx, ratios, 42);
    for c in &split.clips {
        assert_eq!(Split::ALL[oracle[&c.participant_id]], c.split.unwrap());
    }
}

proptest! {
    #[test]
    fn csv_round_trip_is_bit_exact(rows in 1usize..20, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * 7).map(|_| rng.random_range(-1e3..1e3) * rng.random::<f64>()).collect();
        let m = Matrix::new(rows, 7, data).unwrap();
        let path = dir.path().join("x.csv");
        write_clip_csv(&path, &m, 100.0).unwrap();
        let back = read_clip_csv(&path).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn split_sizes_partition(n in 3usize..60) {
        if let Ok([a, b, c]) = split_sizes(n, (0.7, 0.15, 0.15)) {
            prop_assert_eq!(a + b + c, n);
            prop_assert!(a >= 1 && b >= 1 && c >= 1);
        }
    }
}
