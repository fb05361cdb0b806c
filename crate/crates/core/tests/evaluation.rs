mod common;

use proptest::prelude::*;
use wristgest::evaluation::*;

fn names(k: usize) -> Vec<String> {
    default_class_names(k)
}

#[test]
fn perfect_predictions() {
    let t = vec![0, 1, 2, 2, 1, 0, 2];
    let r = window_metrics(&t, &t, &names(3)).unwrap();
    assert_eq!((r.accuracy, r.macro_f1, r.micro_f1, r.weighted_f1), (1.0, 1.0, 1.0, 1.0));
    for (i, row) in r.confusion.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            assert_eq!(c == 0, i != j);
        }
    }
}

#[test]
fn two_by_two_confusion() {
    let truths = [0, 0, 0, 1, 1, 1];
    let preds = [0, 0, 1, 0, 1, 1];
    let r = window_metrics(&preds, &truths, &names(2)).unwrap();
    assert_eq!(r.confusion.counts, vec![vec![2, 1], vec![1, 2]]);
    for c in &r.per_class {
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-12);
    }
    assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn absent_class_counts_as_zero_f1() {
    let r = window_metrics(&[0, 0], &[0, 0], &names(2)).unwrap();
    assert_eq!(r.per_class[1].f1, 0.0);
    assert!((r.macro_f1 - 0.5).abs() < 1e-12);
    assert!(window_metrics(&[0], &[0, 1], &names(2)).is_err());
    assert!(window_metrics(&[], &[], &names(2)).is_err());
    assert!(window_metrics(&[3], &[0], &names(2)).is_err());
}

#[test]
fn aggregation_examples() {
    assert_eq!(aggregate_clip(&[0, 0, 0, 1, 1, 1], 3).unwrap(), 0);
    assert_eq!(aggregate_clip(&[0, 1, 0, 1, 0], 3).unwrap(), 0);
    assert_eq!(aggregate_clip(&[2, 1, 1, 2], 3).unwrap(), 2);
    assert_eq!(aggregate_clip(&[3, 0, 0, 0], 1).unwrap(), 3);
    assert!(aggregate_clip(&[], 3).is_err());
}

#[test]
fn exhaustive_agreement_with_brute_force() {
    let mut mismatches = 0;
    for code in 0..4usize.pow(6) {
        let seq: Vec<usize> = (0..6).map(|i| code / 4usize.pow(i) % 4).collect();
        if aggregate_clip(&seq, 3).unwrap() != common::brute_force_clip(&seq, 3) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn scattered_errors_are_absorbed_at_clip_level() {
    let mut windows = Vec::new();
    for clip in 0..4usize {
        for i in 0..6usize {
            let wrong = i == 1 || i == 4;
            windows.push(WindowPrediction {
                clip_ref: format!("c{clip}"),
                start_index: i * 20,
                pred: if wrong { (clip + 1) % 4 } else { clip },
                truth: clip,
            });
        }
    }
    windows.reverse();
    let preds: Vec<usize> = windows.iter().map(|w| w.pred).collect();
    let truths: Vec<usize> = windows.iter().map(|w| w.truth).collect();
    let win = window_metrics(&preds, &truths, &names(4)).unwrap();
    let clip = clip_metrics(&windows, 3, &names(4)).unwrap();
    assert!(win.accuracy < 1.0);
    assert_eq!(clip.accuracy, 1.0);
    assert_eq!(clip.k, Some(3));
    assert_eq!(clip.n_items, 4);
}

#[test]
fn report_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let preds = [0, 1, 1, 2, 0, 2, 2];
    let truths = [0, 1, 2, 2, 0, 1, 0];
    let r = window_metrics(&preds, &truths, &names(4)).unwrap();
    let formats = ReportFormat::parse_list("json,csv,svg").unwrap();
    let trace = [[1.0 / 3.0; 3], [0.3, 0.3, 0.4]];
    let files = emit_report(&r, &formats, dir.path(), "window", Some(&trace)).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    assert_eq!(read_report(&dir.path().join("window.json")).unwrap(), r);

    let csv_text = std::fs::read_to_string(dir.path().join("window_confusion.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let supports = r.confusion.supports();
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.unwrap();
        let s: u64 = rec.iter().skip(1).map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(s, supports[i]);
        n += 1;
    }
    assert_eq!(n, 4);
    let svg = std::fs::read_to_string(dir.path().join("window_confusion.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(dir.path().join("fusion_weights.svg").exists());

    for row in r.confusion.row_normalized() {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-9 || s == 0.0);
    }
    assert!(ReportFormat::parse_list("json,pdf").is_err());
}

fn labels(k: usize, n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

proptest! {
    #[test]
    fn micro_f1_is_accuracy((preds, truths) in (1usize..40).prop_flat_map(|n| (labels(3, n), labels(3, n)))) {
        let r = window_metrics(&preds, &truths, &names(3)).unwrap();
        prop_assert_eq!(r.micro_f1, r.accuracy);
        for v in [r.accuracy, r.macro_f1, r.weighted_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn macro_f1_survives_relabeling(
        (preds, truths) in (1usize..40).prop_flat_map(|n| (labels(4, n), labels(4, n))),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let a = macro_f1(&preds, &truths, 4).unwrap();
        let p2: Vec<usize> = preds.iter().map(|&x| perm[x]).collect();
        let t2: Vec<usize> = truths.iter().map(|&x| perm[x]).collect();
        let b = macro_f1(&p2, &t2, 4).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn early_stop_is_prefix_monotone(seq in labels(3, 12), k in 1usize..4) {
        let stop = (0..seq.len()).find(|&i| i + 1 >= k && seq[i + 1 - k..=i].iter().all(|&x| x == seq[i]));
        if let Some(i) = stop {
            let fired = aggregate_clip(&seq[..=i], k).unwrap();
            for end in i + 1..=seq.len() {
                prop_assert_eq!(aggregate_clip(&seq[..end], k).unwrap(), fired);
            }
        }
    }

    #[test]
    fn agrees_with_brute_force_on_longer_sequences(seq in prop::collection::vec(0usize..5, 1..15), k in 1usize..5) {
        prop_assert_eq!(aggregate_clip(&seq, k).unwrap(), common::brute_force_clip(&seq, k));
    }
}
