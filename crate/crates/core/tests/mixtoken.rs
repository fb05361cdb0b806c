mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wristgest::mixtoken::{
    class_weights, fit, fuse, fusion_weights, FitOptions, MixTokenConfig, MixTokenModel, PreparedWindow, TrainConfig,
};
use wristgest_nn::gradcheck::grad_check;
use wristgest_nn::optim::{AdamW, AdamWConfig};
use wristgest_nn::{Graph, Mode};

fn reduced() -> MixTokenConfig {
    MixTokenConfig::reduced()
}

fn rows(model: &MixTokenModel<f64>, ws: &[PreparedWindow]) -> Vec<Vec<f64>> {
    model.logits(ws, 64, false).unwrap()
}

#[test]
fn identical_windows_give_identical_rows() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let one = common::random_prepared(&cfg, 1, 3);
    let batch = vec![one[0].clone(); 4];
    let out = rows(&model, &batch);
    for r in &out[1..] {
        assert_eq!(r, &out[0]);
    }
}

#[test]
fn batch_permutation_permutes_outputs() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let ws = common::random_prepared(&cfg, 6, 4);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let shuffled: Vec<PreparedWindow> = perm.iter().map(|&i| ws[i].clone()).collect();
    let a = rows(&model, &ws);
    let b = rows(&model, &shuffled);
    for (j, &i) in perm.iter().enumerate() {
        for (x, y) in a[i].iter().zip(&b[j]) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn chunking_does_not_change_logits() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let ws = common::random_prepared(&cfg, 7, 5);
    let a = model.logits(&ws, 64, false).unwrap();
    let b = model.logits(&ws, 2, false).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn zero_input_is_a_fixed_point_of_the_seeded_model() {
    let cfg = reduced();
    let mut w = common::random_prepared(&cfg, 1, 6).remove(0);
    w.bands.iter_mut().for_each(|v| *v = 0.0);
    w.groups.iter_mut().flatten().for_each(|v| *v = 0.0);
    let a = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let b = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let ra = rows(&a, std::slice::from_ref(&w));
    assert_eq!(ra, rows(&b, std::slice::from_ref(&w)));
    assert!(ra[0].iter().all(|v| v.is_finite()));
    assert_eq!(ra[0].len(), cfg.n_classes);
    let other = MixTokenModel::<f64>::new(MixTokenConfig { init_seed: 43, ..cfg }).unwrap();
    assert_ne!(ra, rows(&other, std::slice::from_ref(&w)));
}

#[test]
fn swapping_token_contents_changes_the_embedding() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let w = common::random_prepared(&cfg, 1, 7).remove(0);
    let mut swapped = w.clone();
    let l = w.groups[0].len() / cfg.n_channels();
    let (a, b) = swapped.groups[0].split_at_mut(l);
    a.swap_with_slice(&mut b[..l]);
    assert_ne!(swapped.groups[0], w.groups[0]);

    let embed = |x: &PreparedWindow| {
        let mut g = Graph::new(&model.store, Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (e, _, _) = model.stat_branch(&mut g, &[x], &mut rng).unwrap();
        g.value(e).to_f64_vec()
    };
    let d = embed(&w)
        .iter()
        .zip(embed(&swapped))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(d > 1e-6, "embedding moved by only {d}");
}

#[test]
fn pooling_weights_are_a_distribution() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let ws = common::random_prepared(&cfg, 3, 8);
    let refs: Vec<&PreparedWindow> = ws.iter().collect();
    let mut g = Graph::new(&model.store, Mode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut g, &refs, &mut rng, false).unwrap();
    let probs = g.attention_probs(out.pool.unwrap()).unwrap();
    let n_tokens = wristgest::features::token_count(cfg.n_channels());
    assert_eq!(probs.len(), 3 * n_tokens);
    for row in probs.chunks(n_tokens) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn token_count_mismatch_is_rejected() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let mut w = common::random_prepared(&cfg, 1, 9).remove(0);
    w.groups[2].pop();
    assert!(model.logits(&[w], 8, false).is_err());
}

#[test]
fn fused_head_gets_gradient_from_both_embeddings() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let ws = common::random_prepared(&cfg, 4, 10);
    let refs: Vec<&PreparedWindow> = ws.iter().collect();
    let targets: Vec<usize> = ws.iter().map(|w| w.label).collect();
    let mut g = Graph::new(&model.store, Mode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut g, &refs, &mut rng, false).unwrap();
    let loss = g.cross_entropy(out.fused.unwrap(), &targets, None).unwrap();
    let grads = g.backward(loss).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm(grads.wrt(out.e_cnn).unwrap()) > 1e-8);
    assert!(norm(grads.wrt(out.e_attn.unwrap()).unwrap()) > 1e-8);
}

#[test]
fn reduced_model_gradients_match_finite_differences() {
    let cfg = reduced();
    let model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    assert!(model.num_params() <= 5000);
    let ws = common::random_prepared(&cfg, 3, 11);
    let targets: Vec<usize> = ws.iter().map(|w| w.label).collect();
    let weights = class_weights(&targets, cfg.n_classes);
    let report = grad_check(&model.store, 1e-5, 1e-6, |g| {
        let refs: Vec<&PreparedWindow> = ws.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(g, &refs, &mut rng, false).map_err(|e| wristgest_nn::NnError::InvalidArgument(e.to_string()))?;
        g.cross_entropy(out.logits, &targets, Some(&weights))
    })
    .unwrap();
    let worst = report.worst().unwrap();
    assert!(report.max_rel_err() < 1e-3, "{} has relative error {}", worst.name, worst.max_rel_err);
}

#[test]
fn separable_toy_batch_loss_decreases() {
    let cfg = MixTokenConfig {
        n_classes: 2,
        ..reduced()
    };
    let mut model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let ws = common::tone_prepared(&cfg, 4, 1, 12);
    let refs: Vec<&PreparedWindow> = ws.iter().collect();
    let targets: Vec<usize> = ws.iter().map(|w| w.label).collect();
    let mut opt = AdamW::new(&model.store, AdamWConfig::default());
    let mut losses = Vec::new();
    for _ in 0..6 {
        let grads = {
            let mut g = Graph::new(&model.store, Mode::Train);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = model.forward(&mut g, &refs, &mut rng, false).unwrap();
            let loss = g.cross_entropy(out.logits, &targets, None).unwrap();
            losses.push(g.value(loss).item());
            g.backward(loss).unwrap().into_param_grads(&model.store)
        };
        opt.step(&mut model.store, &grads, 1e-3).unwrap();
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss sequence {losses:?}");
    }
}

fn small_run(seed: u64) -> (MixTokenModel<f64>, wristgest::mixtoken::History) {
    let cfg = MixTokenConfig {
        n_classes: 3,
        ..reduced()
    };
    let train = common::tone_prepared(&cfg, 4, 2, 13);
    let val = common::tone_prepared(&cfg, 2, 2, 14);
    let mut model = MixTokenModel::<f64>::new(cfg).unwrap();
    let tc = TrainConfig {
        max_epochs: 6,
        patience: 2,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    };
    let h = fit(&mut model, &train, &val, &tc, FitOptions::default(), |_| {}).unwrap();
    (model, h)
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let (m1, h1) = small_run(42);
    let (m2, h2) = small_run(42);
    assert_eq!(h1, h2);
    for id in m1.store.ids() {
        assert_eq!(m1.store.value(id).to_f64_vec(), m2.store.value(id).to_f64_vec());
    }
    let best = h1.best().unwrap();
    assert!(h1.epochs.iter().all(|r| best.val_macro_f1 >= r.val_macro_f1));
    let first_best = h1
        .epochs
        .iter()
        .find(|r| r.val_macro_f1 == best.val_macro_f1)
        .unwrap();
    assert_eq!(first_best.epoch, best.epoch);
    for r in &h1.epochs {
        assert!((r.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let cfg = reduced();
    let ws = common::random_prepared(&cfg, 6, 15);
    let mut model = MixTokenModel::<f64>::new(cfg.clone()).unwrap();
    let before = model.store.clone();
    let tc = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let h = fit(&mut model, &ws, &ws, &tc, FitOptions::default(), |_| {}).unwrap();
    assert!(h.epochs.is_empty() && h.best_epoch.is_none());
    for id in before.ids() {
        assert_eq!(before.value(id).to_f64_vec(), model.store.value(id).to_f64_vec());
    }
    assert!(fit(&mut model, &[], &ws, &TrainConfig::default(), FitOptions::default(), |_| {}).is_err());
}

#[test]
fn fusion_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let v = |rng: &mut ChaCha8Rng| (0..6).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    let (a, b, c) = (v(&mut rng), v(&mut rng), v(&mut rng));
    let mean = fuse(&a, &b, &c, [0.0; 3]).unwrap();
    for i in 0..6 {
        assert!((mean[i] - (a[i] + b[i] + c[i]) / 3.0).abs() < 1e-12);
    }
    let sat = fuse(&a, &b, &c, [20.0, 0.0, 0.0]).unwrap();
    assert!(sat.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-6 * 10.0));
}

proptest! {
    #[test]
    fn fusion_is_convex_and_shift_equivariant(
        w in prop::array::uniform3(-30.0f64..30.0),
        heads in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 1..8),
        shift in -100.0f64..100.0,
    ) {
        let pi = fusion_weights(w);
        prop_assert!(pi.iter().all(|&p| p >= 0.0));
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (a, b, c): (Vec<f64>, Vec<f64>, Vec<f64>) =
            (heads.iter().map(|h| h[0]).collect(), heads.iter().map(|h| h[1]).collect(), heads.iter().map(|h| h[2]).collect());
        let y = fuse(&a, &b, &c, w).unwrap();
        for i in 0..y.len() {
            let lo = a[i].min(b[i]).min(c[i]);
            let hi = a[i].max(b[i]).max(c[i]);
            prop_assert!(y[i] >= lo - 1e-9 && y[i] <= hi + 1e-9);
        }
        let add = |v: &[f64]| v.iter().map(|x| x + shift).collect::<Vec<f64>>();
        let ys = fuse(&add(&a), &add(&b), &add(&c), w).unwrap();
        for i in 0..y.len() {
            prop_assert!((ys[i] - y[i] - shift).abs() < 1e-9);
        }
    }
}
