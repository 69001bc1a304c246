use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::csi::{extract_windows, synth_generate, SynthSpec};
use crate::model::{init_params, load_checkpoint, ModelConfig, ParamSet};

// ---------------------------------------------------------------------------
// cross-entropy
// ---------------------------------------------------------------------------

#[test]
fn cross_entropy_of_uniform_logits_is_ln_c() {
    let logits = Tensor::<f64>::filled(&[4, 3], 0.7);
    let loss = cross_entropy(&logits, &[0, 1, 2, 0]).unwrap();
    assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    assert!((loss - 1.098612).abs() < 1e-6);
}

#[test]
fn cross_entropy_saturates_on_confident_correct_logit() {
    let mut logits = Tensor::<f64>::zeros(&[1, 4]);
    logits.data_mut()[2] = 30.0;
    let loss = cross_entropy(&logits, &[2]).unwrap();
    assert!(loss < 1e-12, "loss {}", loss);
}

#[test]
fn cross_entropy_matches_direct_softmax_log_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (b, c) = (6, 5);
    let data: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let logits = Tensor::from_vec(&[b, c], data).unwrap();
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
    let loss = cross_entropy(&logits, &labels).unwrap();
    let mut expect = 0.0f64;
    for (bi, &label) in labels.iter().enumerate() {
        let row = &logits.data()[bi * c..(bi + 1) * c];
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        expect += -(row[label].exp() / denom).ln();
    }
    expect /= b as f64;
    assert!((loss - expect).abs() < 1e-9);
    assert!(loss >= 0.0);
}

#[test]
fn cross_entropy_rejects_out_of_range_label() {
    let logits = Tensor::<f64>::zeros(&[2, 3]);
    assert!(cross_entropy(&logits, &[0, 3]).is_err());
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        in_channels: 1,
        in_freq: 4,
        seq_len: 8,
        d_model: 8,
        encoder_layers: 1,
        heads: 2,
        ffn_dim: 16,
        classes: 3,
        dropout: 0.1,
        gauss_count: 2,
        pe_includes_cls: true,
        encoder_dropout: true,
        bn_momentum: 0.1,
    }
}

fn no_grads(params: &ParamSet<Tensor<f64>>) -> ParamSet<Option<Tensor<f64>>> {
    params.map(&mut |_| None)
}

#[test]
fn adamw_zero_gradient_step_applies_pure_decay() {
    let cfg = tiny_cfg();
    let before: ParamSet<Tensor<f64>> = init_params(&cfg, 3).unwrap();
    let mut after = before.clone();
    let mut state = OptimizerState::new(&before);
    let optim = OptimConfig::default(); // lr 1e-3, wd 1e-3
    adamw_step(&mut after, &no_grads(&before), &mut state, &optim).unwrap();
    assert_eq!(state.step, 1);
    let factor = 1.0 - 1e-3 * 1e-3;
    after.zip_mut(&before, &mut |name, now, was: &Tensor<f64>| {
        for (a, b) in now.data().iter().zip(was.data()) {
            if crate::model::decays(name) {
                assert_eq!(a.to_bits(), (b * factor).to_bits(), "{}", name);
            } else {
                assert_eq!(a.to_bits(), b.to_bits(), "{}", name);
            }
        }
    });
}

#[test]
fn adamw_first_step_is_signed_learning_rate() {
    let cfg = tiny_cfg();
    let before: ParamSet<Tensor<f64>> = init_params(&cfg, 4).unwrap();
    let mut after = before.clone();
    let mut state = OptimizerState::new(&before);
    let optim = OptimConfig::default();
    let g = 0.7f64;
    // constant gradient on a never-decayed tensor
    let grads = before.map(&mut |_| None);
    let mut grads = grads;
    grads.class_token = Some(Tensor::filled(&[8], g));
    adamw_step(&mut after, &grads, &mut state, &optim).unwrap();
    for (a, b) in after.class_token.data().iter().zip(before.class_token.data()) {
        let update = a - b;
        let expect = -optim.lr * g / (g + optim.eps);
        assert!((update - expect).abs() < 1e-15, "{} vs {}", update, expect);
        assert!((update + optim.lr).abs() < 1e-8); // ~ -lr * sign(g)
    }
}

/// Elementwise scalar AdamW, hand-rolled, mirroring the documented order:
/// decay first, then bias-corrected moment update.
struct ScalarAdamW {
    m: f64,
    v: f64,
    t: u32,
}

impl ScalarAdamW {
    fn step(&mut self, theta: f64, g: f64, o: &OptimConfig, decayed: bool) -> f64 {
        self.t += 1;
        let mut theta = theta;
        if decayed {
            theta *= 1.0 - o.lr * o.weight_decay;
        }
        self.m = o.betas.0 * self.m + (1.0 - o.betas.0) * g;
        self.v = o.betas.1 * self.v + (1.0 - o.betas.1) * g * g;
        let m_hat = self.m / (1.0 - o.betas.0.powi(self.t as i32));
        let v_hat = self.v / (1.0 - o.betas.1.powi(self.t as i32));
        theta - o.lr * m_hat / (v_hat.sqrt() + o.eps)
    }
}

#[test]
fn adamw_quadratic_trajectory_matches_scalar_oracle() {
    let cfg = tiny_cfg();
    let mut params: ParamSet<Tensor<f64>> = init_params(&cfg, 5).unwrap();
    // f(theta) = sum theta^2 on the head weight, gradient 2*theta, from 1.0
    params.head.weight = Tensor::filled(&[8, 3], 1.0);
    let mut state = OptimizerState::new(&params);
    let optim = OptimConfig::default();
    let mut oracle = ScalarAdamW { m: 0.0, v: 0.0, t: 0 };
    let mut theta_oracle = 1.0f64;
    for _ in 0..10 {
        let g = params.head.weight.map(|v| 2.0 * v);
        let g_oracle = 2.0 * theta_oracle;
        let mut grads = no_grads(&params);
        grads.head.weight = Some(g);
        adamw_step(&mut params, &grads, &mut state, &optim).unwrap();
        theta_oracle = oracle.step(theta_oracle, g_oracle, &optim, true);
        for &v in params.head.weight.data() {
            assert!((v - theta_oracle).abs() < 1e-10, "{} vs {}", v, theta_oracle);
        }
    }
}

#[test]
fn adamw_reports_non_finite_gradient_with_name() {
    let cfg = tiny_cfg();
    let mut params: ParamSet<Tensor<f64>> = init_params(&cfg, 6).unwrap();
    let mut state = OptimizerState::new(&params);
    let mut grads = no_grads(&params);
    grads.pos.sigma = Some(Tensor::filled(&[2], f64::NAN));
    let err = adamw_step(&mut params, &grads, &mut state, &OptimConfig::default()).unwrap_err();
    assert_eq!(err.code(), "numeric_error");
    assert!(err.to_string().contains("pos.sigma"));
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

#[test]
fn perfect_predictions_give_unit_metrics() {
    let m = Metrics::from_confusion(vec![vec![5, 0], vec![0, 7]]);
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.precision_macro, 1.0);
    assert_eq!(m.recall_macro, 1.0);
    assert_eq!(m.f1_macro, 1.0);
}

#[test]
fn symmetric_confusion_gives_half_everywhere() {
    let m = Metrics::from_confusion(vec![vec![1, 1], vec![1, 1]]);
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.precision_macro, 0.5);
    assert_eq!(m.recall_macro, 0.5);
    assert_eq!(m.f1_macro, 0.5);
}

#[test]
fn metrics_match_a_direct_counting_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let c = 4;
    let pairs: Vec<(usize, usize)> = (0..200)
        .map(|_| (rng.gen_range(0..c), rng.gen_range(0..c)))
        .collect();
    let mut confusion = vec![vec![0u64; c]; c];
    for &(label, pred) in &pairs {
        confusion[label][pred] += 1;
    }
    let m = Metrics::from_confusion(confusion.clone());
    // accuracy from raw pairs
    let correct = pairs.iter().filter(|(l, p)| l == p).count();
    assert!((m.accuracy - correct as f64 / 200.0).abs() < 1e-12);
    // per-class precision/recall from raw pairs
    let mut psum = 0.0;
    let mut rsum = 0.0;
    for k in 0..c {
        let tp = pairs.iter().filter(|&&(l, p)| l == k && p == k).count() as f64;
        let pred_k = pairs.iter().filter(|&&(_, p)| p == k).count() as f64;
        let act_k = pairs.iter().filter(|&&(l, _)| l == k).count() as f64;
        psum += if pred_k == 0.0 { 0.0 } else { tp / pred_k };
        rsum += if act_k == 0.0 { 0.0 } else { tp / act_k };
    }
    assert!((m.precision_macro - psum / c as f64).abs() < 1e-12);
    assert!((m.recall_macro - rsum / c as f64).abs() < 1e-12);
    // identity: metrics are recomputable from the stored confusion
    assert_eq!(m, Metrics::from_confusion(m.confusion.clone()));
}

#[test]
fn empty_class_uses_zero_convention() {
    // class 1 never occurs and is never predicted
    let m = Metrics::from_confusion(vec![vec![4, 0], vec![0, 0]]);
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.precision_macro, 0.5);
    assert_eq!(m.recall_macro, 0.5);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

fn small_synth_windows() -> (Vec<crate::csi::CsiWindow>, Vec<crate::csi::CsiWindow>) {
    let spec = SynthSpec {
        subcarrier_count: 4,
        class_count: 2,
        sample_rate_hz: 100.0,
        class_doppler_hz: vec![6.0, 22.0],
        snr_db: 25.0,
        packets_per_sequence: 128,
        sequences_per_class: 4,
        seed: 9,
    };
    let data = synth_generate(&spec).unwrap();
    let windows = extract_windows(&data, 64, 64, false).unwrap();
    // even/odd interleave keeps both classes in both parts
    let train: Vec<_> = windows.iter().step_by(2).cloned().collect();
    let val: Vec<_> = windows.iter().skip(1).step_by(2).cloned().collect();
    (train, val)
}

fn small_model_cfg() -> ModelConfig {
    let mut cfg = ModelConfig::new(1, 4, 64, 2);
    cfg.d_model = 8;
    cfg.encoder_layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.gauss_count = 4;
    cfg
}

#[test]
fn zero_learning_rate_leaves_parameters_at_initialization() {
    let (train_w, val_w) = small_synth_windows();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::new(FeatureKind::Amplitude, 100.0, 11);
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr = 0.0;
    let model_cfg = small_model_cfg();
    let report =
        train::<f32>(&train_w, &val_w, 2, &model_cfg, &cfg, dir.path()).unwrap();
    let loaded = load_checkpoint::<f32>(std::path::Path::new(&report.checkpoint)).unwrap();
    let init: ParamSet<Tensor<f32>> = init_params(&model_cfg, 11).unwrap();
    assert_eq!(loaded.model.params, init);
}

#[test]
fn training_is_deterministic_under_seed_in_f64() {
    let (train_w, val_w) = small_synth_windows();
    let mut cfg = TrainConfig::new(FeatureKind::Amplitude, 100.0, 13);
    cfg.epochs = 2;
    cfg.batch_size = 8;
    let model_cfg = small_model_cfg();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = train::<f64>(&train_w, &val_w, 2, &model_cfg, &cfg, d1.path()).unwrap();
    let b = train::<f64>(&train_w, &val_w, 2, &model_cfg, &cfg, d2.path()).unwrap();
    assert_eq!(a.train_loss, b.train_loss);
    assert_eq!(a.val_loss, b.val_loss);
    assert_eq!(a.val_metrics, b.val_metrics);
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn training_is_invariant_to_window_list_order() {
    let (train_w, val_w) = small_synth_windows();
    let mut reversed = train_w.clone();
    reversed.reverse();
    let mut cfg = TrainConfig::new(FeatureKind::Amplitude, 100.0, 17);
    cfg.epochs = 2;
    cfg.batch_size = 8;
    let model_cfg = small_model_cfg();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = train::<f64>(&train_w, &val_w, 2, &model_cfg, &cfg, d1.path()).unwrap();
    let b = train::<f64>(&reversed, &val_w, 2, &model_cfg, &cfg, d2.path()).unwrap();
    assert_eq!(a.train_loss, b.train_loss);
    assert_eq!(a.val_loss, b.val_loss);
}

// The epoch-1-beats-chance invariant runs at full desk scale in the
// acceptance suite; this is a faster convergence smoke test.
#[test]
fn training_loss_drops_below_chance_within_a_few_epochs() {
    let (train_w, val_w) = small_synth_windows();
    let mut cfg = TrainConfig::new(FeatureKind::Amplitude, 100.0, 19);
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.lr = 5e-3;
    let dir = tempfile::tempdir().unwrap();
    let report =
        train::<f64>(&train_w, &val_w, 2, &small_model_cfg(), &cfg, dir.path()).unwrap();
    let last = *report.train_loss.last().unwrap();
    assert!(
        last < 2.0f64.ln(),
        "final loss {} not better than chance ({:?})",
        last,
        report.train_loss
    );
    assert!(last < report.train_loss[0]);
}

#[test]
fn train_report_serializes_with_stable_keys() {
    let report = TrainReport {
        train_loss: vec![1.0],
        val_loss: vec![0.9],
        val_metrics: vec![Metrics::from_confusion(vec![vec![1, 0], vec![0, 1]])],
        best_epoch: 0,
        checkpoint: "best.wflx".into(),
    };
    let json = serde_json::to_value(&report).unwrap();
    for key in ["train_loss", "val_loss", "val_metrics", "best_epoch", "checkpoint"] {
        assert!(json.get(key).is_some(), "missing {}", key);
    }
    let m = &json["val_metrics"][0];
    for key in ["accuracy", "precision_macro", "recall_macro", "f1_macro", "confusion"] {
        assert!(m.get(key).is_some(), "missing {}", key);
    }
}

#[test]
fn evaluate_requires_windows() {
    let model: Model<f64> = Model::init(small_model_cfg(), 1).unwrap();
    let pipeline = FeaturePipeline::new(FeatureKind::Amplitude, SubsamplingSpec::none(), 100.0);
    assert!(evaluate(&model, &[], &pipeline).is_err());
}
