use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::numerics::{check_gradients, ops, Tape};

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

fn rand_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

#[test]
fn init_is_deterministic_under_seed() {
    let cfg = tiny_cfg();
    let a: ParamSet<Tensor<f64>> = init_params(&cfg, 42).unwrap();
    let b: ParamSet<Tensor<f64>> = init_params(&cfg, 42).unwrap();
    assert_eq!(a, b);
    let c: ParamSet<Tensor<f64>> = init_params(&cfg, 43).unwrap();
    assert_ne!(a, c);
}

#[test]
fn init_spaces_gaussians_evenly_over_tokens() {
    let mut cfg = tiny_cfg();
    cfg.seq_len = 351;
    cfg.gauss_count = 4;
    let p: ParamSet<Tensor<f64>> = init_params(&cfg, 0).unwrap();
    let mu = p.pos.mu.data();
    let expect = [0.0, 117.333333, 234.666667, 352.0];
    for (m, e) in mu.iter().zip(expect) {
        assert!((m - e).abs() < 1e-4, "mu {:?}", mu);
    }
    assert!(p.pos.sigma.data().iter().all(|&s| (s - 88.0).abs() < 1e-9));
}

#[test]
fn init_respects_fan_in_bounds() {
    let mut cfg = tiny_cfg();
    cfg.in_channels = 3;
    let p: ParamSet<Tensor<f64>> = init_params(&cfg, 7).unwrap();
    let check = |t: &Tensor<f64>, fan_in: usize| {
        let limit = (1.0 / fan_in as f64).sqrt();
        assert!(t.max_abs() <= limit, "bound {} exceeded", limit);
    };
    let s2 = p.stem2d.as_ref().unwrap();
    check(&s2.conv1.weight, 3 * 3);
    check(&s2.conv2.weight, 3 * 3);
    check(&p.stem1d.conv1.weight, 4 * 3);
    check(&p.stem1d.conv2.weight, 8 * 3);
    check(&p.encoder[0].attn.q.weight, 8);
    check(&p.encoder[0].ffn1.weight, 8);
    check(&p.encoder[0].ffn2.weight, 16);
    check(&p.head.weight, 8);
    assert!(p.stem1d.conv1.bias.data().iter().all(|&b| b == 0.0));
}

// ---------------------------------------------------------------------------
// parameter count
// ---------------------------------------------------------------------------

#[test]
fn param_count_amplitude_3do_config() {
    let cfg = ModelConfig::new(1, 52, 351, 3);
    let n = param_count(&cfg);
    assert!((40_000..=60_000).contains(&n), "count {}", n);
}

#[test]
fn param_count_dfs_3do_config_exceeds_amplitude() {
    let amp = param_count(&ModelConfig::new(1, 52, 351, 3));
    let dfs = param_count(&ModelConfig::new(52, 121, 351, 3));
    assert!(dfs > amp);
    assert!((50_000..=70_000).contains(&dfs), "count {}", dfs);
}

#[test]
fn param_count_matches_instantiated_sets() {
    for cfg in [
        tiny_cfg(),
        ModelConfig::new(1, 52, 351, 3),
        ModelConfig::new(52, 121, 351, 3),
        ModelConfig::new(1, 30, 369, 6),
        ModelConfig::new(30, 121, 369, 6),
    ] {
        let p: ParamSet<Tensor<f32>> = init_params(&cfg, 1).unwrap();
        assert_eq!(p.scalar_count(), param_count(&cfg));
    }
}

// ---------------------------------------------------------------------------
// stems
// ---------------------------------------------------------------------------

#[test]
fn stem2d_collapses_channels_for_dfs_shape() {
    let cfg = ModelConfig::new(52, 121, 351, 3);
    cfg.validate().unwrap();
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 2).unwrap();
    let mut tape = Tape::new();
    let vars = params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
    let x = tape.leaf(rand_input(&[1, 52, 121, 351], 3));
    let y = stem2d_forward(&mut tape, vars.stem2d.as_ref().unwrap(), x).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 121, 351]);
}

#[test]
fn stem2d_zero_input_zero_bias_gives_zero() {
    let mut cfg = tiny_cfg();
    cfg.in_channels = 3;
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 4).unwrap();
    let mut tape = Tape::new();
    let vars = params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
    let x = tape.leaf(Tensor::zeros(&[2, 3, 4, 8]));
    let y = stem2d_forward(&mut tape, vars.stem2d.as_ref().unwrap(), x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn stem2d_composes_the_conv_and_gelu_oracles() {
    let mut cfg = tiny_cfg();
    cfg.in_channels = 2;
    cfg.in_freq = 3;
    cfg.seq_len = 5;
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 5).unwrap();
    let x = rand_input(&[1, 2, 3, 5], 6);
    let mut tape = Tape::new();
    let vars = params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
    let xv = tape.leaf(x.clone());
    let y = stem2d_forward(&mut tape, vars.stem2d.as_ref().unwrap(), xv).unwrap();
    let s2 = params.stem2d.as_ref().unwrap();
    let expect = ops::gelu(
        &ops::conv2d_1x3(
            &ops::gelu(&ops::conv2d_1x3(&x, &s2.conv1.weight, &s2.conv1.bias, 1).unwrap()),
            &s2.conv2.weight,
            &s2.conv2.bias,
            1,
        )
        .unwrap(),
    );
    for (a, b) in tape.value(y).data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn stem1d_maps_to_model_dimension() {
    let cfg = ModelConfig::new(1, 52, 351, 3);
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 8).unwrap();
    let buffers = BnBuffers::init(cfg.d_model);
    let mut tape = Tape::new();
    let vars = params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
    let x = tape.leaf(rand_input(&[2, 52, 351], 9));
    let (y, stats) =
        stem1d_forward(&mut tape, &vars.stem1d, &buffers, x, 0.1, &mut Mode::Eval).unwrap();
    assert!(stats.is_none());
    assert_eq!(tape.value(y).shape(), &[2, 32, 351]);
}

#[test]
fn stem1d_temporal_receptive_field_is_five() {
    let mut cfg = tiny_cfg();
    cfg.in_freq = 5;
    cfg.seq_len = 40;
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 10).unwrap();
    let buffers = BnBuffers::init(cfg.d_model);
    let x = rand_input(&[1, 5, 40], 11);
    let run = |x: &Tensor<f64>| -> Tensor<f64> {
        let mut tape = Tape::new();
        let vars = params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
        let xv = tape.leaf(x.clone());
        let (y, _) =
            stem1d_forward(&mut tape, &vars.stem1d, &buffers, xv, 0.0, &mut Mode::Eval).unwrap();
        tape.value(y).clone()
    };
    let base = run(&x);
    let mut perturbed = x.clone();
    for f in 0..5 {
        perturbed.data_mut()[f * 40 + 20] += 1.0;
    }
    let out = run(&perturbed);
    let mut affected = Vec::new();
    for t in 0..40 {
        let mut differs = false;
        for ch in 0..8 {
            if (base.data()[ch * 40 + t] - out.data()[ch * 40 + t]).abs() > 1e-12 {
                differs = true;
            }
        }
        if differs {
            affected.push(t);
        }
    }
    assert_eq!(affected, vec![18, 19, 20, 21, 22]);
}

#[test]
fn stem1d_zero_input_is_zero_in_eval() {
    let cfg = tiny_cfg();
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 12).unwrap();
    let buffers = BnBuffers::init(cfg.d_model);
    let mut tape = Tape::new();
    let vars = params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
    let x = tape.leaf(Tensor::zeros(&[1, 4, 8]));
    let (y, _) =
        stem1d_forward(&mut tape, &vars.stem1d, &buffers, x, 0.0, &mut Mode::Eval).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

// ---------------------------------------------------------------------------
// positional encoding
// ---------------------------------------------------------------------------

#[test]
fn single_gaussian_pe_is_constant_embedding() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[1, 6, 3]));
    let mu = tape.leaf(Tensor::from_vec(&[1], vec![2.5]).unwrap());
    let sigma = tape.leaf(Tensor::from_vec(&[1], vec![1.0]).unwrap());
    let embed = tape.leaf(Tensor::from_vec(&[1, 3], vec![0.1, -0.2, 0.3]).unwrap());
    let y = tape.gaussian_pe(x, mu, sigma, embed).unwrap();
    for l in 0..6 {
        for (d, &e) in [0.1, -0.2, 0.3].iter().enumerate() {
            assert!((tape.value(y).data()[l * 3 + d] - e).abs() < 1e-12);
        }
    }
}

#[test]
fn gaussian_weights_sum_to_one_and_split_at_midpoint() {
    let mu = Tensor::<f64>::from_vec(&[2], vec![0.0, 10.0]).unwrap();
    let sigma = Tensor::<f64>::from_vec(&[2], vec![3.0, 3.0]).unwrap();
    let p = ops::gaussian_position_weights(11, &mu, &sigma);
    for l in 0..11 {
        let row = &p.data()[l * 2..(l + 1) * 2];
        assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
    }
    let mid = &p.data()[5 * 2..6 * 2];
    assert!((mid[0] - 0.5).abs() < 1e-9);
    assert!((mid[1] - 0.5).abs() < 1e-9);
}

// ---------------------------------------------------------------------------
// full forward
// ---------------------------------------------------------------------------

#[test]
fn forward_produces_expected_logit_shape() {
    let cfg = ModelConfig::new(1, 52, 351, 3);
    let model: Model<f64> = Model::init(cfg, 13).unwrap();
    let x = rand_input(&[2, 1, 52, 351], 14);
    let logits = model.logits(&x).unwrap();
    assert_eq!(logits.shape(), &[2, 3]);
}

#[test]
fn eval_forward_is_bit_deterministic() {
    let model: Model<f64> = Model::init(tiny_cfg(), 15).unwrap();
    let x = rand_input(&[2, 1, 4, 8], 16);
    let a = model.logits(&x).unwrap();
    let b = model.logits(&x).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert_eq!(u.to_bits(), v.to_bits());
    }
}

#[test]
fn train_mode_without_dropout_matches_eval_with_batch_stats() {
    let mut cfg = tiny_cfg();
    cfg.dropout = 0.0;
    let mut model: Model<f64> = Model::init(cfg.clone(), 17).unwrap();
    let x = rand_input(&[4, 1, 4, 8], 18);

    let mut tape = Tape::new();
    let vars = model.params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
    let xv = tape.leaf(x.clone());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let out = forward_on_tape(
        &mut tape,
        &vars,
        &model.buffers,
        xv,
        &cfg,
        &mut Mode::Train { rng: &mut rng },
    )
    .unwrap();
    let train_logits = tape.value(out.logits).clone();
    let stats = out.bn_stats.unwrap();

    // substitute the observed batch statistics as running stats
    model.buffers.bn1_mean = stats.bn1.0.clone();
    model.buffers.bn1_var = stats.bn1.1.clone();
    model.buffers.bn2_mean = stats.bn2.0.clone();
    model.buffers.bn2_var = stats.bn2.1.clone();
    let eval_logits = model.logits(&x).unwrap();
    for (a, b) in train_logits.data().iter().zip(eval_logits.data()) {
        assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
    }
}

#[test]
fn logits_stay_finite_for_large_inputs() {
    let model: Model<f64> = Model::init(tiny_cfg(), 19).unwrap();
    let x = Tensor::filled(&[2, 1, 4, 8], 1e3);
    let logits = model.logits(&x).unwrap();
    assert!(logits.all_finite());
    let mixed = rand_input(&[2, 1, 4, 8], 20).map(|v| v * 1e3);
    assert!(model.logits(&mixed).unwrap().all_finite());
}

#[test]
fn logits_react_to_any_single_time_column() {
    let model: Model<f64> = Model::init(tiny_cfg(), 21).unwrap();
    let x = rand_input(&[1, 1, 4, 8], 22);
    let base = model.logits(&x).unwrap();
    for t in 0..8 {
        let mut perturbed = x.clone();
        for f in 0..4 {
            perturbed.data_mut()[f * 8 + t] += 0.35;
        }
        let out = model.logits(&perturbed).unwrap();
        let delta: f64 = base
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta > 1e-9, "column {} had no effect", t);
    }
}

#[test]
fn encoder_without_pe_and_cls_is_permutation_equivariant() {
    let cfg = tiny_cfg();
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 23).unwrap();
    let tokens = rand_input(&[1, 6, 8], 24);
    let perm = [4usize, 2, 0, 5, 1, 3];
    let mut permuted = Tensor::zeros(&[1, 6, 8]);
    for (dst, &src) in perm.iter().enumerate() {
        permuted.data_mut()[dst * 8..(dst + 1) * 8]
            .copy_from_slice(&tokens.data()[src * 8..(src + 1) * 8]);
    }
    let run = |x: &Tensor<f64>| -> Tensor<f64> {
        let mut tape = Tape::new();
        let vars = params.map(&mut |t: &Tensor<f64>| tape.leaf(t.clone()));
        let xv = tape.leaf(x.clone());
        let y = encoder_forward(&mut tape, &vars.encoder, xv, &cfg, &mut Mode::Eval).unwrap();
        tape.value(y).clone()
    };
    let (base, shuffled) = (run(&tokens), run(&permuted));
    for (dst, &src) in perm.iter().enumerate() {
        for d in 0..8 {
            let a = shuffled.data()[dst * 8 + d];
            let b = base.data()[src * 8 + d];
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn positional_encoding_breaks_permutation_invariance() {
    let model: Model<f64> = Model::init(tiny_cfg(), 25).unwrap();
    let x = rand_input(&[1, 1, 4, 8], 26);
    // reverse the time axis
    let mut reversed = x.clone();
    for f in 0..4 {
        for t in 0..8 {
            reversed.data_mut()[f * 8 + t] = x.data()[f * 8 + (7 - t)];
        }
    }
    let a = model.logits(&x).unwrap();
    let b = model.logits(&reversed).unwrap();
    let delta: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(u, v)| (u - v).abs())
        .sum();
    assert!(delta > 1e-6);
}

// ---------------------------------------------------------------------------
// gradients through the whole model
// ---------------------------------------------------------------------------

#[test]
fn tiny_model_passes_finite_difference_check_for_every_tensor() {
    let cfg = tiny_cfg();
    let params: ParamSet<Tensor<f64>> = init_params(&cfg, 27).unwrap();
    let buffers = BnBuffers::init(cfg.d_model);
    let x = rand_input(&[2, 1, 4, 8], 28);
    let labels = vec![0usize, 2];

    // canonical order template: leaf index per position
    let mut counter = 0usize;
    let template = params.map(&mut |_| {
        let i = counter;
        counter += 1;
        i
    });
    let named: Vec<(String, Tensor<f64>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let report = check_gradients(&named, 1e-4, 1e-4, |tape, vars| {
        let vars_ps = template.map(&mut |&i| vars[i]);
        let xv = tape.leaf(x.clone());
        let out = forward_on_tape(tape, &vars_ps, &buffers, xv, &cfg, &mut Mode::Eval)?;
        tape.cross_entropy(out.logits, &labels)
    })
    .unwrap();
    assert!(
        report.passed(),
        "max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
    assert!(report.coords_checked > 900, "checked {}", report.coords_checked);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

#[test]
fn checkpoint_round_trip_is_bit_identical_in_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wflx");
    let mut model: Model<f32> = Model::init(tiny_cfg(), 29).unwrap();
    // non-default buffers so they round-trip too
    model.buffers.bn1_mean = Tensor::filled(&[8], 0.25);
    save_checkpoint(&model, 77, &path).unwrap();
    let loaded: Checkpoint<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 77);
    // rate fields travel as f32 in the config block
    let mut expect_cfg = model.cfg.clone();
    expect_cfg.dropout = model.cfg.dropout as f32 as f64;
    expect_cfg.bn_momentum = model.cfg.bn_momentum as f32 as f64;
    assert_eq!(loaded.model.cfg, expect_cfg);
    assert_eq!(loaded.model.params, model.params);
    assert_eq!(loaded.model.buffers, model.buffers);

    // saving the loaded model reproduces the file byte for byte
    let path2 = dir.path().join("m2.wflx");
    save_checkpoint(&loaded.model, loaded.step, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn forward_is_identical_after_checkpoint_reload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wflx");
    let model: Model<f32> = Model::init(tiny_cfg(), 30).unwrap();
    let x = rand_input(&[2, 1, 4, 8], 31).cast::<f32>();
    let before = model.logits(&x).unwrap();
    save_checkpoint(&model, 0, &path).unwrap();
    let loaded: Checkpoint<f32> = load_checkpoint(&path).unwrap();
    let after = loaded.model.logits(&x).unwrap();
    for (a, b) in before.data().iter().zip(after.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn checkpoint_file_size_matches_format_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wflx");
    let cfg = tiny_cfg();
    let model: Model<f32> = Model::init(cfg.clone(), 32).unwrap();
    save_checkpoint(&model, 5, &path).unwrap();
    // header: magic 4 + version 2 + config (9 u32 + f32 + 2 u32 + f32 = 52) + count 4
    let mut expect = 4 + 2 + 52 + 4;
    let mut entries: Vec<(String, usize, usize)> = expected_shapes(&cfg)
        .into_iter()
        .map(|(n, s)| (n, s.len(), s.iter().product()))
        .collect();
    for buf in [
        "stem1d.bn1.running_mean",
        "stem1d.bn1.running_var",
        "stem1d.bn2.running_mean",
        "stem1d.bn2.running_var",
    ] {
        entries.push((buf.to_string(), 1, cfg.d_model));
    }
    entries.push(("meta.step".to_string(), 1, 1));
    for (name, rank, numel) in entries {
        expect += 2 + name.len() + 1 + 4 * rank + 4 * numel;
    }
    assert_eq!(std::fs::read(&path).unwrap().len(), expect);
}

#[test]
fn checkpoint_rejects_bad_magic_and_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wflx");
    let model: Model<f32> = Model::init(tiny_cfg(), 33).unwrap();
    save_checkpoint(&model, 0, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(
        load_checkpoint::<f32>(&path).unwrap_err().code(),
        "format_error"
    );
    // config/shape mismatch: claim 4 encoder layers but store tensors for 1
    bytes[0] = b'W';
    bytes[4 + 2 + 4 * 4] = 4; // encoder_layers field in the config block
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(
        load_checkpoint::<f32>(&path).unwrap_err().code(),
        "format_error"
    );
}
