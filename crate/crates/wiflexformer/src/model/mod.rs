//! The classifier: 2D stem, 1D stem, Gaussian positional encoding, class
//! token, post-norm transformer encoder, linear head; plus initialization,
//! parameter counting, and checkpoint I/O.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    encoder_forward, forward_on_tape, gaussian_positional_encoding, stem1d_forward,
    stem2d_forward, BnBatchStats, ForwardOut, Mode,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{real, Real, Tensor};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const LN_EPS: f64 = 1e-5;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// 1 for amplitude features, subcarrier count for Doppler features.
    pub in_channels: usize,
    /// Subcarriers (amplitude) or frequency bins (Doppler).
    pub in_freq: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    /// Number of positional Gaussians.
    pub gauss_count: usize,
    /// Whether the class token receives positional encoding (index 0).
    pub pe_includes_cls: bool,
    /// Dropout on attention weights and feed-forward output inside the encoder.
    pub encoder_dropout: bool,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Paper-default architecture for a `[C, F, T]` input.
    pub fn new(in_channels: usize, in_freq: usize, seq_len: usize, classes: usize) -> Self {
        Self {
            in_channels,
            in_freq,
            seq_len,
            d_model: 32,
            encoder_layers: 4,
            heads: 16,
            ffn_dim: 64,
            classes,
            dropout: 0.1,
            gauss_count: 10,
            pe_includes_cls: true,
            encoder_dropout: true,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.in_channels,
            self.in_freq,
            self.seq_len,
            self.d_model,
            self.encoder_layers,
            self.heads,
            self.ffn_dim,
            self.classes,
            self.gauss_count,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config(format!(
                "all model dimensions must be >= 1: {:?}",
                self
            )));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!(
                "bn_momentum must lie in [0, 1], got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }

    /// Token count seen by the encoder: T plus the class token.
    pub fn tokens(&self) -> usize {
        self.seq_len + 1
    }
}

// ---------------------------------------------------------------------------
// parameter containers, generic over the leaf type
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<L> {
    pub weight: L,
    pub bias: L,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<L> {
    pub gamma: L,
    pub beta: L,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stem2dParams<L> {
    pub conv1: LinearParams<L>,
    pub conv2: LinearParams<L>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stem1dParams<L> {
    pub conv1: LinearParams<L>,
    pub bn1: NormParams<L>,
    pub conv2: LinearParams<L>,
    pub bn2: NormParams<L>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosParams<L> {
    pub mu: L,
    pub sigma: L,
    pub embed: L,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams<L> {
    pub q: LinearParams<L>,
    pub k: LinearParams<L>,
    pub v: LinearParams<L>,
    pub out: LinearParams<L>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<L> {
    pub attn: AttnParams<L>,
    pub ln1: NormParams<L>,
    pub ffn1: LinearParams<L>,
    pub ffn2: LinearParams<L>,
    pub ln2: NormParams<L>,
}

/// Every learnable tensor of the model, in a fixed canonical order.
///
/// Generic over the leaf type so the same structure holds concrete tensors,
/// tape variables, or gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<L> {
    /// Present iff `in_channels > 1`.
    pub stem2d: Option<Stem2dParams<L>>,
    pub stem1d: Stem1dParams<L>,
    pub pos: PosParams<L>,
    pub class_token: L,
    pub encoder: Vec<EncoderLayerParams<L>>,
    pub head: LinearParams<L>,
}

/// Decoupled weight decay applies to weight matrices and kernels only.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight")
}

macro_rules! visit_linear {
    ($f:expr, $prefix:expr, $lin:expr) => {
        $f(&format!("{}.weight", $prefix), &$lin.weight);
        $f(&format!("{}.bias", $prefix), &$lin.bias);
    };
}

macro_rules! visit_norm {
    ($f:expr, $prefix:expr, $norm:expr) => {
        $f(&format!("{}.gamma", $prefix), &$norm.gamma);
        $f(&format!("{}.beta", $prefix), &$norm.beta);
    };
}

impl<L> ParamSet<L> {
    /// Visits every leaf as `(name, leaf)` in canonical order.
    pub fn visit<'s>(&'s self, f: &mut impl FnMut(&str, &'s L)) {
        if let Some(s2) = &self.stem2d {
            visit_linear!(f, "stem2d.conv1", s2.conv1);
            visit_linear!(f, "stem2d.conv2", s2.conv2);
        }
        visit_linear!(f, "stem1d.conv1", self.stem1d.conv1);
        visit_norm!(f, "stem1d.bn1", self.stem1d.bn1);
        visit_linear!(f, "stem1d.conv2", self.stem1d.conv2);
        visit_norm!(f, "stem1d.bn2", self.stem1d.bn2);
        f("pos.mu", &self.pos.mu);
        f("pos.sigma", &self.pos.sigma);
        f("pos.embed", &self.pos.embed);
        f("class_token", &self.class_token);
        for (i, layer) in self.encoder.iter().enumerate() {
            visit_linear!(f, format!("enc.{}.attn.q", i), layer.attn.q);
            visit_linear!(f, format!("enc.{}.attn.k", i), layer.attn.k);
            visit_linear!(f, format!("enc.{}.attn.v", i), layer.attn.v);
            visit_linear!(f, format!("enc.{}.attn.out", i), layer.attn.out);
            visit_norm!(f, format!("enc.{}.ln1", i), layer.ln1);
            visit_linear!(f, format!("enc.{}.ffn1", i), layer.ffn1);
            visit_linear!(f, format!("enc.{}.ffn2", i), layer.ffn2);
            visit_norm!(f, format!("enc.{}.ln2", i), layer.ln2);
        }
        visit_linear!(f, "head", self.head);
    }

    /// Flat `(name, leaf)` view in canonical order.
    pub fn named(&self) -> Vec<(String, &L)> {
        let mut out = Vec::new();
        self.visit(&mut |name, leaf| out.push((name.to_string(), leaf)));
        out
    }

    /// Rebuilds the structure with a new leaf type, preserving order.
    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> ParamSet<M> {
        let lin = |f: &mut dyn FnMut(&L) -> M, l: &LinearParams<L>| LinearParams {
            weight: f(&l.weight),
            bias: f(&l.bias),
        };
        let norm = |f: &mut dyn FnMut(&L) -> M, n: &NormParams<L>| NormParams {
            gamma: f(&n.gamma),
            beta: f(&n.beta),
        };
        ParamSet {
            stem2d: self.stem2d.as_ref().map(|s2| Stem2dParams {
                conv1: lin(f, &s2.conv1),
                conv2: lin(f, &s2.conv2),
            }),
            stem1d: Stem1dParams {
                conv1: lin(f, &self.stem1d.conv1),
                bn1: norm(f, &self.stem1d.bn1),
                conv2: lin(f, &self.stem1d.conv2),
                bn2: norm(f, &self.stem1d.bn2),
            },
            pos: PosParams {
                mu: f(&self.pos.mu),
                sigma: f(&self.pos.sigma),
                embed: f(&self.pos.embed),
            },
            class_token: f(&self.class_token),
            encoder: self
                .encoder
                .iter()
                .map(|layer| EncoderLayerParams {
                    attn: AttnParams {
                        q: lin(f, &layer.attn.q),
                        k: lin(f, &layer.attn.k),
                        v: lin(f, &layer.attn.v),
                        out: lin(f, &layer.attn.out),
                    },
                    ln1: norm(f, &layer.ln1),
                    ffn1: lin(f, &layer.ffn1),
                    ffn2: lin(f, &layer.ffn2),
                    ln2: norm(f, &layer.ln2),
                })
                .collect(),
            head: lin(f, &self.head),
        }
    }

    /// Mutable traversal zipped against another set with the same structure,
    /// in canonical order.
    pub fn zip_mut<M>(&mut self, other: &ParamSet<M>, f: &mut impl FnMut(&str, &mut L, &M)) {
        let mut names = Vec::new();
        other.visit(&mut |name, _| names.push(name.to_string()));
        let mut leaves: Vec<&M> = Vec::new();
        other.visit(&mut |_, leaf| leaves.push(leaf));
        let mut idx = 0usize;
        self.visit_mut(&mut |name, leaf| {
            debug_assert_eq!(name, names[idx]);
            f(name, leaf, leaves[idx]);
            idx += 1;
        });
    }

    /// Mutable visit in canonical order.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut L)) {
        if let Some(s2) = &mut self.stem2d {
            f("stem2d.conv1.weight", &mut s2.conv1.weight);
            f("stem2d.conv1.bias", &mut s2.conv1.bias);
            f("stem2d.conv2.weight", &mut s2.conv2.weight);
            f("stem2d.conv2.bias", &mut s2.conv2.bias);
        }
        f("stem1d.conv1.weight", &mut self.stem1d.conv1.weight);
        f("stem1d.conv1.bias", &mut self.stem1d.conv1.bias);
        f("stem1d.bn1.gamma", &mut self.stem1d.bn1.gamma);
        f("stem1d.bn1.beta", &mut self.stem1d.bn1.beta);
        f("stem1d.conv2.weight", &mut self.stem1d.conv2.weight);
        f("stem1d.conv2.bias", &mut self.stem1d.conv2.bias);
        f("stem1d.bn2.gamma", &mut self.stem1d.bn2.gamma);
        f("stem1d.bn2.beta", &mut self.stem1d.bn2.beta);
        f("pos.mu", &mut self.pos.mu);
        f("pos.sigma", &mut self.pos.sigma);
        f("pos.embed", &mut self.pos.embed);
        f("class_token", &mut self.class_token);
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            for (sub, lin) in [
                ("attn.q", &mut layer.attn.q),
                ("attn.k", &mut layer.attn.k),
                ("attn.v", &mut layer.attn.v),
                ("attn.out", &mut layer.attn.out),
            ] {
                f(&format!("enc.{}.{}.weight", i, sub), &mut lin.weight);
                f(&format!("enc.{}.{}.bias", i, sub), &mut lin.bias);
            }
            f(&format!("enc.{}.ln1.gamma", i), &mut layer.ln1.gamma);
            f(&format!("enc.{}.ln1.beta", i), &mut layer.ln1.beta);
            f(&format!("enc.{}.ffn1.weight", i), &mut layer.ffn1.weight);
            f(&format!("enc.{}.ffn1.bias", i), &mut layer.ffn1.bias);
            f(&format!("enc.{}.ffn2.weight", i), &mut layer.ffn2.weight);
            f(&format!("enc.{}.ffn2.bias", i), &mut layer.ffn2.bias);
            f(&format!("enc.{}.ln2.gamma", i), &mut layer.ln2.gamma);
            f(&format!("enc.{}.ln2.beta", i), &mut layer.ln2.beta);
        }
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }
}

impl<T: Real> ParamSet<Tensor<T>> {
    /// Total learnable scalar count of the instantiated set.
    pub fn scalar_count(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, t| total += t.len());
        total
    }

    /// Shape consistency against a config.
    pub fn validate_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        for (name, expect) in expected_shapes(cfg) {
            let mut found = None;
            self.visit(&mut |n, t| {
                if n == name {
                    found = Some(t.shape().to_vec());
                }
            });
            match found {
                Some(shape) if shape == expect => {}
                Some(shape) => {
                    return Err(Error::Format(format!(
                        "tensor {} has shape {:?}, config expects {:?}",
                        name, shape, expect
                    )));
                }
                None => {
                    return Err(Error::Format(format!("missing tensor {}", name)));
                }
            }
        }
        if self.pos.sigma.data().iter().any(|&s| s <= T::zero()) {
            return Err(Error::Validation("pos.sigma must be positive".into()));
        }
        Ok(())
    }

    /// Rebuilds the structured set from `(name, tensor)` pairs.
    pub fn from_named(
        cfg: &ModelConfig,
        tensors: &mut std::collections::HashMap<String, Tensor<T>>,
    ) -> Result<Self> {
        type Map<T> = std::collections::HashMap<String, Tensor<T>>;
        fn take<T: Real>(map: &mut Map<T>, name: String) -> Result<Tensor<T>> {
            map.remove(&name)
                .ok_or_else(|| Error::Format(format!("missing tensor {}", name)))
        }
        fn lin<T: Real>(map: &mut Map<T>, prefix: &str) -> Result<LinearParams<Tensor<T>>> {
            Ok(LinearParams {
                weight: take(map, format!("{}.weight", prefix))?,
                bias: take(map, format!("{}.bias", prefix))?,
            })
        }
        fn norm<T: Real>(map: &mut Map<T>, prefix: &str) -> Result<NormParams<Tensor<T>>> {
            Ok(NormParams {
                gamma: take(map, format!("{}.gamma", prefix))?,
                beta: take(map, format!("{}.beta", prefix))?,
            })
        }
        let stem2d = if cfg.in_channels > 1 {
            Some(Stem2dParams {
                conv1: lin(tensors, "stem2d.conv1")?,
                conv2: lin(tensors, "stem2d.conv2")?,
            })
        } else {
            None
        };
        let stem1d = Stem1dParams {
            conv1: lin(tensors, "stem1d.conv1")?,
            bn1: norm(tensors, "stem1d.bn1")?,
            conv2: lin(tensors, "stem1d.conv2")?,
            bn2: norm(tensors, "stem1d.bn2")?,
        };
        let pos = PosParams {
            mu: take(tensors, "pos.mu".into())?,
            sigma: take(tensors, "pos.sigma".into())?,
            embed: take(tensors, "pos.embed".into())?,
        };
        let class_token = take(tensors, "class_token".into())?;
        let mut encoder = Vec::with_capacity(cfg.encoder_layers);
        for i in 0..cfg.encoder_layers {
            encoder.push(EncoderLayerParams {
                attn: AttnParams {
                    q: lin(tensors, &format!("enc.{}.attn.q", i))?,
                    k: lin(tensors, &format!("enc.{}.attn.k", i))?,
                    v: lin(tensors, &format!("enc.{}.attn.v", i))?,
                    out: lin(tensors, &format!("enc.{}.attn.out", i))?,
                },
                ln1: norm(tensors, &format!("enc.{}.ln1", i))?,
                ffn1: lin(tensors, &format!("enc.{}.ffn1", i))?,
                ffn2: lin(tensors, &format!("enc.{}.ffn2", i))?,
                ln2: norm(tensors, &format!("enc.{}.ln2", i))?,
            });
        }
        let head = lin(tensors, "head")?;
        let set = ParamSet {
            stem2d,
            stem1d,
            pos,
            class_token,
            encoder,
            head,
        };
        set.validate_shapes(cfg)?;
        Ok(set)
    }
}

/// Canonical `(name, shape)` list for a config.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c, f, d, ffn, k, cls) = (
        cfg.in_channels,
        cfg.in_freq,
        cfg.d_model,
        cfg.ffn_dim,
        cfg.gauss_count,
        cfg.classes,
    );
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>| out.push((name.to_string(), shape));
    if c > 1 {
        push("stem2d.conv1.weight", vec![c, c, 1, 3]);
        push("stem2d.conv1.bias", vec![c]);
        push("stem2d.conv2.weight", vec![1, c, 1, 3]);
        push("stem2d.conv2.bias", vec![1]);
    }
    push("stem1d.conv1.weight", vec![d, f, 3]);
    push("stem1d.conv1.bias", vec![d]);
    push("stem1d.bn1.gamma", vec![d]);
    push("stem1d.bn1.beta", vec![d]);
    push("stem1d.conv2.weight", vec![d, d, 3]);
    push("stem1d.conv2.bias", vec![d]);
    push("stem1d.bn2.gamma", vec![d]);
    push("stem1d.bn2.beta", vec![d]);
    push("pos.mu", vec![k]);
    push("pos.sigma", vec![k]);
    push("pos.embed", vec![k, d]);
    push("class_token", vec![d]);
    for i in 0..cfg.encoder_layers {
        for sub in ["attn.q", "attn.k", "attn.v", "attn.out"] {
            push(&format!("enc.{}.{}.weight", i, sub), vec![d, d]);
            push(&format!("enc.{}.{}.bias", i, sub), vec![d]);
        }
        push(&format!("enc.{}.ln1.gamma", i), vec![d]);
        push(&format!("enc.{}.ln1.beta", i), vec![d]);
        push(&format!("enc.{}.ffn1.weight", i), vec![d, ffn]);
        push(&format!("enc.{}.ffn1.bias", i), vec![ffn]);
        push(&format!("enc.{}.ffn2.weight", i), vec![ffn, d]);
        push(&format!("enc.{}.ffn2.bias", i), vec![d]);
        push(&format!("enc.{}.ln2.gamma", i), vec![d]);
        push(&format!("enc.{}.ln2.beta", i), vec![d]);
    }
    push("head.weight", vec![d, cls]);
    push("head.bias", vec![cls]);
    out
}

/// Exact count of learnable scalars for a config (running stats excluded).
pub fn param_count(cfg: &ModelConfig) -> usize {
    expected_shapes(cfg)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

/// Batch-norm running statistics; buffers, not learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBuffers<T: Real> {
    pub bn1_mean: Tensor<T>,
    pub bn1_var: Tensor<T>,
    pub bn2_mean: Tensor<T>,
    pub bn2_var: Tensor<T>,
}

impl<T: Real> BnBuffers<T> {
    pub fn init(d_model: usize) -> Self {
        Self {
            bn1_mean: Tensor::zeros(&[d_model]),
            bn1_var: Tensor::filled(&[d_model], T::one()),
            bn2_mean: Tensor::zeros(&[d_model]),
            bn2_var: Tensor::filled(&[d_model], T::one()),
        }
    }

    /// `new = (1 - momentum) * old + momentum * batch_stat`.
    pub fn update(&mut self, stats: &BnBatchStats<T>, momentum: f64) {
        let m: T = real(momentum);
        let blend = |old: &mut Tensor<T>, new: &Tensor<T>| {
            for (o, &n) in old.data_mut().iter_mut().zip(new.data()) {
                *o = (T::one() - m) * *o + m * n;
            }
        };
        blend(&mut self.bn1_mean, &stats.bn1.0);
        blend(&mut self.bn1_var, &stats.bn1.1);
        blend(&mut self.bn2_mean, &stats.bn2.0);
        blend(&mut self.bn2_var, &stats.bn2.1);
    }
}

const EMBED_INIT_RANGE: f64 = 0.02;

/// Weights uniform in `+-sqrt(1/fan_in)`, biases zero, BN affine at identity,
/// positional Gaussians evenly spaced with `sigma = T_tokens / K`, embeddings
/// and class token small uniform. Deterministic under the seed.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<Tensor<T>>> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut uniform = |shape: &[usize], limit: f64| -> Tensor<T> {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| real(rng.gen_range(-limit..limit)))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    };
    let fan = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
    let (c, f, d, ffn, k, cls) = (
        cfg.in_channels,
        cfg.in_freq,
        cfg.d_model,
        cfg.ffn_dim,
        cfg.gauss_count,
        cfg.classes,
    );

    let stem2d = if c > 1 {
        Some(Stem2dParams {
            conv1: LinearParams {
                weight: uniform(&[c, c, 1, 3], fan(c * 3)),
                bias: Tensor::zeros(&[c]),
            },
            conv2: LinearParams {
                weight: uniform(&[1, c, 1, 3], fan(c * 3)),
                bias: Tensor::zeros(&[1]),
            },
        })
    } else {
        None
    };
    let norm_identity = |d: usize| NormParams {
        gamma: Tensor::filled(&[d], T::one()),
        beta: Tensor::zeros(&[d]),
    };
    let stem1d = Stem1dParams {
        conv1: LinearParams {
            weight: uniform(&[d, f, 3], fan(f * 3)),
            bias: Tensor::zeros(&[d]),
        },
        bn1: norm_identity(d),
        conv2: LinearParams {
            weight: uniform(&[d, d, 3], fan(d * 3)),
            bias: Tensor::zeros(&[d]),
        },
        bn2: norm_identity(d),
    };

    let t_tokens = cfg.tokens() as f64;
    let mu: Vec<T> = if k == 1 {
        vec![real(t_tokens / 2.0)]
    } else {
        (0..k)
            .map(|i| real(i as f64 * t_tokens / (k - 1) as f64))
            .collect()
    };
    let pos = PosParams {
        mu: Tensor::from_vec(&[k], mu).unwrap(),
        sigma: Tensor::filled(&[k], real(t_tokens / k as f64)),
        embed: uniform(&[k, d], EMBED_INIT_RANGE),
    };
    let class_token = uniform(&[d], EMBED_INIT_RANGE);

    let encoder = (0..cfg.encoder_layers)
        .map(|_| EncoderLayerParams {
            attn: AttnParams {
                q: LinearParams {
                    weight: uniform(&[d, d], fan(d)),
                    bias: Tensor::zeros(&[d]),
                },
                k: LinearParams {
                    weight: uniform(&[d, d], fan(d)),
                    bias: Tensor::zeros(&[d]),
                },
                v: LinearParams {
                    weight: uniform(&[d, d], fan(d)),
                    bias: Tensor::zeros(&[d]),
                },
                out: LinearParams {
                    weight: uniform(&[d, d], fan(d)),
                    bias: Tensor::zeros(&[d]),
                },
            },
            ln1: norm_identity(d),
            ffn1: LinearParams {
                weight: uniform(&[d, ffn], fan(d)),
                bias: Tensor::zeros(&[ffn]),
            },
            ffn2: LinearParams {
                weight: uniform(&[ffn, d], fan(ffn)),
                bias: Tensor::zeros(&[d]),
            },
            ln2: norm_identity(d),
        })
        .collect();
    let head = LinearParams {
        weight: uniform(&[d, cls], fan(d)),
        bias: Tensor::zeros(&[cls]),
    };
    Ok(ParamSet {
        stem2d,
        stem1d,
        pos,
        class_token,
        encoder,
        head,
    })
}

/// A config with its instantiated parameters and batch-norm buffers.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub cfg: ModelConfig,
    pub params: ParamSet<Tensor<T>>,
    pub buffers: BnBuffers<T>,
}

impl<T: Real> Model<T> {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, seed)?;
        let buffers = BnBuffers::init(cfg.d_model);
        Ok(Self {
            cfg,
            params,
            buffers,
        })
    }

    /// Eval-mode logits for a `[B, C, F, T]` batch.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = crate::numerics::Tape::new();
        let vars = self.params.map(&mut |t: &Tensor<T>| tape.leaf(t.clone()));
        let xv = tape.leaf(x.clone());
        let out = forward_on_tape(
            &mut tape,
            &vars,
            &self.buffers,
            xv,
            &self.cfg,
            &mut Mode::Eval,
        )?;
        Ok(tape.value(out.logits).clone())
    }

    /// Clamps positional sigmas away from zero after an optimizer step.
    pub fn clamp_sigma(&mut self, min: f64) {
        let floor: T = real(min);
        for s in self.params.pos.sigma.data_mut() {
            if *s < floor {
                *s = floor;
            }
        }
    }
}

#[cfg(test)]
mod tests;
