//! Reverse-mode gradient tape over the kernels in [`crate::numerics::ops`].
//!
//! Nodes are created in topological order, so a single reverse scan propagates
//! gradients. Backward closures read parent values straight off the tape; only
//! op-specific state (masks, normalization caches) is captured.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{ops, real, Real, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<T> = Box<dyn Fn(&Tape<T>, &Tensor<T>) -> Vec<(Var, Tensor<T>)>>;

struct Node<T: Real> {
    value: Tensor<T>,
    back: Option<BackFn<T>>,
}

/// Records a forward computation and produces gradients for every leaf it
/// touched. Single-owner; build one per training step.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Per-variable gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real> {
    by_var: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_var.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.by_var.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Inserts an input or parameter node.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, None)
    }

    fn push(&mut self, value: Tensor<T>, back: Option<BackFn<T>>) -> Var {
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    /// Reverse accumulation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::Validation(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), T::one()));
        for id in (0..=root.0).rev() {
            if self.nodes[id].back.is_none() {
                continue; // leaf: keep its accumulated gradient
            }
            let Some(g) = grads[id].take() else { continue };
            let back = self.nodes[id].back.as_ref().unwrap();
            for (parent, pg) in back(self, &g) {
                debug_assert_eq!(pg.shape(), self.value(parent).shape());
                match &mut grads[parent.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { by_var: grads })
    }

    // -- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(
            y,
            Some(Box::new(move |_, g| {
                vec![(a, g.clone()), (b, g.clone())]
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                vec![
                    (a, ops::mul(g, t.value(b)).unwrap()),
                    (b, ops::mul(g, t.value(a)).unwrap()),
                ]
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let y = ops::scale(self.value(a), c);
        self.push(
            y,
            Some(Box::new(move |_, g| vec![(a, ops::scale(g, c))])),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(ops::sum_all(self.value(a)));
        self.push(
            y,
            Some(Box::new(move |t, g| {
                let gv = g.item();
                vec![(a, Tensor::filled(t.value(a).shape(), gv))]
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let y = Tensor::scalar(ops::sum_all(self.value(a)) / real(n as f64));
        self.push(
            y,
            Some(Box::new(move |t, g| {
                let gv = g.item() / real(n as f64);
                vec![(a, Tensor::filled(t.value(a).shape(), gv))]
            })),
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = ops::gelu(self.value(x));
        self.push(
            y,
            Some(Box::new(move |t, g| {
                vec![(x, ops::gelu_backward(t.value(x), g))]
            })),
        )
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let y = ops::softmax(self.value(x));
        let saved = y.clone();
        self.push(
            y,
            Some(Box::new(move |_, g| {
                vec![(x, ops::softmax_backward(&saved, g))]
            })),
        )
    }

    // -- layers -----------------------------------------------------------

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (dx, dw, db) = ops::linear_backward(t.value(x), t.value(w), g);
                vec![(x, dx), (w, dw), (b, db)]
            })),
        ))
    }

    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::bmm_nt(self.value(a), self.value(b))?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (da, db) = ops::bmm_nt_backward(t.value(a), t.value(b), g);
                vec![(a, da), (b, db)]
            })),
        ))
    }

    /// Fused `softmax_last(scale * a . b^T)` for attention weights.
    pub fn attention_weights(&mut self, q: Var, k: Var, scale: T) -> Result<Var> {
        let p = ops::attention_weights(self.value(q), self.value(k), scale)?;
        let saved = p.clone();
        Ok(self.push(
            p,
            Some(Box::new(move |t, g| {
                let (dq, dk) =
                    ops::attention_weights_backward(t.value(q), t.value(k), scale, &saved, g);
                vec![(q, dq), (k, dk)]
            })),
        ))
    }

    pub fn bmm_nn(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::bmm_nn(self.value(a), self.value(b))?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (da, db) = ops::bmm_nn_backward(t.value(a), t.value(b), g);
                vec![(a, da), (b, db)]
            })),
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (y, xhat, inv_std) =
            ops::layer_norm_full(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (dx, dg, db) =
                    ops::layer_norm_backward(&xhat, &inv_std, t.value(gamma), g);
                vec![(x, dx), (gamma, dg), (beta, db)]
            })),
        ))
    }

    /// Returns the output var plus `(batch_mean, batch_var)` for the caller's
    /// running-stat update; the stats are not part of the graph.
    pub fn batch_norm_1d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, (Tensor<T>, Tensor<T>))> {
        let out =
            ops::batch_norm_1d_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let stats = (out.mean, out.var);
        let (xhat, inv_std) = (out.xhat, out.inv_std);
        let v = self.push(
            out.y,
            Some(Box::new(move |t, g| {
                let (dx, dg, db) =
                    ops::batch_norm_1d_train_backward(&xhat, &inv_std, t.value(gamma), g);
                vec![(x, dx), (gamma, dg), (beta, db)]
            })),
        );
        Ok((v, stats))
    }

    pub fn batch_norm_1d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Result<Var> {
        let y = ops::batch_norm_1d_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        let (rm, rv) = (running_mean.clone(), running_var.clone());
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (dx, dg, db) =
                    ops::batch_norm_1d_eval_backward(t.value(x), t.value(gamma), &rm, &rv, eps, g);
                vec![(x, dx), (gamma, dg), (beta, db)]
            })),
        ))
    }

    pub fn conv1d_temporal(&mut self, x: Var, k: Var, b: Var, pad: usize) -> Result<Var> {
        let y = ops::conv1d_temporal(self.value(x), self.value(k), self.value(b), pad)?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (dx, dk, db) = ops::conv1d_temporal_backward(t.value(x), t.value(k), pad, g);
                vec![(x, dx), (k, dk), (b, db)]
            })),
        ))
    }

    pub fn conv2d_1x3(&mut self, x: Var, k: Var, b: Var, pad_t: usize) -> Result<Var> {
        let y = ops::conv2d_1x3(self.value(x), self.value(k), self.value(b), pad_t)?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (dx, dk, db) = ops::conv2d_1x3_backward(t.value(x), t.value(k), pad_t, g);
                vec![(x, dx), (k, dk), (b, db)]
            })),
        ))
    }

    /// Train-mode inverted dropout drawing from the caller's stream.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        ops::validate_rate(rate)?;
        if rate == 0.0 {
            return Ok(x);
        }
        let (y, mask) = ops::dropout_masked(self.value(x), rate, rng);
        Ok(self.push(
            y,
            Some(Box::new(move |_, g| {
                vec![(x, ops::mul(g, &mask).unwrap())]
            })),
        ))
    }

    pub fn gaussian_pe(&mut self, x: Var, mu: Var, sigma: Var, embed: Var) -> Result<Var> {
        let (y, p) = ops::gaussian_pe(
            self.value(x),
            self.value(mu),
            self.value(sigma),
            self.value(embed),
        )?;
        Ok(self.push(
            y,
            Some(Box::new(move |t, g| {
                let (dx, dmu, dsigma, dembed) =
                    ops::gaussian_pe_backward(&p, t.value(mu), t.value(sigma), t.value(embed), g);
                vec![(x, dx), (mu, dmu), (sigma, dsigma), (embed, dembed)]
            })),
        ))
    }

    pub fn prepend_token(&mut self, x: Var, tok: Var) -> Result<Var> {
        let y = ops::prepend_token(self.value(x), self.value(tok))?;
        Ok(self.push(
            y,
            Some(Box::new(move |_, g| {
                let (dx, dtok) = ops::prepend_token_backward(g);
                vec![(x, dx), (tok, dtok)]
            })),
        ))
    }

    pub fn take_token0(&mut self, x: Var) -> Result<Var> {
        let l = self.value(x).shape()[1];
        let y = ops::take_token0(self.value(x))?;
        Ok(self.push(
            y,
            Some(Box::new(move |_, g| {
                vec![(x, ops::take_token0_backward(g, l))]
            })),
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let y = ops::permute(self.value(x), axes)?;
        let inv = ops::inverse_axes(axes);
        Ok(self.push(
            y,
            Some(Box::new(move |_, g| {
                vec![(x, ops::permute(g, &inv).unwrap())]
            })),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshaped(shape)?;
        let orig = self.value(x).shape().to_vec();
        Ok(self.push(
            y,
            Some(Box::new(move |_, g| {
                vec![(x, g.clone().reshaped(&orig).unwrap())]
            })),
        ))
    }

    /// Scalar cross-entropy over `[B, c]` logits; labels are constants.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::cross_entropy_full(self.value(logits), labels)?;
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |_, g| {
                vec![(
                    logits,
                    ops::cross_entropy_backward(&probs, &labels, g.item()),
                )]
            })),
        ))
    }

}
