//! Forward kernels and their hand-derived backward passes.
//!
//! Every kernel is a pure function of its inputs; the tape in [`crate::numerics::tape`]
//! wires them into a reverse-mode graph. Backward functions return gradients with
//! the exact shapes of the corresponding inputs.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{real, Real, Tensor};

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Validation(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Validation(format!(
            "mul shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn scale<T: Real>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|v| v * c)
}

pub fn sum_all<T: Real>(a: &Tensor<T>) -> T {
    a.data().iter().copied().sum()
}

/// Exact erf-based GELU: `x * Phi(x)`.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    x * normal_cdf(x)
}

#[inline]
fn normal_cdf<T: Real>(x: T) -> T {
    let half: T = real(0.5);
    half * (T::one() + (x / real::<T>(std::f64::consts::SQRT_2)).erf())
}

#[inline]
fn normal_pdf<T: Real>(x: T) -> T {
    let inv_sqrt_2pi: T = real(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    inv_sqrt_2pi * (-x * x * real::<T>(0.5)).exp()
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xv, &gv)| gv * (normal_cdf(xv) + xv * normal_pdf(xv)))
        .collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

/// Max-subtracted exponent normalization over the last axis.
pub fn softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().unwrap_or(&1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    out
}

/// `dx = y * (g - sum(g * y))` per last-axis slice.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().unwrap_or(&1);
    let mut out = Tensor::zeros_like(y);
    for ((yrow, grow), orow) in y
        .data()
        .chunks(n)
        .zip(g.data().chunks(n))
        .zip(out.data_mut().chunks_mut(n))
    {
        let dot: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
        for i in 0..n {
            orow[i] = yrow[i] * (grow[i] - dot);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// `y = x . W + b` broadcast over leading axes; `x: [*, d_in]`, `w: [d_in, d_out]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (d_in, d_out) = linear_dims(x, w, b)?;
    let rows = x.len() / d_in;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = d_out;
    let mut out = vec![T::zero(); rows * d_out];
    for m in 0..rows {
        let xrow = &x.data()[m * d_in..(m + 1) * d_in];
        let orow = &mut out[m * d_out..(m + 1) * d_out];
        orow.copy_from_slice(b.data());
        for (i, &xv) in xrow.iter().enumerate() {
            let wrow = &w.data()[i * d_out..(i + 1) * d_out];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

fn linear_dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    if w.rank() != 2 {
        return Err(Error::Validation(format!(
            "linear weight must be rank 2, got {:?}",
            w.shape()
        )));
    }
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    if x.shape().last() != Some(&d_in) || b.shape() != [d_out] {
        return Err(Error::Validation(format!(
            "linear shape mismatch: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    Ok((d_in, d_out))
}

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / d_in;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); d_out];
    for m in 0..rows {
        let xrow = &x.data()[m * d_in..(m + 1) * d_in];
        let grow = &g.data()[m * d_out..(m + 1) * d_out];
        for (o, &gv) in grow.iter().enumerate() {
            db[o] += gv;
        }
        let dxrow = &mut dx[m * d_in..(m + 1) * d_in];
        for i in 0..d_in {
            let wrow = &w.data()[i * d_out..(i + 1) * d_out];
            let mut acc = T::zero();
            for (gv, wv) in grow.iter().zip(wrow) {
                acc += *gv * *wv;
            }
            dxrow[i] = acc;
            let dwrow = &mut dw[i * d_out..(i + 1) * d_out];
            let xv = xrow[i];
            for (d, &gv) in dwrow.iter_mut().zip(grow) {
                *d += xv * gv;
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).unwrap(),
        Tensor::from_vec(w.shape(), dw).unwrap(),
        Tensor::from_vec(&[d_out], db).unwrap(),
    )
}

// ---------------------------------------------------------------------------
// batched matmul (attention building blocks)
// ---------------------------------------------------------------------------

/// `y[n,l,m] = sum_d a[n,l,d] * b[n,m,d]` — scores = Q . K^T.
pub fn bmm_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([n, l, d], [nb, m, db]) = (dims3(a)?, dims3(b)?);
    if n != nb || d != db {
        return Err(Error::Validation(format!(
            "bmm_nt shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); n * l * m];
    for i in 0..n {
        let abatch = &a.data()[i * l * d..(i + 1) * l * d];
        let bbatch = &b.data()[i * m * d..(i + 1) * m * d];
        let obatch = &mut out[i * l * m..(i + 1) * l * m];
        for (arow, orow) in abatch.chunks_exact(d).zip(obatch.chunks_exact_mut(m)) {
            for (brow, o) in bbatch.chunks_exact(d).zip(orow) {
                let mut acc = T::zero();
                for (av, bv) in arow.iter().zip(brow) {
                    acc += *av * *bv;
                }
                *o = acc;
            }
        }
    }
    Tensor::from_vec(&[n, l, m], out)
}

pub fn bmm_nt_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, l, d] = dims3(a).unwrap();
    let m = b.shape()[1];
    let mut da = vec![T::zero(); a.len()];
    let mut db = vec![T::zero(); b.len()];
    for i in 0..n {
        let abatch = &a.data()[i * l * d..(i + 1) * l * d];
        let bbatch = &b.data()[i * m * d..(i + 1) * m * d];
        let gbatch = &g.data()[i * l * m..(i + 1) * l * m];
        let dabatch = &mut da[i * l * d..(i + 1) * l * d];
        let dbbatch = &mut db[i * m * d..(i + 1) * m * d];
        for ((grow, arow), darow) in gbatch
            .chunks_exact(m)
            .zip(abatch.chunks_exact(d))
            .zip(dabatch.chunks_exact_mut(d))
        {
            for ((&gv, brow), dbrow) in grow
                .iter()
                .zip(bbatch.chunks_exact(d))
                .zip(dbbatch.chunks_exact_mut(d))
            {
                for k in 0..d {
                    darow[k] += gv * brow[k];
                    dbrow[k] += gv * arow[k];
                }
            }
        }
    }
    (
        Tensor::from_vec(a.shape(), da).unwrap(),
        Tensor::from_vec(b.shape(), db).unwrap(),
    )
}

/// `y[n,l,d] = sum_m a[n,l,m] * b[n,m,d]` — context = P . V.
pub fn bmm_nn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([n, l, m], [nb, mb, d]) = (dims3(a)?, dims3(b)?);
    if n != nb || m != mb {
        return Err(Error::Validation(format!(
            "bmm_nn shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); n * l * d];
    for i in 0..n {
        let abatch = &a.data()[i * l * m..(i + 1) * l * m];
        let bbatch = &b.data()[i * m * d..(i + 1) * m * d];
        let obatch = &mut out[i * l * d..(i + 1) * l * d];
        for (arow, orow) in abatch.chunks_exact(m).zip(obatch.chunks_exact_mut(d)) {
            for (&av, brow) in arow.iter().zip(bbatch.chunks_exact(d)) {
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec(&[n, l, d], out)
}

pub fn bmm_nn_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, l, m] = dims3(a).unwrap();
    let d = b.shape()[2];
    let mut da = vec![T::zero(); a.len()];
    let mut db = vec![T::zero(); b.len()];
    for i in 0..n {
        let abatch = &a.data()[i * l * m..(i + 1) * l * m];
        let bbatch = &b.data()[i * m * d..(i + 1) * m * d];
        let gbatch = &g.data()[i * l * d..(i + 1) * l * d];
        let dabatch = &mut da[i * l * m..(i + 1) * l * m];
        let dbbatch = &mut db[i * m * d..(i + 1) * m * d];
        for ((grow, arow), darow) in gbatch
            .chunks_exact(d)
            .zip(abatch.chunks_exact(m))
            .zip(dabatch.chunks_exact_mut(m))
        {
            for (((&av, brow), dbrow), dav) in arow
                .iter()
                .zip(bbatch.chunks_exact(d))
                .zip(dbbatch.chunks_exact_mut(d))
                .zip(darow)
            {
                let mut acc = T::zero();
                for ((&gv, &bv), dbv) in grow.iter().zip(brow).zip(dbrow) {
                    acc += gv * bv;
                    *dbv += av * gv;
                }
                *dav += acc;
            }
        }
    }
    (
        Tensor::from_vec(a.shape(), da).unwrap(),
        Tensor::from_vec(b.shape(), db).unwrap(),
    )
}

/// Fused attention-weight kernel: `softmax_last(scale * q . k^T)` computed
/// row by row without materializing the raw score matrix.
/// `q: [N, L, d]`, `k: [N, M, d]` -> `[N, L, M]`.
pub fn attention_weights<T: Real>(q: &Tensor<T>, k: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    let ([n, l, d], [nk, m, dk]) = (dims3(q)?, dims3(k)?);
    if n != nk || d != dk {
        return Err(Error::Validation(format!(
            "attention_weights shape mismatch: {:?} vs {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let mut out = vec![T::zero(); n * l * m];
    // the head dimension is tiny; fixed-width dots unroll much better
    match d {
        1 => aw_forward::<T, 1>(q.data(), k.data(), &mut out, n, l, m, scale),
        2 => aw_forward::<T, 2>(q.data(), k.data(), &mut out, n, l, m, scale),
        4 => aw_forward::<T, 4>(q.data(), k.data(), &mut out, n, l, m, scale),
        8 => aw_forward::<T, 8>(q.data(), k.data(), &mut out, n, l, m, scale),
        _ => aw_forward_dyn(q.data(), k.data(), &mut out, n, l, m, d, scale),
    }
    Tensor::from_vec(&[n, l, m], out)
}

fn aw_forward<T: Real, const D: usize>(
    q: &[T],
    k: &[T],
    out: &mut [T],
    n: usize,
    l: usize,
    m: usize,
    scale: T,
) {
    for i in 0..n {
        let qbatch = &q[i * l * D..(i + 1) * l * D];
        let kbatch = &k[i * m * D..(i + 1) * m * D];
        let obatch = &mut out[i * l * m..(i + 1) * l * m];
        for (qrow, orow) in qbatch.chunks_exact(D).zip(obatch.chunks_exact_mut(m)) {
            let qa: &[T; D] = qrow.try_into().unwrap();
            let mut max = T::neg_infinity();
            for (krow, o) in kbatch.chunks_exact(D).zip(orow.iter_mut()) {
                let ka: &[T; D] = krow.try_into().unwrap();
                let mut acc = T::zero();
                for j in 0..D {
                    acc += qa[j] * ka[j];
                }
                let z = acc * scale;
                *o = z;
                max = max.max(z);
            }
            softmax_row_in_place(orow, max);
        }
    }
}

fn aw_forward_dyn<T: Real>(
    q: &[T],
    k: &[T],
    out: &mut [T],
    n: usize,
    l: usize,
    m: usize,
    d: usize,
    scale: T,
) {
    for i in 0..n {
        let qbatch = &q[i * l * d..(i + 1) * l * d];
        let kbatch = &k[i * m * d..(i + 1) * m * d];
        let obatch = &mut out[i * l * m..(i + 1) * l * m];
        for (qrow, orow) in qbatch.chunks_exact(d).zip(obatch.chunks_exact_mut(m)) {
            let mut max = T::neg_infinity();
            for (krow, o) in kbatch.chunks_exact(d).zip(orow.iter_mut()) {
                let mut acc = T::zero();
                for (qv, kv) in qrow.iter().zip(krow) {
                    acc += *qv * *kv;
                }
                let z = acc * scale;
                *o = z;
                max = max.max(z);
            }
            softmax_row_in_place(orow, max);
        }
    }
}

#[inline]
fn softmax_row_in_place<T: Real>(row: &mut [T], max: T) {
    let mut sum = T::zero();
    for o in row.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    let inv = T::one() / sum;
    for o in row.iter_mut() {
        *o = *o * inv;
    }
}

/// Backward of [`attention_weights`] given the saved weights `p` and upstream
/// gradient `g`: softmax backward per row, then score gradients into `q`, `k`.
pub fn attention_weights_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    scale: T,
    p: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, l, d] = dims3(q).unwrap();
    let m = k.shape()[1];
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let args = (q.data(), k.data(), p.data(), g.data());
    match d {
        1 => aw_backward::<T, 1>(args, (&mut dq, &mut dk), n, l, m, scale),
        2 => aw_backward::<T, 2>(args, (&mut dq, &mut dk), n, l, m, scale),
        4 => aw_backward::<T, 4>(args, (&mut dq, &mut dk), n, l, m, scale),
        8 => aw_backward::<T, 8>(args, (&mut dq, &mut dk), n, l, m, scale),
        _ => aw_backward_dyn(args, (&mut dq, &mut dk), n, l, m, d, scale),
    }
    (
        Tensor::from_vec(q.shape(), dq).unwrap(),
        Tensor::from_vec(k.shape(), dk).unwrap(),
    )
}

fn aw_backward<T: Real, const D: usize>(
    (q, k, p, g): (&[T], &[T], &[T], &[T]),
    (dq, dk): (&mut [T], &mut [T]),
    n: usize,
    l: usize,
    m: usize,
    scale: T,
) {
    for i in 0..n {
        let qbatch = &q[i * l * D..(i + 1) * l * D];
        let kbatch = &k[i * m * D..(i + 1) * m * D];
        let pbatch = &p[i * l * m..(i + 1) * l * m];
        let gbatch = &g[i * l * m..(i + 1) * l * m];
        let dqbatch = &mut dq[i * l * D..(i + 1) * l * D];
        let dkbatch = &mut dk[i * m * D..(i + 1) * m * D];
        for (((prow, grow), qrow), dqrow) in pbatch
            .chunks_exact(m)
            .zip(gbatch.chunks_exact(m))
            .zip(qbatch.chunks_exact(D))
            .zip(dqbatch.chunks_exact_mut(D))
        {
            let qa: &[T; D] = qrow.try_into().unwrap();
            let dqa: &mut [T; D] = dqrow.try_into().unwrap();
            let dot: T = prow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
            for (((&pv, &gv), krow), dkrow) in prow
                .iter()
                .zip(grow)
                .zip(kbatch.chunks_exact(D))
                .zip(dkbatch.chunks_exact_mut(D))
            {
                let dsv = pv * (gv - dot) * scale;
                let ka: &[T; D] = krow.try_into().unwrap();
                let dka: &mut [T; D] = dkrow.try_into().unwrap();
                for j in 0..D {
                    dqa[j] += dsv * ka[j];
                    dka[j] += dsv * qa[j];
                }
            }
        }
    }
}

fn aw_backward_dyn<T: Real>(
    (q, k, p, g): (&[T], &[T], &[T], &[T]),
    (dq, dk): (&mut [T], &mut [T]),
    n: usize,
    l: usize,
    m: usize,
    d: usize,
    scale: T,
) {
    for i in 0..n {
        let qbatch = &q[i * l * d..(i + 1) * l * d];
        let kbatch = &k[i * m * d..(i + 1) * m * d];
        let pbatch = &p[i * l * m..(i + 1) * l * m];
        let gbatch = &g[i * l * m..(i + 1) * l * m];
        let dqbatch = &mut dq[i * l * d..(i + 1) * l * d];
        let dkbatch = &mut dk[i * m * d..(i + 1) * m * d];
        for (((prow, grow), qrow), dqrow) in pbatch
            .chunks_exact(m)
            .zip(gbatch.chunks_exact(m))
            .zip(qbatch.chunks_exact(d))
            .zip(dqbatch.chunks_exact_mut(d))
        {
            let dot: T = prow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
            for (((&pv, &gv), krow), dkrow) in prow
                .iter()
                .zip(grow)
                .zip(kbatch.chunks_exact(d))
                .zip(dkbatch.chunks_exact_mut(d))
            {
                let dsv = pv * (gv - dot) * scale;
                for ((dqv, &kv), (dkv, &qv)) in dqrow
                    .iter_mut()
                    .zip(krow)
                    .zip(dkrow.iter_mut().zip(qrow))
                {
                    *dqv += dsv * kv;
                    *dkv += dsv * qv;
                }
            }
        }
    }
}

fn dims3<T: Real>(t: &Tensor<T>) -> Result<[usize; 3]> {
    if t.rank() != 3 {
        return Err(Error::Validation(format!(
            "expected rank-3 tensor, got {:?}",
            t.shape()
        )));
    }
    Ok([t.shape()[0], t.shape()[1], t.shape()[2]])
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Per last-axis slice: `(x - mean) / sqrt(var + eps)` then affine. Biased variance.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    Ok(layer_norm_full(x, gamma, beta, eps)?.0)
}

/// Returns `(y, xhat, inv_std)`; the extra outputs feed the backward pass.
pub fn layer_norm_full<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let d = *x.shape().last().ok_or_else(|| {
        Error::Validation("layer_norm requires rank >= 1".into())
    })?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::Validation(format!(
            "layer_norm affine shape mismatch: x {:?}, gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.len() / d;
    let mut y = Tensor::zeros_like(x);
    let mut xhat = Tensor::zeros_like(x);
    let mut inv_std = Vec::with_capacity(rows);
    let inv_d = T::one() / real::<T>(d as f64);
    for m in 0..rows {
        let xrow = &x.data()[m * d..(m + 1) * d];
        let mean = xrow.iter().copied().sum::<T>() * inv_d;
        let var = xrow
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            * inv_d;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for i in 0..d {
            let xh = (xrow[i] - mean) * inv;
            xhat.data_mut()[m * d + i] = xh;
            y.data_mut()[m * d + i] = gamma.data()[i] * xh + beta.data()[i];
        }
    }
    Ok((y, xhat, inv_std))
}

pub fn layer_norm_backward<T: Real>(
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = gamma.len();
    let rows = xhat.len() / d;
    let inv_d = T::one() / real::<T>(d as f64);
    let mut dx = Tensor::zeros_like(xhat);
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    for m in 0..rows {
        let xh = &xhat.data()[m * d..(m + 1) * d];
        let gr = &g.data()[m * d..(m + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            let dxh = gr[i] * gamma.data()[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[i];
            dgamma[i] += gr[i] * xh[i];
            dbeta[i] += gr[i];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        let dxrow = &mut dx.data_mut()[m * d..(m + 1) * d];
        for i in 0..d {
            let dxh = gr[i] * gamma.data()[i];
            dxrow[i] = inv_std[m] * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    (
        dx,
        Tensor::from_vec(&[d], dgamma).unwrap(),
        Tensor::from_vec(&[d], dbeta).unwrap(),
    )
}

/// Outputs of a train-mode batch-norm forward pass.
pub struct BatchNormTrainOut<T: Real> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Per-channel batch mean, for the running-stat update.
    pub mean: Tensor<T>,
    /// Per-channel biased batch variance, for the running-stat update.
    pub var: Tensor<T>,
}

/// Train-mode 1D batch norm over `(B, T)` per channel; `x: [B, C, T]`. Biased variance.
pub fn batch_norm_1d_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<BatchNormTrainOut<T>> {
    let [b, c, t] = dims3(x)?;
    check_bn_affine(c, gamma, beta)?;
    let n = b * t;
    if n < 2 {
        return Err(Error::Validation(format!(
            "batch_norm_1d train mode requires B*T >= 2, got {}",
            n
        )));
    }
    let inv_n = T::one() / real::<T>(n as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let row = &x.data()[(bi * c + ci) * t..(bi * c + ci + 1) * t];
            mean[ci] += row.iter().copied().sum::<T>();
        }
    }
    for m in mean.iter_mut() {
        *m = *m * inv_n;
    }
    for bi in 0..b {
        for ci in 0..c {
            let row = &x.data()[(bi * c + ci) * t..(bi * c + ci + 1) * t];
            let mu = mean[ci];
            var[ci] += row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
    }
    for v in var.iter_mut() {
        *v = *v * inv_n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = Tensor::zeros_like(x);
    let mut xhat = Tensor::zeros_like(x);
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t;
            let row = &x.data()[base..base + t];
            let (mu, inv, ga, be) = (mean[ci], inv_std[ci], gamma.data()[ci], beta.data()[ci]);
            for i in 0..t {
                let xh = (row[i] - mu) * inv;
                xhat.data_mut()[base + i] = xh;
                y.data_mut()[base + i] = ga * xh + be;
            }
        }
    }
    Ok(BatchNormTrainOut {
        y,
        xhat,
        inv_std,
        mean: Tensor::from_vec(&[c], mean)?,
        var: Tensor::from_vec(&[c], var)?,
    })
}

pub fn batch_norm_1d_train_backward<T: Real>(
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [b, c, t] = dims3(xhat).unwrap();
    let n = b * t;
    let inv_n = T::one() / real::<T>(n as f64);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_g_xhat = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t;
            for i in 0..t {
                sum_g[ci] += g.data()[base + i];
                sum_g_xhat[ci] += g.data()[base + i] * xhat.data()[base + i];
            }
        }
    }
    let mut dx = Tensor::zeros_like(xhat);
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t;
            let (ga, inv) = (gamma.data()[ci], inv_std[ci]);
            let mg = sum_g[ci] * inv_n;
            let mgx = sum_g_xhat[ci] * inv_n;
            for i in 0..t {
                let xh = xhat.data()[base + i];
                dx.data_mut()[base + i] = ga * inv * (g.data()[base + i] - mg - xh * mgx);
            }
        }
    }
    (
        dx,
        Tensor::from_vec(&[c], sum_g_xhat).unwrap(),
        Tensor::from_vec(&[c], sum_g).unwrap(),
    )
}

/// Eval-mode 1D batch norm: running statistics only.
pub fn batch_norm_1d_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let [b, c, t] = dims3(x)?;
    check_bn_affine(c, gamma, beta)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(Error::Validation(format!(
            "batch_norm_1d running stats shape mismatch for {} channels",
            c
        )));
    }
    let mut y = Tensor::zeros_like(x);
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t;
            let inv = T::one() / (running_var.data()[ci] + eps).sqrt();
            let (mu, ga, be) = (running_mean.data()[ci], gamma.data()[ci], beta.data()[ci]);
            for i in 0..t {
                y.data_mut()[base + i] = ga * (x.data()[base + i] - mu) * inv + be;
            }
        }
    }
    Ok(y)
}

pub fn batch_norm_1d_eval_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [b, c, t] = dims3(x).unwrap();
    let mut dx = Tensor::zeros_like(x);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t;
            let inv = T::one() / (running_var.data()[ci] + eps).sqrt();
            let (mu, ga) = (running_mean.data()[ci], gamma.data()[ci]);
            for i in 0..t {
                let gv = g.data()[base + i];
                dx.data_mut()[base + i] = gv * ga * inv;
                dgamma[ci] += gv * (x.data()[base + i] - mu) * inv;
                dbeta[ci] += gv;
            }
        }
    }
    (
        dx,
        Tensor::from_vec(&[c], dgamma).unwrap(),
        Tensor::from_vec(&[c], dbeta).unwrap(),
    )
}

fn check_bn_affine<T: Real>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Validation(format!(
            "batch_norm_1d affine shape mismatch for {} channels: gamma {:?}, beta {:?}",
            c,
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

/// Cross-correlation along time with zero padding.
/// `x: [B, C_in, T]`, `k: [C_out, C_in, kw]`, `b: [C_out]` -> `[B, C_out, T']`.
pub fn conv1d_temporal<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    pad: usize,
) -> Result<Tensor<T>> {
    let ([bs, c_in, t], kw) = conv1d_dims(x, k, b)?;
    let c_out = k.shape()[0];
    let t_out = (t + 2 * pad).checked_sub(kw - 1).ok_or_else(|| {
        Error::Validation(format!("conv1d kernel {} longer than padded input", kw))
    })?;
    let mut out = vec![T::zero(); bs * c_out * t_out];
    for bi in 0..bs {
        for o in 0..c_out {
            let obase = (bi * c_out + o) * t_out;
            let bias = b.data()[o];
            for v in &mut out[obase..obase + t_out] {
                *v = bias;
            }
            for i in 0..c_in {
                let xrow = &x.data()[(bi * c_in + i) * t..(bi * c_in + i + 1) * t];
                for j in 0..kw {
                    let kv = k.data()[(o * c_in + i) * kw + j];
                    // y[t'] += kv * x[t' + j - pad] for in-range source indices
                    let t0 = pad.saturating_sub(j);
                    let t1 = (t + pad - j).min(t_out);
                    for ti in t0..t1 {
                        out[obase + ti] += kv * xrow[ti + j - pad];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[bs, c_out, t_out], out)
}

fn conv1d_dims<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<([usize; 3], usize)> {
    let xs = dims3(x)?;
    if k.rank() != 3 || k.shape()[1] != xs[1] || b.shape() != [k.shape()[0]] {
        return Err(Error::Validation(format!(
            "conv1d shape mismatch: x {:?}, k {:?}, b {:?}",
            x.shape(),
            k.shape(),
            b.shape()
        )));
    }
    Ok((xs, k.shape()[2]))
}

pub fn conv1d_temporal_backward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    pad: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [bs, c_in, t] = dims3(x).unwrap();
    let (c_out, kw) = (k.shape()[0], k.shape()[2]);
    let t_out = g.shape()[2];
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); c_out];
    for bi in 0..bs {
        for o in 0..c_out {
            let grow = &g.data()[(bi * c_out + o) * t_out..(bi * c_out + o + 1) * t_out];
            db[o] += grow.iter().copied().sum::<T>();
            for i in 0..c_in {
                let xrow = &x.data()[(bi * c_in + i) * t..(bi * c_in + i + 1) * t];
                let dxrow = &mut dx[(bi * c_in + i) * t..(bi * c_in + i + 1) * t];
                for j in 0..kw {
                    let kv = k.data()[(o * c_in + i) * kw + j];
                    let mut dkv = T::zero();
                    let t0 = pad.saturating_sub(j);
                    let t1 = (t + pad - j).min(t_out);
                    for ti in t0..t1 {
                        let src = ti + j - pad;
                        dkv += grow[ti] * xrow[src];
                        dxrow[src] += grow[ti] * kv;
                    }
                    dk[(o * c_in + i) * kw + j] += dkv;
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).unwrap(),
        Tensor::from_vec(k.shape(), dk).unwrap(),
        Tensor::from_vec(&[c_out], db).unwrap(),
    )
}

/// `(1, kw)` cross-correlation: frequency axis untouched, time axis zero-padded.
/// `x: [B, C_in, F, T]`, `k: [C_out, C_in, 1, kw]` -> `[B, C_out, F, T']`.
pub fn conv2d_1x3<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    pad_t: usize,
) -> Result<Tensor<T>> {
    let (bs, c_in, f, t, c_out, kw) = conv2d_dims(x, k, b)?;
    let t_out = (t + 2 * pad_t).checked_sub(kw - 1).ok_or_else(|| {
        Error::Validation(format!("conv2d kernel {} longer than padded input", kw))
    })?;
    let mut out = vec![T::zero(); bs * c_out * f * t_out];
    for bi in 0..bs {
        for o in 0..c_out {
            let bias = b.data()[o];
            for fi in 0..f {
                let obase = ((bi * c_out + o) * f + fi) * t_out;
                for v in &mut out[obase..obase + t_out] {
                    *v = bias;
                }
                for i in 0..c_in {
                    let xbase = ((bi * c_in + i) * f + fi) * t;
                    let xrow = &x.data()[xbase..xbase + t];
                    for j in 0..kw {
                        let kv = k.data()[(o * c_in + i) * kw + j];
                        let t0 = pad_t.saturating_sub(j);
                        let t1 = (t + pad_t - j).min(t_out);
                        for ti in t0..t1 {
                            out[obase + ti] += kv * xrow[ti + j - pad_t];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[bs, c_out, f, t_out], out)
}

fn conv2d_dims<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.rank() != 4 || k.rank() != 4 {
        return Err(Error::Validation(format!(
            "conv2d expects rank-4 x and k, got {:?} and {:?}",
            x.shape(),
            k.shape()
        )));
    }
    let (bs, c_in, f, t) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kc, kf, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if kc != c_in || kf != 1 || b.shape() != [c_out] {
        return Err(Error::Validation(format!(
            "conv2d shape mismatch: x {:?}, k {:?}, b {:?}",
            x.shape(),
            k.shape(),
            b.shape()
        )));
    }
    Ok((bs, c_in, f, t, c_out, kw))
}

pub fn conv2d_1x3_backward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    pad_t: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (bs, c_in, f, t) = (
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
    );
    let (c_out, kw) = (k.shape()[0], k.shape()[3]);
    let t_out = g.shape()[3];
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); c_out];
    for bi in 0..bs {
        for o in 0..c_out {
            for fi in 0..f {
                let gbase = ((bi * c_out + o) * f + fi) * t_out;
                let grow = &g.data()[gbase..gbase + t_out];
                db[o] += grow.iter().copied().sum::<T>();
                for i in 0..c_in {
                    let xbase = ((bi * c_in + i) * f + fi) * t;
                    let xrow = &x.data()[xbase..xbase + t];
                    let dxrow = &mut dx[xbase..xbase + t];
                    for j in 0..kw {
                        let kv = k.data()[(o * c_in + i) * kw + j];
                        let mut dkv = T::zero();
                        let t0 = pad_t.saturating_sub(j);
                        let t1 = (t + pad_t - j).min(t_out);
                        for ti in t0..t1 {
                            let src = ti + j - pad_t;
                            dkv += grow[ti] * xrow[src];
                            dxrow[src] += grow[ti] * kv;
                        }
                        dk[(o * c_in + i) * kw + j] += dkv;
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).unwrap(),
        Tensor::from_vec(k.shape(), dk).unwrap(),
        Tensor::from_vec(&[c_out], db).unwrap(),
    )
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: zero with probability `rate`, scale survivors by `1/(1-rate)`.
/// Eval mode is the identity. Matches the standalone contract; the tape op draws
/// from a shared stream instead of a fresh seed.
pub fn dropout<T: Real>(x: &Tensor<T>, rate: f64, train: bool, seed: u64) -> Result<Tensor<T>> {
    if !train || rate == 0.0 {
        validate_rate(rate)?;
        return Ok(x.clone());
    }
    validate_rate(rate)?;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dropout_masked(x, rate, &mut rng).0)
}

pub(crate) fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Validation(format!(
            "dropout rate must lie in [0, 1), got {}",
            rate
        )));
    }
    Ok(())
}

/// Returns `(y, scaled_mask)`; backward is `g * scaled_mask`.
/// The drop decision thresholds one u32 draw per element.
pub(crate) fn dropout_masked<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Tensor<T>) {
    let keep_scale: T = real(1.0 / (1.0 - rate));
    let threshold = (rate * 2f64.powi(32)).round() as u64;
    let mut mask = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    for ((m, o), &v) in mask
        .data_mut()
        .iter_mut()
        .zip(y.data_mut())
        .zip(x.data())
    {
        if u64::from(rng.next_u32()) >= threshold {
            *m = keep_scale;
            *o = v * keep_scale;
        }
    }
    (y, mask)
}

// ---------------------------------------------------------------------------
// cross-entropy
// ---------------------------------------------------------------------------

/// Mean over the batch of `-log softmax(logits)[label]`, log-sum-exp stabilized.
/// Returns `(loss, probs)`; probs feed the backward pass.
pub fn cross_entropy_full<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 {
        return Err(Error::Validation(format!(
            "cross_entropy expects [B, c] logits, got {:?}",
            logits.shape()
        )));
    }
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::Validation(format!(
            "cross_entropy batch mismatch: {} logits rows vs {} labels",
            b,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Validation(format!(
            "label {} out of range for {} classes",
            bad, c
        )));
    }
    let mut probs = Tensor::zeros_like(logits);
    let mut loss = T::zero();
    for (bi, &label) in labels.iter().enumerate() {
        let row = &logits.data()[bi * c..(bi + 1) * c];
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut sum = T::zero();
        for i in 0..c {
            let e = (row[i] - max).exp();
            probs.data_mut()[bi * c + i] = e;
            sum += e;
        }
        for i in 0..c {
            probs.data_mut()[bi * c + i] = probs.data()[bi * c + i] / sum;
        }
        loss += sum.ln() + max - row[label];
    }
    Ok((loss / real(b as f64), probs))
}

pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    Ok(cross_entropy_full(logits, labels)?.0)
}

pub fn cross_entropy_backward<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
    gout: T,
) -> Tensor<T> {
    let (b, c) = (probs.shape()[0], probs.shape()[1]);
    let scale = gout / real(b as f64);
    let mut dl = probs.clone();
    for (bi, &label) in labels.iter().enumerate() {
        dl.data_mut()[bi * c + label] -= T::one();
    }
    for v in dl.data_mut() {
        *v = *v * scale;
    }
    dl
}

// ---------------------------------------------------------------------------
// shape movement
// ---------------------------------------------------------------------------

pub fn permute<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::Validation(format!(
            "invalid permutation {:?} for shape {:?}",
            axes,
            x.shape()
        )));
    }
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let out_strides = strides(&out_shape);
    let mut out = vec![T::zero(); x.len()];
    let mut idx = vec![0usize; rank];
    for &v in x.data() {
        // idx is the multi-index in the input layout
        let mut off = 0;
        for (pos, &a) in axes.iter().enumerate() {
            off += idx[a] * out_strides[pos];
        }
        out[off] = v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < in_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_vec(&out_shape, out)
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Prepends a learnable token at sequence index 0: `x: [B, L, d]`, `tok: [d]`.
pub fn prepend_token<T: Real>(x: &Tensor<T>, tok: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, l, d] = dims3(x)?;
    if tok.shape() != [d] {
        return Err(Error::Validation(format!(
            "token shape {:?} does not match model dim {}",
            tok.shape(),
            d
        )));
    }
    let mut out = vec![T::zero(); b * (l + 1) * d];
    for bi in 0..b {
        let obase = bi * (l + 1) * d;
        out[obase..obase + d].copy_from_slice(tok.data());
        out[obase + d..obase + (l + 1) * d]
            .copy_from_slice(&x.data()[bi * l * d..(bi + 1) * l * d]);
    }
    Tensor::from_vec(&[b, l + 1, d], out)
}

pub fn prepend_token_backward<T: Real>(g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let [b, l1, d] = dims3(g).unwrap();
    let l = l1 - 1;
    let mut dx = vec![T::zero(); b * l * d];
    let mut dtok = vec![T::zero(); d];
    for bi in 0..b {
        let gbase = bi * l1 * d;
        for i in 0..d {
            dtok[i] += g.data()[gbase + i];
        }
        dx[bi * l * d..(bi + 1) * l * d]
            .copy_from_slice(&g.data()[gbase + d..gbase + l1 * d]);
    }
    (
        Tensor::from_vec(&[b, l, d], dx).unwrap(),
        Tensor::from_vec(&[d], dtok).unwrap(),
    )
}

/// Selects sequence position 0: `[B, L, d] -> [B, d]`.
pub fn take_token0<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, l, d] = dims3(x)?;
    let mut out = vec![T::zero(); b * d];
    for bi in 0..b {
        out[bi * d..(bi + 1) * d].copy_from_slice(&x.data()[bi * l * d..bi * l * d + d]);
    }
    Tensor::from_vec(&[b, d], out)
}

pub fn take_token0_backward<T: Real>(g: &Tensor<T>, l: usize) -> Tensor<T> {
    let (b, d) = (g.shape()[0], g.shape()[1]);
    let mut dx = Tensor::zeros(&[b, l, d]);
    for bi in 0..b {
        dx.data_mut()[bi * l * d..bi * l * d + d].copy_from_slice(&g.data()[bi * d..(bi + 1) * d]);
    }
    dx
}

// ---------------------------------------------------------------------------
// Gaussian positional encoding
// ---------------------------------------------------------------------------

/// Normalized-Gaussian position weights: `p[l, k] = N(l; mu_k, sigma_k^2) / sum_j N(l; mu_j, sigma_j^2)`.
/// Computed as a softmax over log-densities so extreme sigmas stay finite.
pub fn gaussian_position_weights<T: Real>(
    len: usize,
    mu: &Tensor<T>,
    sigma: &Tensor<T>,
) -> Tensor<T> {
    let k = mu.len();
    let mut p = Tensor::zeros(&[len, k]);
    let half: T = real(0.5);
    for l in 0..len {
        let t = real::<T>(l as f64);
        let row = &mut p.data_mut()[l * k..(l + 1) * k];
        let mut max = T::neg_infinity();
        for ki in 0..k {
            let s = sigma.data()[ki];
            let z = (t - mu.data()[ki]) / s;
            let logg = -half * z * z - s.ln();
            row[ki] = logg;
            max = max.max(logg);
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    p
}

/// `y[b,l,:] = x[b,l,:] + sum_k p[l,k] * embed[k,:]`.
pub fn gaussian_pe<T: Real>(
    x: &Tensor<T>,
    mu: &Tensor<T>,
    sigma: &Tensor<T>,
    embed: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [b, l, d] = dims3(x)?;
    let k = mu.len();
    if sigma.shape() != [k] || embed.shape() != [k, d] {
        return Err(Error::Validation(format!(
            "gaussian_pe shape mismatch: mu {:?}, sigma {:?}, embed {:?}, x {:?}",
            mu.shape(),
            sigma.shape(),
            embed.shape(),
            x.shape()
        )));
    }
    if sigma.data().iter().any(|&s| s <= T::zero()) {
        return Err(Error::Validation(
            "gaussian_pe requires all sigma > 0".into(),
        ));
    }
    let p = gaussian_position_weights(l, mu, sigma);
    let mut pe = vec![T::zero(); l * d];
    for li in 0..l {
        for ki in 0..k {
            let w = p.data()[li * k + ki];
            let erow = &embed.data()[ki * d..(ki + 1) * d];
            let perow = &mut pe[li * d..(li + 1) * d];
            for (o, &e) in perow.iter_mut().zip(erow) {
                *o += w * e;
            }
        }
    }
    let mut y = x.clone();
    for bi in 0..b {
        let ybase = bi * l * d;
        for (o, &v) in y.data_mut()[ybase..ybase + l * d].iter_mut().zip(&pe) {
            *o += v;
        }
    }
    Ok((y, p))
}

/// Gradients for all four inputs of [`gaussian_pe`].
pub fn gaussian_pe_backward<T: Real>(
    p: &Tensor<T>,
    mu: &Tensor<T>,
    sigma: &Tensor<T>,
    embed: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>) {
    let [b, l, d] = dims3(g).unwrap();
    let k = mu.len();
    // h[l, :] = sum over batch of upstream grads
    let mut h = vec![T::zero(); l * d];
    for bi in 0..b {
        for (o, &v) in h.iter_mut().zip(&g.data()[bi * l * d..(bi + 1) * l * d]) {
            *o += v;
        }
    }
    let mut dembed = Tensor::zeros_like(embed);
    let mut dmu = Tensor::zeros_like(mu);
    let mut dsigma = Tensor::zeros_like(sigma);
    for li in 0..l {
        let t = real::<T>(li as f64);
        let hrow = &h[li * d..(li + 1) * d];
        // q[k] = dL/dp[l,k]; qbar = sum_k p*q
        let mut q = vec![T::zero(); k];
        let mut qbar = T::zero();
        for ki in 0..k {
            let erow = &embed.data()[ki * d..(ki + 1) * d];
            let mut acc = T::zero();
            for (hv, ev) in hrow.iter().zip(erow) {
                acc += *hv * *ev;
            }
            q[ki] = acc;
            qbar += p.data()[li * k + ki] * acc;
        }
        for ki in 0..k {
            let pv = p.data()[li * k + ki];
            let (m, s) = (mu.data()[ki], sigma.data()[ki]);
            let diff = t - m;
            let coeff = (q[ki] - qbar) * pv;
            dmu.data_mut()[ki] += coeff * diff / (s * s);
            dsigma.data_mut()[ki] += coeff * (diff * diff / (s * s * s) - T::one() / s);
            let drow = &mut dembed.data_mut()[ki * d..(ki + 1) * d];
            for (o, &hv) in drow.iter_mut().zip(hrow) {
                *o += pv * hv;
            }
        }
    }
    (g.clone(), dmu, dsigma, dembed)
}
