//! Complex PCA over CSI packets: Hermitian covariance, cyclic Jacobi
//! eigendecomposition, projection onto the leading components.

use num_complex::Complex;

use crate::csi::{CMatrix, Complex32, CsiWindow};
use crate::error::{Error, Result};

type C64 = Complex<f64>;

/// A fitted projection: `y = components . (x - mean)`.
///
/// Component rows are orthonormal under the Hermitian inner product, with the
/// phase fixed so each row's largest-modulus entry is real-positive.
/// Reconstruction is `components^H . y + mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<C64>,
    /// `[n, F]`, row-major.
    pub components: Vec<Vec<C64>>,
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn subcarriers(&self) -> usize {
        self.mean.len()
    }

    /// `components . (x - mean)` for one packet.
    pub fn project_column(&self, x: &[C64]) -> Vec<C64> {
        self.components
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(&c, (&xv, &mu))| c * (xv - mu))
                    .sum()
            })
            .collect()
    }

    /// `components^H . y + mean`.
    pub fn reconstruct_column(&self, y: &[C64]) -> Vec<C64> {
        let f = self.subcarriers();
        let mut out = self.mean.clone();
        for (row, &yv) in self.components.iter().zip(y) {
            for i in 0..f {
                out[i] += row[i].conj() * yv;
            }
        }
        out
    }

    /// `max |components . components^H - I|`, the orthonormality defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.components.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let dot: C64 = self.components[i]
                    .iter()
                    .zip(&self.components[j])
                    .map(|(&a, &b)| a * b.conj())
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

/// Fits PCA on every packet (time column) of the given windows.
///
/// Requires `1 <= n <= F` and at least `F` packets in total. Deterministic up
/// to the per-component phase convention. Rank-deficient data yields trailing
/// near-zero eigenvalues rather than an error.
pub fn pca_fit(windows: &[CsiWindow], n: usize) -> Result<PcaModel> {
    let f = windows
        .first()
        .map(|w| w.subcarriers())
        .ok_or_else(|| Error::Validation("pca_fit needs at least one window".into()))?;
    if n < 1 || n > f {
        return Err(Error::Validation(format!(
            "component count {} out of range 1..={}",
            n, f
        )));
    }
    let total_packets: usize = windows.iter().map(|w| w.len()).sum();
    if total_packets < f {
        return Err(Error::Validation(format!(
            "pca_fit needs at least {} packets, got {}",
            f, total_packets
        )));
    }
    let mut mean = vec![C64::new(0.0, 0.0); f];
    for w in windows {
        if w.subcarriers() != f {
            return Err(Error::Validation(
                "pca_fit windows must share the subcarrier count".into(),
            ));
        }
        for t in 0..w.len() {
            for (fi, m) in mean.iter_mut().enumerate() {
                let v = w.csi.at(fi, t);
                *m += C64::new(v.re as f64, v.im as f64);
            }
        }
    }
    let inv_n = 1.0 / total_packets as f64;
    for m in mean.iter_mut() {
        *m *= inv_n;
    }
    // Hermitian covariance C = E[(x - mu)(x - mu)^H]
    let mut cov = vec![C64::new(0.0, 0.0); f * f];
    let mut centered = vec![C64::new(0.0, 0.0); f];
    for w in windows {
        for t in 0..w.len() {
            for fi in 0..f {
                let v = w.csi.at(fi, t);
                centered[fi] = C64::new(v.re as f64, v.im as f64) - mean[fi];
            }
            for a in 0..f {
                for b in a..f {
                    cov[a * f + b] += centered[a] * centered[b].conj();
                }
            }
        }
    }
    for a in 0..f {
        for b in a..f {
            let v = cov[a * f + b] * inv_n;
            cov[a * f + b] = v;
            cov[b * f + a] = v.conj();
        }
    }

    let (eigenvalues, vectors) = hermitian_eig(&cov, f);
    let mut components = Vec::with_capacity(n);
    for j in 0..n {
        // row j = v_j^H so that projection is the Hermitian inner product
        let mut row: Vec<C64> = (0..f).map(|i| vectors[i * f + j].conj()).collect();
        // phase fix: largest-modulus entry becomes real-positive
        let (mut best, mut best_norm) = (0usize, -1.0f64);
        for (i, v) in row.iter().enumerate() {
            if v.norm() > best_norm {
                best_norm = v.norm();
                best = i;
            }
        }
        if best_norm > 1e-300 {
            let rot = row[best].conj() / best_norm;
            for v in row.iter_mut() {
                *v *= rot;
            }
        }
        components.push(row);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: eigenvalues[..n].to_vec(),
    })
}

/// Replaces each time column by its projection; output has `n` virtual
/// subcarriers.
pub fn pca_project(window: &CsiWindow, model: &PcaModel) -> Result<CsiWindow> {
    if window.subcarriers() != model.subcarriers() {
        return Err(Error::Validation(format!(
            "window has {} subcarriers, PCA model expects {}",
            window.subcarriers(),
            model.subcarriers()
        )));
    }
    let (n, t) = (model.components.len(), window.len());
    let mut out = CMatrix::zeros(n, t);
    let mut col = vec![C64::new(0.0, 0.0); model.subcarriers()];
    for ti in 0..t {
        for (fi, c) in col.iter_mut().enumerate() {
            let v = window.csi.at(fi, ti);
            *c = C64::new(v.re as f64, v.im as f64);
        }
        for (r, y) in model.project_column(&col).into_iter().enumerate() {
            out.set(r, ti, Complex32::new(y.re as f32, y.im as f32));
        }
    }
    Ok(CsiWindow {
        csi: out,
        label: window.label,
        source: window.source,
    })
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted non-increasing
/// and eigenvectors as the columns of the returned `f x f` matrix.
pub fn hermitian_eig(matrix: &[C64], f: usize) -> (Vec<f64>, Vec<C64>) {
    assert_eq!(matrix.len(), f * f);
    let mut a = matrix.to_vec();
    let mut v = vec![C64::new(0.0, 0.0); f * f];
    for i in 0..f {
        v[i * f + i] = C64::new(1.0, 0.0);
    }
    let scale: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if scale > 0.0 {
        let tol = 1e-14 * scale;
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for p in 0..f {
                for q in p + 1..f {
                    off += a[p * f + q].norm_sqr();
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..f {
                for q in p + 1..f {
                    let apq = a[p * f + q];
                    let r = apq.norm();
                    if r <= tol * 1e-2 {
                        continue;
                    }
                    let phase = apq / r; // e^{i alpha}
                    let app = a[p * f + p].re;
                    let aqq = a[q * f + q].re;
                    let tau = (aqq - app) / (2.0 * r);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // U differs from identity in rows/cols p, q:
                    // U[p][p] = c            U[p][q] = s
                    // U[q][p] = -s e^{-ia}   U[q][q] = c e^{-ia}
                    let pc = phase.conj();
                    for k in 0..f {
                        if k == p || k == q {
                            continue;
                        }
                        let akp = a[k * f + p];
                        let akq = a[k * f + q];
                        let new_p = akp * c - akq * pc * s;
                        let new_q = akp * s + akq * pc * c;
                        a[k * f + p] = new_p;
                        a[k * f + q] = new_q;
                        a[p * f + k] = new_p.conj();
                        a[q * f + k] = new_q.conj();
                    }
                    a[p * f + p] = C64::new(app - t * r, 0.0);
                    a[q * f + q] = C64::new(aqq + t * r, 0.0);
                    a[p * f + q] = C64::new(0.0, 0.0);
                    a[q * f + p] = C64::new(0.0, 0.0);
                    for k in 0..f {
                        let vkp = v[k * f + p];
                        let vkq = v[k * f + q];
                        v[k * f + p] = vkp * c - vkq * pc * s;
                        v[k * f + q] = vkp * s + vkq * pc * c;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&i, &j| {
        a[j * f + j]
            .re
            .partial_cmp(&a[i * f + i].re)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * f + i].re).collect();
    let mut sorted_v = vec![C64::new(0.0, 0.0); f * f];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..f {
            sorted_v[k * f + dst] = v[k * f + src];
        }
    }
    (eigenvalues, sorted_v)
}
