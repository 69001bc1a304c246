use num_complex::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::csi::{CMatrix, Complex32, CsiWindow};

type C64 = Complex<f64>;

fn window_from_fn(f: usize, t: usize, gen: impl Fn(usize, usize) -> Complex32) -> CsiWindow {
    let mut m = CMatrix::zeros(f, t);
    for fi in 0..f {
        for ti in 0..t {
            m.set(fi, ti, gen(fi, ti));
        }
    }
    CsiWindow {
        csi: m,
        label: 0,
        source: (0, 0),
    }
}

fn rand_window(f: usize, t: usize, seed: u64) -> CsiWindow {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut m = CMatrix::zeros(f, t);
    for fi in 0..f {
        for ti in 0..t {
            m.set(
                fi,
                ti,
                Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            );
        }
    }
    CsiWindow {
        csi: m,
        label: 0,
        source: (0, 0),
    }
}

/// O(N^2) DFT, the independent reference for every spectral test.
fn naive_dft(x: &[C64]) -> Vec<C64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                acc += v * C64::new(ang.cos(), ang.sin());
            }
            acc
        })
        .collect()
}

// ---------------------------------------------------------------------------
// amplitude
// ---------------------------------------------------------------------------

#[test]
fn amplitude_of_three_four_is_five() {
    let w = window_from_fn(3, 4, |_, _| Complex32::new(3.0, 4.0));
    let a: FeatureTensor<f64> = amplitude(&w);
    assert_eq!(a.kind, FeatureKind::Amplitude);
    assert_eq!(a.data.shape(), &[1, 3, 4]);
    for &v in a.data.data() {
        assert!((v - 5.0).abs() < 1e-12);
    }
}

#[test]
fn amplitude_of_zero_window_is_zero() {
    let w = window_from_fn(2, 3, |_, _| Complex32::new(0.0, 0.0));
    let a: FeatureTensor<f64> = amplitude(&w);
    assert!(a.data.data().iter().all(|&v| v == 0.0));
}

#[test]
fn amplitude_shape_for_3do_window() {
    let w = rand_window(52, 351, 0);
    let a: FeatureTensor<f32> = amplitude(&w);
    assert_eq!(a.data.shape(), &[1, 52, 351]);
}

// ---------------------------------------------------------------------------
// dft
// ---------------------------------------------------------------------------

#[test]
fn dft_of_unit_impulse_is_flat() {
    let mut x = vec![C64::new(0.0, 0.0); 16];
    x[0] = C64::new(1.0, 0.0);
    for v in dft(&x) {
        assert!((v - C64::new(1.0, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn dft_of_pure_tone_concentrates_in_one_bin() {
    let n = 125;
    let x: Vec<C64> = (0..n)
        .map(|i| {
            let ang = 2.0 * std::f64::consts::PI * 3.0 * i as f64 / n as f64;
            C64::new(ang.cos(), ang.sin())
        })
        .collect();
    let spec = dft(&x);
    assert!((spec[3] - C64::new(n as f64, 0.0)).norm() < 1e-9);
    for (k, v) in spec.iter().enumerate() {
        if k != 3 {
            assert!(v.norm() < 1e-9, "bin {} leaked {}", k, v.norm());
        }
    }
}

#[test]
fn dft_matches_naive_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let x: Vec<C64> = (0..125)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let got = dft(&x);
    let expect = naive_dft(&x);
    let scale: f64 = expect.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (g, e) in got.iter().zip(&expect) {
        assert!((g - e).norm() / scale < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dft_is_linear_and_preserves_energy(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha20Rng| -> Vec<C64> {
            (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
        };
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        let (a, b) = (
            C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        );
        let lhs: Vec<C64> = x.iter().zip(&y).map(|(&u, &v)| a * u + b * v).collect();
        let fx = dft(&x);
        let fy = dft(&y);
        let flhs = dft(&lhs);
        for k in 0..n {
            prop_assert!((flhs[k] - (a * fx[k] + b * fy[k])).norm() < 1e-9 * n as f64);
        }
        // Parseval: sum |x|^2 = (1/N) sum |X|^2
        let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let freq: f64 = fx.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        prop_assert!((time - freq).abs() <= 1e-9 * time.max(1.0));
    }
}

// ---------------------------------------------------------------------------
// stft_dfs
// ---------------------------------------------------------------------------

#[test]
fn stft_of_zero_window_is_zero() {
    let w = window_from_fn(2, 40, |_, _| Complex32::new(0.0, 0.0));
    let spec: Spectrogram<f64> = stft_dfs(&w, &DfsConfig::new(100.0)).unwrap();
    assert!(spec.data().iter().all(|c| c.norm() == 0.0));
}

#[test]
fn stft_default_shape_for_3do_window() {
    let w = rand_window(52, 351, 1);
    let spec: Spectrogram<f32> = stft_dfs(&w, &DfsConfig::new(100.0)).unwrap();
    assert_eq!((spec.subcarriers, spec.bins, spec.frames), (52, 121, 351));
}

#[test]
fn stft_preserves_time_length_for_any_t() {
    let mut cfg = DfsConfig::new(50.0);
    cfg.segment_len = 9;
    cfg.band_bins = 7;
    cfg.gauss_sigma = 1.5;
    for t in 1..=24 {
        let w = rand_window(1, t, t as u64);
        let spec: Spectrogram<f64> = stft_dfs(&w, &cfg).unwrap();
        assert_eq!(spec.frames, t, "T = {}", t);
    }
}

#[test]
fn stft_rejects_band_wider_than_segment() {
    let mut cfg = DfsConfig::new(100.0);
    cfg.band_bins = 127;
    let w = rand_window(1, 10, 2);
    assert!(stft_dfs::<f64>(&w, &cfg).is_err());
}

/// Independent STFT of one frame: reflect pad, Gaussian window, naive DFT,
/// DC-centered crop.
fn naive_stft_frame(series: &[C64], cfg: &DfsConfig, frame: usize) -> Vec<C64> {
    let (l, bb, t) = (cfg.segment_len, cfg.band_bins, series.len());
    let pad = (l - 1) / 2;
    let reflect = |i: isize| -> usize {
        if t == 1 {
            return 0;
        }
        let p = 2 * (t as isize - 1);
        let mut m = i.rem_euclid(p);
        if m >= t as isize {
            m = p - m;
        }
        m as usize
    };
    let center = (l as f64 - 1.0) / 2.0;
    let seg: Vec<C64> = (0..l)
        .map(|j| {
            let w = (-0.5 * ((j as f64 - center) / cfg.gauss_sigma).powi(2)).exp();
            series[reflect(frame as isize * cfg.hop as isize - pad as isize + j as isize)] * w
        })
        .collect();
    let spec = naive_dft(&seg);
    let half = l / 2;
    let drop = (l - bb) / 2;
    (0..bb)
        .map(|b| spec[(b + drop + l - half) % l])
        .collect()
}

#[test]
fn stft_pure_tone_peaks_at_expected_bin_and_matches_oracle() {
    let cfg = DfsConfig::new(100.0);
    let tone_hz = 12.0;
    let t = 351;
    let w = window_from_fn(1, t, |_, ti| {
        let ang = 2.0 * std::f64::consts::PI * tone_hz * ti as f64 / 100.0;
        Complex32::new(ang.cos() as f32, ang.sin() as f32)
    });
    let spec: Spectrogram<f64> = stft_dfs(&w, &cfg).unwrap();
    // 0.8 Hz resolution -> +12 Hz sits 15 bins above DC (bin 60)
    let dc = (cfg.band_bins - 1) / 2;
    let expect_bin = dc + (tone_hz / cfg.bin_resolution()).round() as usize;
    assert_eq!(expect_bin, 75);
    // frames whose segment lies inside the series; reflect padding mirrors a
    // complex tone into -f, so edge frames see both signs
    for frame in [62usize, 100, 175, 288] {
        let mut best = (0usize, f64::NEG_INFINITY);
        for b in 0..spec.bins {
            let mag = spec.at(0, b, frame).norm();
            if mag > best.1 {
                best = (b, mag);
            }
        }
        assert_eq!(best.0, expect_bin, "frame {}", frame);
    }
    // full per-bin agreement with the naive oracle on a few frames
    let series: Vec<C64> = (0..t)
        .map(|ti| {
            let v = w.csi.at(0, ti);
            C64::new(v.re as f64, v.im as f64)
        })
        .collect();
    for frame in [0usize, 17, 350] {
        let oracle = naive_stft_frame(&series, &cfg, frame);
        for b in 0..cfg.band_bins {
            let got = spec.at(0, b, frame);
            assert!(
                (got - oracle[b]).norm() < 1e-9 * (oracle[b].norm() + 1.0),
                "frame {} bin {}",
                frame,
                b
            );
        }
    }
}

// ---------------------------------------------------------------------------
// dfs magnitude
// ---------------------------------------------------------------------------

#[test]
fn dfs_magnitude_is_modulus() {
    let w = window_from_fn(1, 10, |_, ti| {
        if ti == 0 {
            Complex32::new(3.0, -4.0)
        } else {
            Complex32::new(0.0, 0.0)
        }
    });
    let mut cfg = DfsConfig::new(100.0);
    cfg.segment_len = 5;
    cfg.band_bins = 5;
    cfg.gauss_sigma = 1.0;
    let spec: Spectrogram<f64> = stft_dfs(&w, &cfg).unwrap();
    let mag = dfs_magnitude(&spec);
    assert_eq!(mag.kind, FeatureKind::DfsMagnitude);
    for (m, c) in mag.data.data().iter().zip(spec.data()) {
        assert!((m - c.norm()).abs() < 1e-12);
        assert!(*m >= 0.0);
    }
}

#[test]
fn dfs_magnitude_invariant_to_global_phase() {
    let cfg = DfsConfig::new(100.0);
    let w = rand_window(3, 60, 5);
    let theta = 1.234f64;
    let rot = Complex32::new(theta.cos() as f32, theta.sin() as f32);
    let wr = window_from_fn(3, 60, |fi, ti| w.csi.at(fi, ti) * rot);
    let a: FeatureTensor<f64> = dfs_magnitude(&stft_dfs(&w, &cfg).unwrap());
    let b: FeatureTensor<f64> = dfs_magnitude(&stft_dfs(&wr, &cfg).unwrap());
    for (x, y) in a.data.data().iter().zip(b.data.data()) {
        assert!((x - y).abs() < 1e-5 * (x.abs() + 1.0));
    }
}

// ---------------------------------------------------------------------------
// subcarrier selection
// ---------------------------------------------------------------------------

#[test]
fn uniform_one_and_none_are_identity() {
    let w = rand_window(7, 9, 6);
    let u1 = select_subcarriers(&w, &SubsamplingSpec::parse("U1", 0).unwrap(), None).unwrap();
    let none = select_subcarriers(&w, &SubsamplingSpec::parse("none", 0).unwrap(), None).unwrap();
    assert_eq!(u1.csi, w.csi);
    assert_eq!(none.csi, w.csi);
}

#[test]
fn uniform_four_on_52_subcarriers() {
    let idx = selection_indices(52, &SubsamplingSpec::parse("U4", 0).unwrap())
        .unwrap()
        .unwrap();
    assert_eq!(idx.len(), 13);
    assert_eq!(idx, (0..52).step_by(4).collect::<Vec<_>>());
}

#[test]
fn banded_8_4_on_52_subcarriers() {
    let idx = selection_indices(52, &SubsamplingSpec::parse("B8-4", 11).unwrap())
        .unwrap()
        .unwrap();
    assert_eq!(idx.len(), 32);
    let mut distinct = idx.clone();
    distinct.dedup();
    assert_eq!(distinct.len(), 32);
    // bands of sizes 7,7,7,7,6,6,6,6 -> exactly 4 indices per band
    let bounds = [0usize, 7, 14, 21, 28, 34, 40, 46, 52];
    for b in 0..8 {
        let in_band = idx
            .iter()
            .filter(|&&i| i >= bounds[b] && i < bounds[b + 1])
            .count();
        assert_eq!(in_band, 4, "band {}", b);
    }
}

#[test]
fn random_selection_is_sorted_distinct_deterministic() {
    let spec = SubsamplingSpec::parse("R5", 77).unwrap();
    let a = selection_indices(12, &spec).unwrap().unwrap();
    let b = selection_indices(12, &spec).unwrap().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    assert!(a.windows(2).all(|p| p[0] < p[1]));
    assert!(a.iter().all(|&i| i < 12));
}

#[test]
fn selection_rejects_oversized_requests() {
    assert!(selection_indices(4, &SubsamplingSpec::parse("R5", 0).unwrap()).is_err());
    // 9 subcarriers in 4 bands -> smallest band has 2
    assert!(selection_indices(9, &SubsamplingSpec::parse("B4-3", 0).unwrap()).is_err());
    let w = rand_window(4, 5, 8);
    let err =
        select_subcarriers(&w, &SubsamplingSpec::parse("PC2", 0).unwrap(), None).unwrap_err();
    assert_eq!(err.code(), "validation_error");
}

#[test]
fn spec_string_grammar_round_trips() {
    for s in ["none", "R32", "U4", "B8-4", "PC8"] {
        let spec = SubsamplingSpec::parse(s, 1).unwrap();
        assert_eq!(spec.to_string(), s);
    }
    assert!(SubsamplingSpec::parse("Q4", 0).is_err());
    assert!(SubsamplingSpec::parse("B8", 0).is_err());
    assert!(SubsamplingSpec::parse("U0", 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn banded_yields_exactly_bands_times_per_band(
        f in 4usize..64,
        bands in 1usize..8,
        per_band in 1usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(bands <= f && per_band <= f / bands);
        let spec = SubsamplingSpec {
            strategy: super::Strategy::Banded { bands, per_band },
            seed,
        };
        let idx = selection_indices(f, &spec).unwrap().unwrap();
        prop_assert_eq!(idx.len(), bands * per_band);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), bands * per_band);
        prop_assert!(idx.iter().all(|&i| i < f));
    }
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

/// Cyclic Jacobi for real symmetric matrices; the independent eigen oracle.
fn real_jacobi(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let evals = order.iter().map(|&i| a[i * n + i]).collect();
    let mut evecs = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            evecs[k * n + dst] = v[k * n + src];
        }
    }
    (evals, evecs)
}

fn rank1_windows(f: usize, t: usize, direction: &[C64], seed: u64) -> Vec<CsiWindow> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..3)
        .map(|s| {
            let mut m = CMatrix::zeros(f, t);
            for ti in 0..t {
                let g = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                for fi in 0..f {
                    let v = direction[fi] * g;
                    m.set(fi, ti, Complex32::new(v.re as f32, v.im as f32));
                }
            }
            CsiWindow {
                csi: m,
                label: 0,
                source: (s, 0),
            }
        })
        .collect()
}

#[test]
fn pca_recovers_rank_one_direction() {
    let dir = [
        C64::new(0.5, 0.2),
        C64::new(-0.3, 0.8),
        C64::new(0.1, -0.4),
        C64::new(0.6, 0.0),
    ];
    let norm: f64 = dir.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let unit: Vec<C64> = dir.iter().map(|v| v / norm).collect();
    let windows = rank1_windows(4, 50, &unit, 3);
    let model = pca_fit(&windows, 4).unwrap();
    let total: f64 = model.eigenvalues.iter().sum();
    assert!(model.eigenvalues[0] / total >= 0.999);
    // first component matches the direction up to global phase
    let inner: C64 = model.components[0]
        .iter()
        .zip(&unit)
        .map(|(&c, &d)| c * d)
        .sum();
    assert!(
        (inner.norm() - 1.0).abs() < 1e-4,
        "|<v, dir>| = {}",
        inner.norm()
    );
}

#[test]
fn pca_full_rank_preserves_total_variance() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let windows: Vec<CsiWindow> = (0..2)
        .map(|s| {
            let mut m = CMatrix::zeros(5, 40);
            for fi in 0..5 {
                for ti in 0..40 {
                    m.set(
                        fi,
                        ti,
                        Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    );
                }
            }
            CsiWindow {
                csi: m,
                label: 0,
                source: (s, 0),
            }
        })
        .collect();
    let model = pca_fit(&windows, 5).unwrap();
    // trace of covariance = mean squared deviation, computed directly
    let f = 5;
    let mut count = 0usize;
    let mut mean = vec![C64::new(0.0, 0.0); f];
    for w in &windows {
        for t in 0..w.len() {
            for fi in 0..f {
                let v = w.csi.at(fi, t);
                mean[fi] += C64::new(v.re as f64, v.im as f64);
            }
            count += 1;
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut trace = 0.0f64;
    for w in &windows {
        for t in 0..w.len() {
            for fi in 0..f {
                let v = w.csi.at(fi, t);
                trace += (C64::new(v.re as f64, v.im as f64) - mean[fi]).norm_sqr();
            }
        }
    }
    trace /= count as f64;
    let total: f64 = model.eigenvalues.iter().sum();
    assert!(
        (total - trace).abs() <= 1e-6 * trace,
        "sum lambda {} vs trace {}",
        total,
        trace
    );
    assert!(model.orthonormality_defect() < 1e-6);
}

#[test]
fn pca_eigenpairs_match_real_embedding_oracle() {
    // random Hermitian PSD matrix via covariance of random data
    let windows = vec![rand_window(4, 30, 13)];
    let f = 4;
    let model = pca_fit(&windows, f).unwrap();

    // rebuild the covariance exactly as pca_fit sees it
    let mut mean = vec![C64::new(0.0, 0.0); f];
    let w = &windows[0];
    for t in 0..w.len() {
        for fi in 0..f {
            let v = w.csi.at(fi, t);
            mean[fi] += C64::new(v.re as f64, v.im as f64);
        }
    }
    for m in mean.iter_mut() {
        *m /= w.len() as f64;
    }
    let mut cov = vec![C64::new(0.0, 0.0); f * f];
    for t in 0..w.len() {
        let x: Vec<C64> = (0..f)
            .map(|fi| {
                let v = w.csi.at(fi, t);
                C64::new(v.re as f64, v.im as f64) - mean[fi]
            })
            .collect();
        for a in 0..f {
            for b in 0..f {
                cov[a * f + b] += x[a] * x[b].conj();
            }
        }
    }
    for v in cov.iter_mut() {
        *v /= w.len() as f64;
    }

    // real 2F x 2F embedding [[X, -Y], [Y, X]] of C = X + iY
    let n2 = 2 * f;
    let mut m = vec![0.0f64; n2 * n2];
    for a in 0..f {
        for b in 0..f {
            m[a * n2 + b] = cov[a * f + b].re;
            m[a * n2 + (b + f)] = -cov[a * f + b].im;
            m[(a + f) * n2 + b] = cov[a * f + b].im;
            m[(a + f) * n2 + (b + f)] = cov[a * f + b].re;
        }
    }
    let (oracle_vals, oracle_vecs) = real_jacobi(m, n2);
    // each complex eigenvalue appears twice in the embedding
    for j in 0..f {
        let lambda = model.eigenvalues[j];
        assert!(
            (oracle_vals[2 * j] - lambda).abs() < 1e-6,
            "eigenvalue {}: {} vs {}",
            j,
            lambda,
            oracle_vals[2 * j]
        );
        assert!((oracle_vals[2 * j + 1] - lambda).abs() < 1e-6);
        // embedding eigenvector (a; b) -> complex vector a + ib, same eigenspace
        let mut u: Vec<C64> = (0..f)
            .map(|i| C64::new(oracle_vecs[i * n2 + 2 * j], oracle_vecs[(i + f) * n2 + 2 * j]))
            .collect();
        let norm: f64 = u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for v in u.iter_mut() {
            *v /= norm;
        }
        // compare after the same phase convention as the model rows
        let row = &model.components[j];
        let (mut best, mut best_norm) = (0usize, -1.0);
        for (i, v) in u.iter().enumerate() {
            if v.norm() > best_norm {
                best_norm = v.norm();
                best = i;
            }
        }
        let rot = u[best].conj() / best_norm;
        // model row stores conj(v); compare conj(u) after fixing u's phase
        for i in 0..f {
            let fixed = (u[i] * rot).conj();
            assert!(
                (fixed - row[i]).norm() < 1e-6,
                "component {} entry {}: {:?} vs {:?}",
                j,
                i,
                fixed,
                row[i]
            );
        }
        // residual check against the covariance: C v = lambda v
        let vj: Vec<C64> = row.iter().map(|c| c.conj()).collect();
        for a in 0..f {
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..f {
                acc += cov[a * f + b] * vj[b];
            }
            assert!((acc - vj[a] * lambda).norm() < 1e-6);
        }
    }
}

#[test]
fn pca_projection_of_mean_is_zero() {
    let windows = vec![rand_window(3, 20, 21)];
    let model = pca_fit(&windows, 3).unwrap();
    let mean32: Vec<Complex32> = model
        .mean
        .iter()
        .map(|v| Complex32::new(v.re as f32, v.im as f32))
        .collect();
    let w = window_from_fn(3, 6, |fi, _| mean32[fi]);
    let proj = pca_project(&w, &model).unwrap();
    for fi in 0..3 {
        for ti in 0..6 {
            assert!(proj.csi.at(fi, ti).norm() < 1e-5);
        }
    }
}

#[test]
fn pca_full_rank_reconstruction() {
    let windows = vec![rand_window(4, 40, 31)];
    let model = pca_fit(&windows, 4).unwrap();
    let w = &windows[0];
    for ti in [0usize, 7, 39] {
        let x: Vec<C64> = (0..4)
            .map(|fi| {
                let v = w.csi.at(fi, ti);
                C64::new(v.re as f64, v.im as f64)
            })
            .collect();
        let y = model.project_column(&x);
        let back = model.reconstruct_column(&y);
        for fi in 0..4 {
            assert!((back[fi] - x[fi]).norm() < 1e-6);
        }
    }
}

#[test]
fn pca_rank_one_projection_tracks_envelope() {
    let dir = [C64::new(0.7, 0.1), C64::new(0.2, -0.6), C64::new(-0.3, 0.3)];
    let norm: f64 = dir.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let unit: Vec<C64> = dir.iter().map(|v| v / norm).collect();
    let windows = rank1_windows(3, 80, &unit, 17);
    let model = pca_fit(&windows, 1).unwrap();
    let w = &windows[0];
    let proj = pca_project(w, &model).unwrap();
    // |projection| must be proportional to |g(t) - mean over all fitted
    // envelopes| with g the scalar envelope; recover g via the first entry
    let envelope = |w: &CsiWindow, ti: usize| -> C64 {
        let v = w.csi.at(0, ti);
        C64::new(v.re as f64, v.im as f64) / unit[0]
    };
    let mut gmean = C64::new(0.0, 0.0);
    let mut count = 0usize;
    for win in &windows {
        for ti in 0..win.len() {
            gmean += envelope(win, ti);
            count += 1;
        }
    }
    gmean /= count as f64;
    let gs: Vec<C64> = (0..w.len()).map(|ti| envelope(w, ti) - gmean).collect();
    let mut ratio: Option<f64> = None;
    for ti in 0..w.len() {
        let env = gs[ti].norm();
        if env < 1e-3 {
            continue;
        }
        let r = proj.csi.at(0, ti).norm() as f64 / env;
        if let Some(expect) = ratio {
            assert!((r - expect).abs() < 1e-3, "t={}: {} vs {}", ti, r, expect);
        } else {
            ratio = Some(r);
        }
    }
}

#[test]
fn pca_fit_rejects_bad_requests() {
    let windows = vec![rand_window(4, 10, 1)];
    assert!(pca_fit(&windows, 5).is_err());
    assert!(pca_fit(&windows, 0).is_err());
    let short = vec![rand_window(8, 3, 1)]; // fewer packets than subcarriers
    assert!(pca_fit(&short, 2).is_err());
}

// ---------------------------------------------------------------------------
// feature files
// ---------------------------------------------------------------------------

#[test]
fn feature_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ftr");
    let w = rand_window(4, 9, 2);
    let feat: FeatureTensor<f32> = amplitude(&w);
    save_feature_file(&feat, &path).unwrap();
    let loaded: FeatureTensor<f32> = load_feature_file(&path).unwrap();
    assert_eq!(loaded, feat);
}
