//! DFT and Gaussian-windowed short-time Fourier transform for Doppler features.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::csi::CsiWindow;
use crate::error::{Error, Result};
use crate::features::DfsConfig;
use crate::numerics::{real, Real};

/// Exact forward DFT: `X[k] = sum_n x[n] * exp(-i 2 pi k n / N)`.
pub fn dft<T: Real>(x: &[Complex<T>]) -> Vec<Complex<T>> {
    let mut buf = x.to_vec();
    if buf.is_empty() {
        return buf;
    }
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

/// `w[j] = exp(-0.5 ((j - (L-1)/2) / sigma)^2)`.
pub fn gaussian_window<T: Real>(len: usize, sigma: f64) -> Vec<T> {
    let center = (len as f64 - 1.0) / 2.0;
    (0..len)
        .map(|j| real((-0.5 * ((j as f64 - center) / sigma).powi(2)).exp()))
        .collect()
}

/// Mirror index without edge repetition (numpy-style "reflect").
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Complex time-frequency block of shape `[subcarriers, bins, frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub subcarriers: usize,
    pub bins: usize,
    pub frames: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> Spectrogram<T> {
    fn zeros(subcarriers: usize, bins: usize, frames: usize) -> Self {
        Self {
            subcarriers,
            bins,
            frames,
            data: vec![Complex::new(T::zero(), T::zero()); subcarriers * bins * frames],
        }
    }

    #[inline]
    pub fn at(&self, sub: usize, bin: usize, frame: usize) -> Complex<T> {
        self.data[(sub * self.bins + bin) * self.frames + frame]
    }

    #[inline]
    fn set(&mut self, sub: usize, bin: usize, frame: usize, v: Complex<T>) {
        self.data[(sub * self.bins + bin) * self.frames + frame] = v;
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }
}

/// Per-subcarrier Gaussian-windowed STFT over the reflect-padded time series,
/// DC-centered and cropped to the configured band.
///
/// With `hop = 1` and reflect padding of `(L-1)/2` per side the frame count
/// equals the window length, so the time axis is preserved.
pub fn stft_dfs<T: Real>(window: &CsiWindow, cfg: &DfsConfig) -> Result<Spectrogram<T>> {
    cfg.validate()?;
    let t = window.len();
    if t < 1 {
        return Err(Error::Validation("stft_dfs needs at least one packet".into()));
    }
    let l = cfg.segment_len;
    let bb = cfg.band_bins;
    let pad = (l - 1) / 2;
    let padded_len = t + 2 * pad;
    if padded_len < l {
        return Err(Error::Validation(format!(
            "segment length {} exceeds padded series length {}",
            l, padded_len
        )));
    }
    let frames = (padded_len - l) / cfg.hop + 1;
    let f_sub = window.subcarriers();
    let win: Vec<T> = gaussian_window(l, cfg.gauss_sigma);
    let fft: Arc<dyn Fft<T>> = FftPlanner::new().plan_fft_forward(l);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut seg = vec![Complex::new(T::zero(), T::zero()); l];

    // DC-centered crop: output bin b corresponds to spectrum index
    // (b + drop + L - half) mod L, with `half` the DC position after rotation.
    let half = l / 2;
    let drop = (l - bb) / 2;
    let mut out = Spectrogram::zeros(f_sub, bb, frames);
    for sub in 0..f_sub {
        let series: Vec<Complex<T>> = window
            .csi
            .row(sub)
            .iter()
            .map(|c| Complex::new(real::<T>(c.re as f64), real::<T>(c.im as f64)))
            .collect();
        for frame in 0..frames {
            let start = frame as isize * cfg.hop as isize - pad as isize;
            for j in 0..l {
                let src = reflect_index(start + j as isize, t);
                seg[j] = series[src] * win[j];
            }
            fft.process_with_scratch(&mut seg, &mut scratch);
            for b in 0..bb {
                let centered = b + drop;
                let k = (centered + l - half) % l;
                out.set(sub, b, frame, seg[k]);
            }
        }
    }
    Ok(out)
}
