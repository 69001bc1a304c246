//! Amplitude and Doppler feature extraction, subcarrier sub-sampling
//! strategies, and PCA projection.

mod io;
mod pca;
mod pipeline;
mod stft;
mod subsample;

pub use io::{load_feature_file, save_feature_file};
pub use pca::{hermitian_eig, pca_fit, pca_project, PcaModel};
pub use pipeline::{batch_features, FeaturePipeline};
pub use stft::{dft, gaussian_window, stft_dfs, Spectrogram};
pub use subsample::{select_subcarriers, selection_indices, Strategy, SubsamplingSpec};

use serde::{Deserialize, Serialize};

use crate::csi::CsiWindow;
use crate::error::{Error, Result};
use crate::numerics::{real, Real, Tensor};

/// Which feature family a tensor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `[1, subcarriers, T]`, per-packet moduli.
    Amplitude,
    /// `[subcarriers, frequency bins, T]`, STFT magnitudes.
    DfsMagnitude,
}

/// Dense real-valued `[C, F, T]` feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor<T: Real> {
    pub kind: FeatureKind,
    /// Shape `[C, F, T]`.
    pub data: Tensor<T>,
}

impl<T: Real> FeatureTensor<T> {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn freq(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn time(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Doppler spectrogram extraction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfsConfig {
    /// Window and FFT length, in packets.
    pub segment_len: usize,
    /// Gaussian window standard deviation, in samples.
    pub gauss_sigma: f64,
    /// Retained DC-centered bins; odd.
    pub band_bins: usize,
    pub hop: usize,
    pub sample_rate_hz: f64,
}

impl DfsConfig {
    /// Defaults: segment/FFT length 125, 121 centered bins, hop 1,
    /// sigma = L/6.
    pub fn new(sample_rate_hz: f64) -> Self {
        Self {
            segment_len: 125,
            gauss_sigma: 125.0 / 6.0,
            band_bins: 121,
            hop: 1,
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len == 0 {
            return Err(Error::Validation("segment length must be positive".into()));
        }
        if self.band_bins > self.segment_len {
            return Err(Error::Validation(format!(
                "band_bins {} exceeds segment length {}",
                self.band_bins, self.segment_len
            )));
        }
        if self.band_bins % 2 == 0 {
            return Err(Error::Validation(format!(
                "band_bins must be odd to center on DC, got {}",
                self.band_bins
            )));
        }
        if self.hop < 1 {
            return Err(Error::Validation("hop must be >= 1".into()));
        }
        if self.gauss_sigma <= 0.0 {
            return Err(Error::Validation("gauss_sigma must be positive".into()));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Frequency resolution in Hz per bin.
    pub fn bin_resolution(&self) -> f64 {
        self.sample_rate_hz / self.segment_len as f64
    }
}

/// Per-packet modulus: `out[0, f, t] = |csi[f, t]|`, shape `[1, F, T]`.
pub fn amplitude<T: Real>(window: &CsiWindow) -> FeatureTensor<T> {
    let (f, t) = (window.subcarriers(), window.len());
    let mut data = Vec::with_capacity(f * t);
    for fi in 0..f {
        for &v in window.csi.row(fi) {
            let (re, im) = (real::<T>(v.re as f64), real::<T>(v.im as f64));
            data.push((re * re + im * im).sqrt());
        }
    }
    FeatureTensor {
        kind: FeatureKind::Amplitude,
        data: Tensor::from_vec(&[1, f, t], data).unwrap(),
    }
}

/// Elementwise modulus of an STFT block, shape `[C, bins, T]`.
pub fn dfs_magnitude<T: Real>(spec: &Spectrogram<T>) -> FeatureTensor<T> {
    let data = spec.data().iter().map(|c| c.norm()).collect();
    FeatureTensor {
        kind: FeatureKind::DfsMagnitude,
        data: Tensor::from_vec(&[spec.subcarriers, spec.bins, spec.frames], data).unwrap(),
    }
}

#[cfg(test)]
mod tests;
