//! Window -> feature tensor pipeline shared by training, evaluation, and the CLI.

use crate::csi::CsiWindow;
use crate::error::{Error, Result};
use crate::features::{
    amplitude, dfs_magnitude, select_subcarriers, stft_dfs, DfsConfig, FeatureKind,
    FeatureTensor, PcaModel, SubsamplingSpec,
};
use crate::numerics::{Real, Tensor};

/// Sub-sampling plus feature extraction for one window at a time.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub kind: FeatureKind,
    pub subsample: SubsamplingSpec,
    /// Required when the strategy is `PC<n>`.
    pub pca: Option<PcaModel>,
    pub dfs: DfsConfig,
}

impl FeaturePipeline {
    pub fn new(kind: FeatureKind, subsample: SubsamplingSpec, sample_rate_hz: f64) -> Self {
        Self {
            kind,
            subsample,
            pca: None,
            dfs: DfsConfig::new(sample_rate_hz),
        }
    }

    pub fn extract<T: Real>(&self, window: &CsiWindow) -> Result<FeatureTensor<T>> {
        let selected = select_subcarriers(window, &self.subsample, self.pca.as_ref())?;
        match self.kind {
            FeatureKind::Amplitude => Ok(amplitude(&selected)),
            FeatureKind::DfsMagnitude => Ok(dfs_magnitude(&stft_dfs(&selected, &self.dfs)?)),
        }
    }

    /// Feature shape `[C, F, T]` this pipeline produces for the given window
    /// geometry.
    pub fn output_shape(&self, subcarriers: usize, window_len: usize) -> Result<[usize; 3]> {
        let f_sub = match crate::features::selection_indices(subcarriers, &self.subsample)? {
            Some(idx) => idx.len(),
            None => match self.subsample.strategy {
                crate::features::Strategy::Pca(n) => n,
                _ => subcarriers,
            },
        };
        Ok(match self.kind {
            FeatureKind::Amplitude => [1, f_sub, window_len],
            FeatureKind::DfsMagnitude => [f_sub, self.dfs.band_bins, window_len],
        })
    }
}

/// Stacks per-window features into a `[B, C, F, T]` batch tensor.
pub fn batch_features<T: Real>(feats: &[&FeatureTensor<T>]) -> Result<Tensor<T>> {
    let first = feats
        .first()
        .ok_or_else(|| Error::Validation("cannot batch zero features".into()))?;
    let shape = first.data.shape();
    let mut data = Vec::with_capacity(feats.len() * first.data.len());
    for f in feats {
        if f.data.shape() != shape {
            return Err(Error::Validation(format!(
                "feature shape mismatch in batch: {:?} vs {:?}",
                f.data.shape(),
                shape
            )));
        }
        data.extend_from_slice(f.data.data());
    }
    Tensor::from_vec(&[feats.len(), shape[0], shape[1], shape[2]], data)
}
