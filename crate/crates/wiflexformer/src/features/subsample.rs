//! Subcarrier selection strategies and their `R<n> | U<n> | B<n>-<m> | PC<n>`
//! spec-string grammar.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::csi::{CMatrix, CsiWindow};
use crate::error::{Error, Result};
use crate::features::pca::{pca_project, PcaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Keep all subcarriers.
    None,
    /// `n` distinct indices drawn without replacement, emitted ascending.
    Random(usize),
    /// Every `n`-th subcarrier: indices `0, n, 2n, ...`.
    Uniform(usize),
    /// `bands` contiguous bands (sizes differing by at most 1), `per_band`
    /// random distinct indices from each.
    Banded { bands: usize, per_band: usize },
    /// Projection onto the first `n` principal components.
    Pca(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsamplingSpec {
    pub strategy: Strategy,
    /// Used by `Random` and `Banded`.
    pub seed: u64,
}

impl SubsamplingSpec {
    pub fn none() -> Self {
        Self {
            strategy: Strategy::None,
            seed: 0,
        }
    }

    /// Parses the strategy grammar: `none | R<n> | U<n> | B<n>-<m> | PC<n>`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let strategy = parse_strategy(s)?;
        let spec = Self { strategy, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.strategy {
            Strategy::None => true,
            Strategy::Random(n) | Strategy::Uniform(n) | Strategy::Pca(n) => n >= 1,
            Strategy::Banded { bands, per_band } => bands >= 1 && per_band >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "subsampling counts must be >= 1: {}",
                self
            )))
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    let bad = || Error::Validation(format!("bad subsample spec {:?}", s));
    if s == "none" {
        return Ok(Strategy::None);
    }
    if let Some(rest) = s.strip_prefix("PC") {
        return Ok(Strategy::Pca(rest.parse().map_err(|_| bad())?));
    }
    if let Some(rest) = s.strip_prefix('R') {
        return Ok(Strategy::Random(rest.parse().map_err(|_| bad())?));
    }
    if let Some(rest) = s.strip_prefix('U') {
        return Ok(Strategy::Uniform(rest.parse().map_err(|_| bad())?));
    }
    if let Some(rest) = s.strip_prefix('B') {
        let (n, m) = rest.split_once('-').ok_or_else(bad)?;
        return Ok(Strategy::Banded {
            bands: n.parse().map_err(|_| bad())?,
            per_band: m.parse().map_err(|_| bad())?,
        });
    }
    Err(bad())
}

impl fmt::Display for SubsamplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Strategy::None => write!(f, "none"),
            Strategy::Random(n) => write!(f, "R{}", n),
            Strategy::Uniform(n) => write!(f, "U{}", n),
            Strategy::Banded { bands, per_band } => write!(f, "B{}-{}", bands, per_band),
            Strategy::Pca(n) => write!(f, "PC{}", n),
        }
    }
}

/// The subcarrier indices a spec keeps for `f` subcarriers, ascending.
/// `None` for the identity and PCA strategies (PCA replaces subcarriers rather
/// than selecting them).
pub fn selection_indices(f: usize, spec: &SubsamplingSpec) -> Result<Option<Vec<usize>>> {
    spec.validate()?;
    match spec.strategy {
        Strategy::None | Strategy::Pca(_) => Ok(None),
        Strategy::Uniform(n) => Ok(Some((0..f).step_by(n).collect())),
        Strategy::Random(n) => {
            if n > f {
                return Err(Error::Validation(format!(
                    "cannot draw {} of {} subcarriers",
                    n, f
                )));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            let mut idx = rand::seq::index::sample(&mut rng, f, n).into_vec();
            idx.sort_unstable();
            Ok(Some(idx))
        }
        Strategy::Banded { bands, per_band } => {
            if bands > f {
                return Err(Error::Validation(format!(
                    "{} bands over {} subcarriers",
                    bands, f
                )));
            }
            if per_band > f / bands {
                return Err(Error::Validation(format!(
                    "{} per band exceeds the smallest band size {} (F = {}, {} bands)",
                    per_band,
                    f / bands,
                    f,
                    bands
                )));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            let base = f / bands;
            let extra = f % bands;
            let mut out = Vec::with_capacity(bands * per_band);
            let mut start = 0usize;
            for band in 0..bands {
                let size = base + usize::from(band < extra);
                let mut idx = rand::seq::index::sample(&mut rng, size, per_band).into_vec();
                idx.sort_unstable();
                out.extend(idx.into_iter().map(|i| start + i));
                start += size;
            }
            Ok(Some(out))
        }
    }
}

/// Applies a sub-sampling strategy to one window. PCA replaces each packet by
/// its projection onto the fitted components ("virtual subcarriers").
pub fn select_subcarriers(
    window: &CsiWindow,
    spec: &SubsamplingSpec,
    pca: Option<&PcaModel>,
) -> Result<CsiWindow> {
    if let Strategy::Pca(n) = spec.strategy {
        let model = pca.ok_or_else(|| {
            Error::Validation("PCA strategy requires a fitted model".into())
        })?;
        if model.components.len() != n {
            return Err(Error::Validation(format!(
                "PCA model has {} components, spec wants {}",
                model.components.len(),
                n
            )));
        }
        return pca_project(window, model);
    }
    match selection_indices(window.subcarriers(), spec)? {
        None => Ok(window.clone()),
        Some(idx) => {
            let t = window.len();
            let mut m = CMatrix::zeros(idx.len(), t);
            for (r, &src) in idx.iter().enumerate() {
                for ti in 0..t {
                    m.set(r, ti, window.csi.at(src, ti));
                }
            }
            Ok(CsiWindow {
                csi: m,
                label: window.label,
                source: window.source,
            })
        }
    }
}
