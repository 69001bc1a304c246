//! Canonical CSI dataset format, loading/saving, temporal resampling, window
//! extraction, dataset splitting, synthetic data generation, and class-balanced
//! batch sampling.

mod format;
mod sampler;
mod synth;

pub use format::{load_dataset, save_dataset};
pub use sampler::{balanced_batches, BalancedSampler};
pub use synth::synth_generate;

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

pub type Complex32 = Complex<f32>;

/// One received WiFi packet: the complex channel response per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiPacket {
    pub csi: Vec<Complex32>,
    pub label: u8,
    /// Seconds since sequence start.
    pub timestamp: f32,
}

/// Sequences of contiguous packet runs with shared subcarrier and class layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiDataset {
    pub subcarrier_count: u16,
    pub class_count: u16,
    pub sample_rate_hz: f32,
    pub sequences: Vec<Vec<CsiPacket>>,
    /// Optional display names; not part of the CSIB container.
    pub class_names: Option<Vec<String>>,
}

impl CsiDataset {
    pub fn validate(&self) -> Result<()> {
        if self.subcarrier_count == 0 || self.class_count == 0 {
            return Err(Error::Validation(
                "dataset must declare at least one subcarrier and one class".into(),
            ));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::Validation(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.class_count as usize {
                return Err(Error::Validation(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.class_count
                )));
            }
        }
        for (si, seq) in self.sequences.iter().enumerate() {
            let mut last_ts = f32::NEG_INFINITY;
            for (pi, p) in seq.iter().enumerate() {
                if p.csi.len() != self.subcarrier_count as usize {
                    return Err(Error::Validation(format!(
                        "sequence {} packet {} has {} subcarriers, dataset declares {}",
                        si,
                        pi,
                        p.csi.len(),
                        self.subcarrier_count
                    )));
                }
                if u16::from(p.label) >= self.class_count {
                    return Err(Error::Validation(format!(
                        "sequence {} packet {} label {} >= class count {}",
                        si, pi, p.label, self.class_count
                    )));
                }
                if p.timestamp < last_ts {
                    return Err(Error::Validation(format!(
                        "sequence {} packet {} timestamp decreases",
                        si, pi
                    )));
                }
                last_ts = p.timestamp;
            }
        }
        Ok(())
    }

    pub fn total_packets(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}

/// Complex `[F, T]` matrix, row-major by subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex32>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex32::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Complex32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Complex32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `c` as an owned vector.
    pub fn col(&self, c: usize) -> Vec<Complex32> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }
}

/// A fixed-length `[F, T]` slice of one sequence, with its label and origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiWindow {
    pub csi: CMatrix,
    pub label: u8,
    /// `(sequence index, start offset)` in the source dataset.
    pub source: (usize, usize),
}

impl CsiWindow {
    pub fn subcarriers(&self) -> usize {
        self.csi.rows()
    }

    pub fn len(&self) -> usize {
        self.csi.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.csi.cols() == 0
    }
}

/// Ratio split with a deterministic shuffle.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: Vec<f64>, seed: u64) -> Self {
        Self { ratios, seed }
    }

    /// Parses "3:1:1" style ratio strings.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let ratios: Result<Vec<f64>> = s
            .split(':')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Validation(format!("bad split ratio {:?}", p)))
            })
            .collect();
        let spec = Self::new(ratios?, seed);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::Validation("split needs at least one ratio".into()));
        }
        if self.ratios.iter().any(|&r| r <= 0.0) || !self.ratios.iter().all(|r| r.is_finite()) {
            return Err(Error::Validation(format!(
                "split ratios must be positive and finite, got {:?}",
                self.ratios
            )));
        }
        Ok(())
    }
}

/// Synthetic dataset description: one Doppler tone per class over a faded
/// static path, with complex Gaussian noise at a target SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub subcarrier_count: u16,
    pub class_count: u16,
    pub sample_rate_hz: f64,
    /// One tone per class; pairwise distinct, all below Nyquist.
    pub class_doppler_hz: Vec<f64>,
    pub snr_db: f64,
    pub packets_per_sequence: usize,
    pub sequences_per_class: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subcarrier_count == 0 || self.class_count == 0 {
            return Err(Error::Validation(
                "synthetic spec needs at least one subcarrier and one class".into(),
            ));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if self.class_doppler_hz.len() != self.class_count as usize {
            return Err(Error::Validation(format!(
                "{} Doppler tones for {} classes",
                self.class_doppler_hz.len(),
                self.class_count
            )));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        for (i, &f) in self.class_doppler_hz.iter().enumerate() {
            if f.abs() >= nyquist {
                return Err(Error::Validation(format!(
                    "class {} tone {} Hz is at or above Nyquist {} Hz",
                    i, f, nyquist
                )));
            }
            for &g in &self.class_doppler_hz[i + 1..] {
                if f == g {
                    return Err(Error::Validation(format!(
                        "duplicate Doppler tone {} Hz",
                        f
                    )));
                }
            }
        }
        if self.packets_per_sequence == 0 || self.sequences_per_class == 0 {
            return Err(Error::Validation(
                "packets_per_sequence and sequences_per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Keeps packets at indices `0, factor, 2*factor, ...` within each sequence and
/// divides the sample rate accordingly.
pub fn resample(dataset: &CsiDataset, factor: usize) -> Result<CsiDataset> {
    if factor < 1 {
        return Err(Error::Validation(format!(
            "resample factor must be >= 1, got {}",
            factor
        )));
    }
    if factor == 1 {
        return Ok(dataset.clone());
    }
    let sequences = dataset
        .sequences
        .iter()
        .map(|seq| seq.iter().step_by(factor).cloned().collect())
        .collect();
    Ok(CsiDataset {
        subcarrier_count: dataset.subcarrier_count,
        class_count: dataset.class_count,
        sample_rate_hz: dataset.sample_rate_hz / factor as f32,
        sequences,
        class_names: dataset.class_names.clone(),
    })
}

/// Slides a window of `window_len` packets with the given stride over every
/// sequence. Windows never span sequence boundaries. With `pad_short`, a
/// sequence shorter than the window yields one window zero-padded at the end.
/// Window label is the majority label of covered packets, ties broken toward
/// the lower class index.
pub fn extract_windows(
    dataset: &CsiDataset,
    window_len: usize,
    stride: usize,
    pad_short: bool,
) -> Result<Vec<CsiWindow>> {
    if window_len < 1 || stride < 1 {
        return Err(Error::Validation(format!(
            "window_len and stride must be >= 1, got {} and {}",
            window_len, stride
        )));
    }
    let f = dataset.subcarrier_count as usize;
    let mut windows = Vec::new();
    for (si, seq) in dataset.sequences.iter().enumerate() {
        if seq.len() < window_len {
            if pad_short && !seq.is_empty() {
                windows.push(build_window(seq, si, 0, seq.len(), window_len, f, dataset));
            }
            continue;
        }
        let mut start = 0;
        while start + window_len <= seq.len() {
            windows.push(build_window(
                seq,
                si,
                start,
                window_len,
                window_len,
                f,
                dataset,
            ));
            start += stride;
        }
    }
    Ok(windows)
}

fn build_window(
    seq: &[CsiPacket],
    seq_idx: usize,
    start: usize,
    covered: usize,
    window_len: usize,
    f: usize,
    dataset: &CsiDataset,
) -> CsiWindow {
    let mut m = CMatrix::zeros(f, window_len);
    let mut votes = vec![0usize; dataset.class_count as usize];
    for (t, p) in seq[start..start + covered].iter().enumerate() {
        for (fi, &v) in p.csi.iter().enumerate() {
            m.set(fi, t, v);
        }
        votes[p.label as usize] += 1;
    }
    let label = votes
        .iter()
        .enumerate()
        .max_by_key(|&(i, &v)| (v, std::cmp::Reverse(i)))
        .map(|(i, _)| i as u8)
        .unwrap_or(0);
    CsiWindow {
        csi: m,
        label,
        source: (seq_idx, start),
    }
}

/// Deterministic shuffle under the seed, then contiguous partition by the
/// normalized ratios; sizes are rounded down with the remainder assigned to the
/// first part.
pub fn split_windows(windows: Vec<CsiWindow>, spec: &SplitSpec) -> Result<Vec<Vec<CsiWindow>>> {
    spec.validate()?;
    if windows.len() < spec.ratios.len() {
        return Err(Error::Validation(format!(
            "cannot split {} windows into {} parts",
            windows.len(),
            spec.ratios.len()
        )));
    }
    let mut shuffled = windows;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    shuffled.shuffle(&mut rng);
    let total: f64 = spec.ratios.iter().sum();
    let n = shuffled.len();
    let mut sizes: Vec<usize> = spec
        .ratios
        .iter()
        .map(|r| ((r / total) * n as f64).floor() as usize)
        .collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n - assigned;
    let mut parts = Vec::with_capacity(sizes.len());
    let mut rest = shuffled;
    for &size in &sizes {
        let tail = rest.split_off(size);
        parts.push(rest);
        rest = tail;
    }
    Ok(parts)
}
