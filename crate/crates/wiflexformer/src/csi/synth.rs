//! Deterministic synthetic CSI generator.
//!
//! Each class carries one Doppler tone. A packet of class `k` at time index `n`
//! is, per subcarrier `f`:
//!
//! ```text
//! csi[f] = a_f * (beta + exp(i * (2 pi f_k n / fs + phi_f))) + noise
//! ```
//!
//! with `a_f` a fixed per-subcarrier amplitude drawn once per sequence from
//! `[0.5, 1.5]`, `phi_f` a fixed random phase, `beta` a static-path gain below
//! 1, and complex Gaussian noise scaled to the target SNR. The static path
//! makes the tone visible in the amplitude envelope (beat at `f_k`) while the
//! spectrum still peaks at `f_k` rather than DC, so both the amplitude and the
//! Doppler pipelines can separate the classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::csi::{Complex32, CsiDataset, CsiPacket, SynthSpec};
use crate::error::Result;

/// Static-path gain; must stay below the tone amplitude of 1.
const STATIC_PATH_GAIN: f64 = 0.5;

pub fn synth_generate(spec: &SynthSpec) -> Result<CsiDataset> {
    spec.validate()?;
    let f = spec.subcarrier_count as usize;
    let fs = spec.sample_rate_hz;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    // 10^(-snr/10); zero when snr is +inf, so noise vanishes exactly
    let noise_power_ratio = 10f64.powf(-spec.snr_db / 10.0);
    let signal_power_unit = 1.0 + STATIC_PATH_GAIN * STATIC_PATH_GAIN;

    let mut sequences = Vec::with_capacity(spec.class_count as usize * spec.sequences_per_class);
    for class in 0..spec.class_count {
        let omega = 2.0 * std::f64::consts::PI * spec.class_doppler_hz[class as usize] / fs;
        for _ in 0..spec.sequences_per_class {
            let amp: Vec<f64> = (0..f).map(|_| rng.gen_range(0.5..1.5)).collect();
            let phase: Vec<f64> = (0..f)
                .map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI))
                .collect();
            let mut seq = Vec::with_capacity(spec.packets_per_sequence);
            for n in 0..spec.packets_per_sequence {
                let mut csi = Vec::with_capacity(f);
                for fi in 0..f {
                    let theta = omega * n as f64 + phase[fi];
                    let mut re = amp[fi] * (STATIC_PATH_GAIN + theta.cos());
                    let mut im = amp[fi] * theta.sin();
                    if noise_power_ratio > 0.0 {
                        let sigma = (amp[fi] * amp[fi] * signal_power_unit * noise_power_ratio
                            / 2.0)
                            .sqrt();
                        re += sigma * normal.sample(&mut rng);
                        im += sigma * normal.sample(&mut rng);
                    }
                    csi.push(Complex32::new(re as f32, im as f32));
                }
                seq.push(CsiPacket {
                    csi,
                    label: class as u8,
                    timestamp: (n as f64 / fs) as f32,
                });
            }
            sequences.push(seq);
        }
    }
    let dataset = CsiDataset {
        subcarrier_count: spec.subcarrier_count,
        class_count: spec.class_count,
        sample_rate_hz: fs as f32,
        sequences,
        class_names: None,
    };
    dataset.validate()?;
    Ok(dataset)
}
