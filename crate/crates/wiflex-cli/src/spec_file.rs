//! key=value spec files for the `synth` subcommand.
//!
//! ```text
//! F=8
//! c=3
//! sample_rate_hz=100
//! class_doppler_hz=4,12,24
//! snr_db=20
//! packets_per_sequence=512
//! sequences_per_class=20
//! seed=42
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. `snr_db=inf` disables
//! noise.

use std::path::Path;

use wiflexformer::csi::SynthSpec;
use wiflexformer::error::{Error, Result};

pub fn parse_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path)?;
    let mut f: Option<u16> = None;
    let mut c: Option<u16> = None;
    let mut sample_rate_hz: Option<f64> = None;
    let mut class_doppler_hz: Option<Vec<f64>> = None;
    let mut snr_db: Option<f64> = None;
    let mut packets_per_sequence: Option<usize> = None;
    let mut sequences_per_class: Option<usize> = None;
    let mut seed: Option<u64> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("spec line {} is not key=value: {:?}", lineno + 1, raw))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| {
            Error::Format(format!(
                "spec line {}: bad {} value {:?}",
                lineno + 1,
                what,
                value
            ))
        };
        match key {
            "F" => f = Some(value.parse().map_err(|_| bad("F"))?),
            "c" => c = Some(value.parse().map_err(|_| bad("c"))?),
            "sample_rate_hz" => {
                sample_rate_hz = Some(value.parse().map_err(|_| bad("sample_rate_hz"))?)
            }
            "class_doppler_hz" => {
                let tones: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(|v| v.trim().parse()).collect();
                class_doppler_hz = Some(tones.map_err(|_| bad("class_doppler_hz"))?);
            }
            "snr_db" => {
                snr_db = Some(if value.eq_ignore_ascii_case("inf") {
                    f64::INFINITY
                } else {
                    value.parse().map_err(|_| bad("snr_db"))?
                })
            }
            "packets_per_sequence" => {
                packets_per_sequence =
                    Some(value.parse().map_err(|_| bad("packets_per_sequence"))?)
            }
            "sequences_per_class" => {
                sequences_per_class = Some(value.parse().map_err(|_| bad("sequences_per_class"))?)
            }
            "seed" => seed = Some(value.parse().map_err(|_| bad("seed"))?),
            other => {
                return Err(Error::Format(format!(
                    "spec line {}: unknown key {:?}",
                    lineno + 1,
                    other
                )))
            }
        }
    }
    let missing = |what: &str| Error::Format(format!("spec is missing {}", what));
    let spec = SynthSpec {
        subcarrier_count: f.ok_or_else(|| missing("F"))?,
        class_count: c.ok_or_else(|| missing("c"))?,
        sample_rate_hz: sample_rate_hz.ok_or_else(|| missing("sample_rate_hz"))?,
        class_doppler_hz: class_doppler_hz.ok_or_else(|| missing("class_doppler_hz"))?,
        snr_db: snr_db.ok_or_else(|| missing("snr_db"))?,
        packets_per_sequence: packets_per_sequence
            .ok_or_else(|| missing("packets_per_sequence"))?,
        sequences_per_class: sequences_per_class.ok_or_else(|| missing("sequences_per_class"))?,
        seed: seed.unwrap_or(0),
    };
    spec.validate()?;
    Ok(spec)
}
