//! 16-bit PCM mono WAV I/O. Samples map to `[−1, 1)` by `/32768`.

use std::path::Path;

use dfconformer::filterbank::Waveform;

use crate::error::{CliError, Result};

const FULL_SCALE: f64 = 32768.0;

/// Reads a RIFF/WAVE file holding 16-bit integer PCM, mono.
pub fn read(path: &Path) -> Result<Waveform<f64>> {
    let reader = hound::WavReader::open(path).map_err(|e| CliError::input(path, format!("not a readable WAV file: {e}")))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(CliError::input(
            path,
            format!("unsupported codec: {} bit {:?}, expected 16-bit PCM", spec.bits_per_sample, spec.sample_format),
        ));
    }
    if spec.channels != 1 {
        return Err(CliError::input(path, format!("{} channels, expected mono", spec.channels)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::input(path, format!("malformed sample data: {e}")))?;
    if samples.is_empty() {
        return Err(CliError::input(path, "no samples"));
    }
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

/// Rounds to the nearest 16-bit level, saturating at full scale.
pub fn quantize(v: f64) -> i16 {
    (v * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fail = |e: hound::Error| match e {
        hound::Error::IoError(io) => CliError::io(path, io),
        other => CliError::input(path, other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(fail)?;
    for &v in samples {
        writer.write_sample(quantize(v)).map_err(fail)?;
    }
    writer.finalize().map_err(fail)
}
