use std::path::Path;

use crate::error::{Error, Result};

use super::mel::SAMPLE_RATE;

/// Reads 16-bit PCM mono RIFF audio at 22.05 kHz into `[-1, 1)` samples.
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
        || spec.sample_rate != SAMPLE_RATE
    {
        return Err(Error::Data(format!(
            "{}: expected 16-bit PCM mono at {} Hz, got {:?}",
            path.display(),
            SAMPLE_RATE,
            spec
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::Data(e.to_string()))
}
