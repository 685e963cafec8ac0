//! Acoustic features: log-mel extraction, F0 tracking, energy, and the
//! phoneme-level unit pipeline (averaging, speaker normalisation, quantisation).

pub mod mel;
pub mod pitch;
pub mod render;
pub mod units;
pub mod wav;

pub use mel::{extract_mel, frame_count, frame_energy, MelSpectrogram, HOP, N_MELS, SAMPLE_RATE};
pub use pitch::{estimate_f0, F0Track};
pub use units::{
    dequantize_duration, dequantize_energy, dequantize_pitch, phoneme_average, quantize, quantize_duration,
    quantize_energy, quantize_pitch, AcousticUnitSequence, SpeakerStats, Stream,
};
