//! Prompt-segment sampling for training.

use crate::config::TrainConfig;
use crate::numerics::SeededRng;

/// Acoustic prompt segment, the shorter prosody prompt taken from its start,
/// and the reconstruction mask that excludes the segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptPlan {
    pub segment_start: usize,
    pub segment_len: usize,
    pub prosody_segment_len: usize,
    pub mask: Vec<bool>,
}

impl PromptPlan {
    pub fn segment(&self) -> std::ops::Range<usize> {
        self.segment_start..self.segment_start + self.segment_len
    }

    pub fn prosody_segment(&self) -> std::ops::Range<usize> {
        self.segment_start..self.segment_start + self.prosody_segment_len
    }
}

/// Admissible segment lengths for an utterance of `frames` frames.
pub fn segment_len_range(frames: usize, cfg: &TrainConfig) -> (usize, usize) {
    let lo = frames.div_ceil(4).clamp(cfg.prompt_min_frames, cfg.prompt_max_frames);
    let hi = frames.div_ceil(2).clamp(cfg.prompt_min_frames, cfg.prompt_max_frames);
    (lo.min(frames), hi.min(frames).max(lo.min(frames)))
}

/// `None` when the utterance is below the trainable minimum.
pub fn sample_prompt_plan(frames: usize, cfg: &TrainConfig, rng: &mut SeededRng) -> Option<PromptPlan> {
    if frames < cfg.min_frames.max(1) {
        return None;
    }
    let (lo, hi) = segment_len_range(frames, cfg);
    let segment_len = rng.range_inclusive(lo, hi);
    let segment_start = rng.range_inclusive(0, frames - segment_len);
    let mask = (0..frames).map(|t| t < segment_start || t >= segment_start + segment_len).collect::<Vec<_>>();
    if !mask.iter().any(|&m| m) {
        return None;
    }
    Some(PromptPlan { segment_start, segment_len, prosody_segment_len: segment_len.div_ceil(2), mask })
}
