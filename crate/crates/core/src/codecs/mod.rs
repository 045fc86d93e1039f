//! Discrete audio codes: a residual vector quantizer over time-domain frames
//! (12 levels at 50 Hz, split 4 coarse / 8 fine) and a k-means quantizer over
//! 25 Hz log-mel frames.

mod acoustic;
mod codes;
pub mod kmeans;
mod semantic;

pub use acoustic::{
    analysis_frames, frame_count, synthesize, train_acoustic_codec, train_rvq, AcousticCodec,
    AcousticCodecConfig, MIN_TRAINING_FRAMES,
};
pub use codes::{
    combine_codes, split_codes, CodeKind, CodeMatrix, CodeSequence, ACOUSTIC_FRAME_RATE,
    COARSE_RATE, FINE_RATE, SEMANTIC_RATE,
};
pub use semantic::{train_semantic, SemanticConfig, SemanticQuantizer, SEMANTIC_MEL_BINS};

pub const N_LEVELS: usize = 12;
pub const COARSE_LEVELS: usize = 4;
pub const FINE_LEVELS: usize = N_LEVELS - COARSE_LEVELS;
