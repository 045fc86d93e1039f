//! Shared fixtures for unit tests.

use std::sync::OnceLock;

use crate::audio::Waveform;
use crate::codecs::{train_acoustic_codec, train_semantic, AcousticCodec, AcousticCodecConfig, SemanticConfig, SemanticQuantizer};
use crate::corpus::{generate_clip, ClipSpec};

pub const SR: u32 = 16000;

/// Small semantic quantizer and acoustic codec (16 codes each) trained on
/// twelve 2 s mixtures.
pub fn codecs() -> &'static (SemanticQuantizer, AcousticCodec) {
    static C: OnceLock<(SemanticQuantizer, AcousticCodec)> = OnceLock::new();
    C.get_or_init(|| {
        let train: Vec<Waveform> = (0..12)
            .map(|i| generate_clip(&ClipSpec::new(90.0 + i as f64, i as u8, 2.0, i as u64), SR, "t").unwrap().mixture)
            .collect();
        (
            train_semantic(&train, &SemanticConfig { k: 16, iterations: 3, ..Default::default() }).unwrap(),
            train_acoustic_codec(&train, &AcousticCodecConfig { codebook_size: 16, iterations: 3, ..Default::default() })
                .unwrap(),
        )
    })
}
