//! Signal processing: STFT, feature analysis and the two upsampling paths.

pub mod features;
pub mod stft;
pub mod upsample;

pub use features::{extract_features, hop_size, ConditionFeatures, FeatureStats};
pub use stft::{stft_magnitude, StftConfig, Window};
pub use upsample::{upsample_features, upsample_vuv, VoicingMasks};
