//! File formats and corpus handling.

pub mod checkpoint;
pub mod feature_cache;
pub mod manifest;
pub mod spectrogram;
pub mod synthetic;
pub mod wav;

pub use feature_cache::{read_features, write_features};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use spectrogram::{read_spectrogram, write_spectrogram};
pub use synthetic::{make_synthetic_corpus, SyntheticClip, SyntheticSpec};
pub use wav::{read_wav, write_wav, AudioClip};
