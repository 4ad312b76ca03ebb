//! Case storage, manifests, resampling, and the synthetic phantom task.

pub mod manifest;
pub mod synth;
pub mod volume;

pub use manifest::{load_case, CasePair, Manifest, ManifestRow, Split};
pub use synth::{synth_generate, CaseMeta, SynthConfig};
pub use volume::{read_volume, resize_volume, write_volume, zscore, Volume, VolumeMeta};
