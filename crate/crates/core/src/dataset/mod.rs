//! Dataset manifests and synthetic melt pools.

mod manifest;
mod synth;

pub use manifest::{
    load_manifest, load_split, save_manifest, LabeledImage, Manifest, ManifestEntry, Split, SplitCounts,
};
pub use synth::{
    render, synth_generate, AnalyticMetrics, PoolGeometry, SyntheticItem, SyntheticSpec, POOL, POOL_RIM, RESIN,
    RIM_WIDTH, SUBSTRATE,
};
