//! Sharded trunk loader, its simulator, synthetic task generators and the
//! on-disk dataset format.

mod loader;
mod policy;
mod records;
mod shard;
mod sim;
mod synth;

pub use loader::{
    epoch_plan, stream_epoch, trunk_plan, Fetch, IndexFetch, LoaderConfig, LoaderHandle,
    LoaderStats, RankStream,
};
pub use policy::{PrefetchPolicy, MAX_PREFETCH, MAX_RESIDENT};
pub use records::{
    read_dataset, read_labels, read_manifest, write_dataset, write_labels, DiskFetch,
    EncodedImage, Record, LABELS_FILE, MANIFEST_FILE,
};
pub use shard::{
    even_ranges, rank_split, shard_pairs, trunk_order, trunk_shuffle, Trunk, TrunkManifest,
    FULL_SCALE_TRUNK_SIZE,
};
pub use sim::{simulate, NodeReport, SimConfig, SimReport};
pub use synth::{
    class_labels, glyph, sample_frames, synth_dataset, synth_dataset_with, SynthConfig,
    SyntheticSample, TaskMode, CLASSES, GLYPHS, PALETTE,
};
