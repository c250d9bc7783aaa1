//! Optimization, evaluation, dataset manifests and the synthetic task.

mod manifest;
mod metrics;
mod optim;
mod synth;
mod trainer;

pub use manifest::{
    dataset_stats, load_manifest, parse_manifest, DatasetStats, ManifestEntry, Split, SplitCounts,
};
pub use metrics::{confusion, macro_f1, merge_confusion, ClassMetrics, Confusion, MetricsReport};
pub use optim::{clip_grad_norm, lrate, lrate_noam, AdamW, LrSchedule, OptimizerConfig, ScheduleMode};
pub use synth::{
    synth_task, synth_vocabulary, SynthExample, HATE_MARKER, HIGH_TONE_HZ, LOW_TONE_HZ,
    NEUTRAL_MARKER, SYNTH_SECONDS,
};
pub use trainer::{
    class_weights, cross_entropy, evaluate, prepare_synthetic, train, EpochRecord, Evaluation,
    Example, TrainConfig, TrainOutcome,
};
