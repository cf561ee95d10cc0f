//! Self-training: pseudo-labeling of unlabeled slices, iterative
//! relabel/prune/retrain rounds for the slice network and the volume forest,
//! and the initial volume-label rules.

mod pipeline;
mod rules;
mod selection;
mod slice;
mod volume;

pub use pipeline::{
    assess_volume, feature_rows, predict_volumes, run_pipeline, summary_text, volume_stage,
    volume_stage_seed, PipelineConfig, PipelineOutcome, VolumeInput,
};
pub use rules::{init_volume_label, init_volume_labels, FailRule, PASS_FRACTION};
pub use selection::{
    select, select_slices, trace_text, Decision, IterationRecord, PseudoLabelRecord, Selection,
    SelfTrainConfig, Stage,
};
pub use slice::{
    merge_pseudo_labels, pseudo_label_slices, slice_accuracy, slice_self_train, Provenance,
    PseudoLabeledManifest, SliceSelfTrainOutcome,
};
pub use volume::{volume_self_train, VolumeSelfTrainOutcome};
