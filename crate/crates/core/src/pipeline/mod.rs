//! Training, extraction and spatial evaluation.

mod eval;
mod train;

pub use eval::{
    gain_pattern, speaker_sweep, Backend, GainPattern, GainRow, GainSummary, GainSweepSpec,
    MvdrBackend, MvdrCovariance, NetBackend, OracleBackend, SpeakerSweep, SweepRow,
};
pub use train::{
    audit_clues, evaluate_scenes, inactive_target, load_split, make_example, sample_clue, train,
    ClueAudit, ClueChoice, Example, StepRecord, TrainConfig, TrainReport, TrainScene, Trainer,
    INACTIVE_TONE_DB, INACTIVE_TONE_HZ,
};
