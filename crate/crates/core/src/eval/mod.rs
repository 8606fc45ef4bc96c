//! Evaluation sets, cosine-similarity statistics and transcript error rates.

mod report;
mod sets;
mod similarity;
mod text;

pub use report::{assemble_report, OmittedRow, ReportRow, SimilarityReport, REPORT_ROWS};
pub use sets::{build_eval_sets, stub_convert, ConversionBackend, EvalConfig, EvalSets, StubBackend};
pub use similarity::{
    corresponding, cosine, natural_consistency, pairwise_across, pairwise_within, stability, GeneratedJoin, PairCap,
    RunningStats, Similarity,
};
pub use text::{cer, edit_distance, load_transcripts, normalize_text, score_transcripts, wer, TextScores, TranscriptPair};
