//! AUROC metrics, the leave-one-out k-shot benchmark and CSV reports.

mod auroc;
mod bench;
mod report;

pub use auroc::{auroc, auroc_pairwise, pixel_auroc, PixelAucMode};
pub use bench::{
    evaluate_category, run_benchmark, target_categories, EvalOutputs, ModelSource, TestSet,
};
pub use report::{
    macro_average, mean_std, runs_csv, summary_csv, write_reports, EvalReport, RunResult,
};
