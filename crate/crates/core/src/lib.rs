//! Survey-driven toolkit for mapping value conflict across demographic
//! subgroups and evaluating how well persona-prompted language models
//! emulate those subgroups.
//!
//! The pipeline runs in stages, each backed by one module:
//!
//! 1. [`survey`] loads a question codebook and respondent microdata and
//!    applies the range/exclusion filters.
//! 2. [`stratify`] enumerates demographic strata and computes per-(question,
//!    subgroup) answer histograms, modal answers and validity.
//! 3. [`landscape`] scores value conflict per question and stratum (modal
//!    diversity, ordinal Wasserstein divergence) and aggregates categories.
//! 4. [`dataset`] renders personas and prompt templates and assembles
//!    train / out-of-distribution evaluation splits.
//! 5. [`gateway`] drives chat-completion endpoints (or a deterministic mock)
//!    for batch inference with retries and rate limiting.
//! 6. [`numeric`] parses structured numerical answers, detects refusals and
//!    computes accuracy / NMAE per subgroup.
//! 7. [`judge`] runs the pairwise double-pass judge protocol and computes
//!    win rates.
//! 8. [`stats`] holds the inferential layer: disparity metrics, paired
//!    bootstrap intervals, Spearman correlation, weighted kappa and
//!    improvement ranks.
//!
//! Scalar-valued metric kernels are generic over the float type via
//! [`Real`]; the pipeline itself uses the [`Score`] alias.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod dataset;
pub mod gateway;
pub mod judge;
pub mod landscape;
pub mod numeric;
pub mod stats;
pub mod stratify;
pub mod survey;
pub mod synthetic;

/// Floating-point scalar the metric kernels are generic over: f32 or f64.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + fmt::Debug + fmt::Display
{
}

impl<T> Real for T where T: Float + FromPrimitive + ToPrimitive + Sum<T> + fmt::Debug + fmt::Display {}

/// Concrete scalar used by the pipeline and all reports.
pub type Score = f64;

pub use dataset::{DatasetManifest, PromptSet, SampleRecord};
pub use gateway::{CompletionRequest, CompletionResult, RequestStatus};
pub use judge::{JudgeCase, Verdict, Winner};
pub use landscape::{CategoryReport, DivergenceScore, DiversityScore};
pub use numeric::{EvalRecord, ParsedAnswer, SubgroupMetrics};
pub use stats::{AgreementResult, BootstrapCi, DisparityReport};
pub use stratify::{Stratum, Subgroup, SubgroupOpinion};
pub use survey::{QuestionSpec, RespondentRecord, SurveyTable};
