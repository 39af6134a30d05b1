//! Coverage-guided fuzzing focused on unsafe code.
//!
//! The pipeline:
//!
//! 1. [`unsafescan`] produces the set of functions containing unsafe code.
//! 2. [`callgraph`] parses and merges whole-program call graphs.
//! 3. [`pathfinder`] computes the block list: functions with no call path
//!    to any unsafe function.
//! 4. [`coverage`] assigns coverage guards only to unblocked functions, so
//!    the fuzzer's novelty signal ignores code that cannot reach unsafe
//!    operations.
//! 5. [`fuzzer`] runs AFL-style trials and paired full/partial campaigns
//!    on [`harness`] targets whose unsafe locations carry oracles.
//! 6. [`evalstats`] compares time-to-oracle samples with the Mann–Whitney U
//!    test and the Vargha–Delaney Â12 effect size.

pub mod callgraph;
pub mod cli;
pub mod coverage;
pub mod evalstats;
pub mod fuzzer;
pub mod harness;
pub mod pathfinder;
pub mod unsafescan;

pub use callgraph::{merge, parse_dot, parse_edgelist, CallGraph, FunctionId};
pub use coverage::{bucketize, BucketSummary, CoverageMap, ExecutionTrace, GuardTable};
pub use evalstats::{a12, aggregate_report, classify_effect, mann_whitney_u, EffectClass, SampleSet, StatReport};
pub use fuzzer::{run_campaign, run_trial, Arm, CampaignConfig, Clock, TrialConfig, TrialResult};
pub use harness::{list_targets, target_by_name, TargetProgram};
pub use pathfinder::{compute_blocklist, coverage_fraction, write_blocklist, BlockList, BlockListFormat, BlockMode};
pub use unsafescan::{load_manifest, scan_source, write_manifest, UnsafeManifest};
