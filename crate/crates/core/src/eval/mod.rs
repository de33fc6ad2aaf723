//! Verification metrics and the experiment protocols.

pub mod experiments;
pub mod identification;
pub mod metrics;
pub mod permanence;

pub use experiments::{
    auth_report, collect_auth_scores, enroll_account, enroll_all, prepare_corpus, run_auth_experiment, score_table,
    AuthReport, AuthScores, EnrolledAccount, EvalConfig, Method, PreparedAccount, ScoreTable,
};
pub use identification::{
    exhaustive_latency, linear_fit, run_ident_experiment, train_index, ExhaustiveResult, IdentConfig, IdentReport,
    IdentRow, LatencyFit, LatencyPoint,
};
pub use metrics::{compute_metrics, MetricsReport, RocPoint};
pub use permanence::{
    run_permanence, two_proportion_z, Comparison, PermanenceConfig, PermanenceReport, Policy, PolicySeries,
    SessionResult, Verdict,
};
