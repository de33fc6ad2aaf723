//! Fixtures shared by the benchmarks.

use airsign_core::eval::{enroll_all, prepare_corpus, EnrolledAccount, EvalConfig, PreparedAccount};
use airsign_core::synth::{gen_corpus, CorpusConfig};

/// A small prepared and enrolled corpus.
pub fn enrolled_corpus(users: usize) -> (Vec<PreparedAccount>, Vec<EnrolledAccount>) {
    let corpus = gen_corpus(&CorpusConfig {
        n_users: users,
        spoofers: 1,
        spoof_reps: 2,
        seed: 4242,
        ..Default::default()
    })
    .expect("corpus");
    let prepared = prepare_corpus(&corpus, &Default::default()).expect("prepare");
    let cfg = EvalConfig {
        calibrate: false,
        ..Default::default()
    };
    let enrolled = enroll_all(&prepared, &cfg).expect("enroll");
    (prepared, enrolled)
}
