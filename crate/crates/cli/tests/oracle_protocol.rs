//! Subprocess evaluator protocol: round trips against the bundled reference
//! evaluator, plus every failure mode the driver must surface.

use std::collections::BTreeMap;
use std::time::Duration;

use archopt::oracle::{
    self, EvaluationRequest, Objective, OracleError, SubprocessOracle,
};
use archopt::space::{DecisionVector, SearchSpace};

fn ref_eval(extra: &[&str]) -> Vec<String> {
    let mut cmd = vec![env!("CARGO_BIN_EXE_archopt-ref-eval").to_owned()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

fn request(space: &SearchSpace, z: DecisionVector, id: &str) -> EvaluationRequest {
    EvaluationRequest {
        request_id: id.to_owned(),
        decision: z,
        arch: space.encode_arch(&z).unwrap(),
        objectives_requested: vec![Objective::TaFid, Objective::LatencyMs],
        n_samples: None,
    }
}

/// Mirrors the evaluator's hash so responses can be checked bit-for-bit.
fn expected_value(arch: &str, objective: &str) -> f64 {
    fn splitmix64(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    let mut h = 0xcbf29ce484222325u64;
    for b in arch.bytes().chain(b"::".iter().copied()).chain(objective.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let unit = (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64;
    (unit * 100.0 * 1e9).round() / 1e9
}

#[test]
fn thousand_randomized_round_trips() {
    let space = SearchSpace::nanosd_default();
    let oracle = SubprocessOracle::new(ref_eval(&[]), Duration::from_secs(20), None).unwrap();
    let counts = space.counts();
    let mut state = 0xabcdef12345u64;
    let mut mismatches = 0usize;
    for i in 0..1000 {
        let mut indices = [0usize; 6];
        for (d, slot) in indices.iter_mut().enumerate() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *slot = (state >> 33) as usize % counts[d];
        }
        let z = DecisionVector::new(indices);
        let req = request(&space, z, &format!("cycle-{i:04}"));
        let record = oracle::evaluate(&oracle, req).unwrap();
        let arch = space.encode_arch(&z).unwrap();
        for objective in [Objective::TaFid, Objective::LatencyMs] {
            let got = record.values[&objective];
            let want = expected_value(&arch, objective.wire_name());
            if got.to_bits() != want.to_bits() {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0, "{mismatches} value mismatches in 1000 cycles");
}

#[test]
fn timeout_is_reported() {
    let space = SearchSpace::nanosd_default();
    let oracle = SubprocessOracle::new(
        ref_eval(&["--sleep-ms", "2000"]),
        Duration::from_millis(150),
        None,
    )
    .unwrap();
    let req = request(&space, DecisionVector::new([0; 6]), "t-0");
    match oracle::evaluate(&oracle, req) {
        Err(OracleError::Timeout { .. }) => {}
        other => panic!("expected timeout, got {other:?}"),
    }
}

#[test]
fn nonzero_exit_is_reported() {
    let space = SearchSpace::nanosd_default();
    let oracle =
        SubprocessOracle::new(ref_eval(&["--mode", "fail"]), Duration::from_secs(5), None)
            .unwrap();
    let req = request(&space, DecisionVector::new([0; 6]), "f-0");
    match oracle::evaluate(&oracle, req) {
        Err(OracleError::ChildFailed { stderr, .. }) => {
            assert!(stderr.contains("synthetic evaluator failure"));
        }
        other => panic!("expected child failure, got {other:?}"),
    }
}

#[test]
fn persistent_malformed_output_fails_after_retry() {
    let space = SearchSpace::nanosd_default();
    let oracle = SubprocessOracle::new(
        ref_eval(&["--mode", "malformed"]),
        Duration::from_secs(5),
        None,
    )
    .unwrap();
    let req = request(&space, DecisionVector::new([0; 6]), "m-0");
    match oracle::evaluate(&oracle, req) {
        Err(OracleError::MalformedResponse { .. }) => {}
        other => panic!("expected malformed response, got {other:?}"),
    }
}

#[test]
fn single_malformed_response_is_retried() {
    let space = SearchSpace::nanosd_default();
    let dir = tempfile::tempdir().unwrap();
    let marker = dir.path().join("flaky-marker");
    let oracle = SubprocessOracle::new(
        ref_eval(&["--flaky-marker", marker.to_str().unwrap()]),
        Duration::from_secs(5),
        None,
    )
    .unwrap();
    let req = request(&space, DecisionVector::new([0; 6]), "r-0");
    let record = oracle::evaluate(&oracle, req).unwrap();
    assert!(marker.exists(), "first attempt produced garbage");
    assert!(record.values[&Objective::TaFid].is_finite());
}

#[test]
fn request_id_mismatch_is_rejected() {
    let space = SearchSpace::nanosd_default();
    let oracle = SubprocessOracle::new(
        ref_eval(&["--mode", "mismatch"]),
        Duration::from_secs(5),
        None,
    )
    .unwrap();
    let req = request(&space, DecisionVector::new([0; 6]), "id-0");
    match oracle::evaluate(&oracle, req) {
        Err(OracleError::RequestIdMismatch { sent, received }) => {
            assert_eq!(sent, "id-0");
            assert_eq!(received, "id-0-wrong");
        }
        other => panic!("expected id mismatch, got {other:?}"),
    }
}

#[test]
fn null_values_are_rejected_as_non_finite() {
    let space = SearchSpace::nanosd_default();
    let oracle =
        SubprocessOracle::new(ref_eval(&["--mode", "nan"]), Duration::from_secs(5), None)
            .unwrap();
    let req = request(&space, DecisionVector::new([0; 6]), "n-0");
    // JSON has no NaN literal; a null value fails to parse as a number and
    // surfaces as a malformed response after the retry.
    match oracle::evaluate(&oracle, req) {
        Err(OracleError::MalformedResponse { .. }) => {}
        other => panic!("expected malformed response for null value, got {other:?}"),
    }
}

#[test]
fn values_beyond_requested_are_filtered() {
    struct Extra;
    impl archopt::oracle::Oracle for Extra {
        fn source(&self) -> archopt::oracle::OracleSource {
            archopt::oracle::OracleSource::Synthetic
        }
        fn evaluate_values(
            &self,
            _request: &EvaluationRequest,
        ) -> Result<BTreeMap<Objective, f64>, OracleError> {
            let mut values = BTreeMap::new();
            values.insert(Objective::TaFid, 1.0);
            values.insert(Objective::LatencyMs, 2.0);
            values.insert(Objective::ParamsM, 3.0);
            Ok(values)
        }
    }
    let space = SearchSpace::nanosd_default();
    let mut req = request(&space, DecisionVector::new([0; 6]), "x-0");
    req.objectives_requested = vec![Objective::TaFid];
    let record = oracle::evaluate(&Extra, req).unwrap();
    assert_eq!(record.values.len(), 1);
    assert_eq!(record.values[&Objective::TaFid], 1.0);
}
