//! Black-box objective evaluation.
//!
//! Three oracle families sit behind one trait: lookup tables over published
//! measurements, user-supplied subprocess evaluators speaking a one-line
//! JSON protocol over stdin/stdout, and synthetic benchmarks whose exact
//! Pareto fronts are enumerable (the regret yardstick for the whole loop).
//! Every oracle is deterministic for a fixed architecture and seed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostTable, ReferenceTable};
use crate::space::{DecisionVector, SearchSpace, SpaceError, StageId};

/// An objective the engine knows how to request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "tafid")]
    TaFid,
    #[serde(rename = "latency_ms")]
    LatencyMs,
    #[serde(rename = "params_m")]
    ParamsM,
}

impl Objective {
    pub fn wire_name(self) -> &'static str {
        match self {
            Objective::TaFid => "tafid",
            Objective::LatencyMs => "latency_ms",
            Objective::ParamsM => "params_m",
        }
    }

    pub fn from_wire_name(name: &str) -> Option<Objective> {
        match name {
            "tafid" => Some(Objective::TaFid),
            "latency_ms" => Some(Objective::LatencyMs),
            "params_m" => Some(Objective::ParamsM),
            _ => None,
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// Where a record's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleSource {
    Lookup,
    Subprocess,
    Synthetic,
}

impl std::fmt::Display for OracleSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OracleSource::Lookup => "lookup",
            OracleSource::Subprocess => "subprocess",
            OracleSource::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// One evaluation request: the discrete decision, its serialized form and
/// the objectives wanted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub request_id: String,
    pub decision: DecisionVector,
    pub arch: String,
    pub objectives_requested: Vec<Objective>,
    /// Optional sample-count hint passed through to subprocess evaluators;
    /// its semantics belong to the evaluator.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_samples: Option<u64>,
}

/// One completed evaluation. `wall_time_s` and `timestamp` describe when the
/// work happened and are excluded from trajectory comparisons (see
/// [`EvaluationRecord::same_outcome`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub request: EvaluationRequest,
    pub values: BTreeMap<Objective, f64>,
    pub source: OracleSource,
    pub wall_time_s: f64,
    pub timestamp: f64,
}

impl EvaluationRecord {
    /// Semantic equality: same request, values and source, ignoring timing.
    pub fn same_outcome(&self, other: &EvaluationRecord) -> bool {
        self.request == other.request && self.values == other.values && self.source == other.source
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("architecture `{arch}` is not in the lookup table")]
    Miss { arch: String },
    #[error("oracle does not provide objective `{objective}`")]
    UnsupportedObjective { objective: Objective },
    #[error("evaluator command `{command}` not found or not executable")]
    CommandNotFound { command: String },
    #[error("failed to spawn evaluator: {0}")]
    Spawn(std::io::Error),
    #[error("evaluator i/o error: {0}")]
    Io(std::io::Error),
    #[error("evaluator timed out after {seconds} s")]
    Timeout { seconds: f64 },
    #[error("evaluator exited with {status}: {stderr}")]
    ChildFailed { status: String, stderr: String },
    #[error("malformed evaluator response after retry: {detail}")]
    MalformedResponse { detail: String },
    #[error("response request_id `{received}` does not match `{sent}`")]
    RequestIdMismatch { sent: String, received: String },
    #[error("evaluator returned non-finite value for `{objective}`")]
    NonFiniteValue { objective: Objective },
    #[error("response lacks requested objective `{objective}`")]
    MissingValue { objective: Objective },
    #[error("unknown benchmark id `{0}`")]
    UnknownBenchmark(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
}

/// A black-box objective evaluator. Implementations must be deterministic
/// for a fixed (architecture, seed).
pub trait Oracle: Send + Sync {
    fn source(&self) -> OracleSource;

    /// Values for the requested objectives. Implementations may return more
    /// than requested; the caller filters.
    fn evaluate_values(
        &self,
        request: &EvaluationRequest,
    ) -> Result<BTreeMap<Objective, f64>, OracleError>;
}

/// Runs a request against an oracle and assembles the full record, checking
/// that every requested objective came back finite.
pub fn evaluate(
    oracle: &dyn Oracle,
    request: EvaluationRequest,
) -> Result<EvaluationRecord, OracleError> {
    let start = Instant::now();
    let raw = oracle.evaluate_values(&request)?;
    let mut values = BTreeMap::new();
    for objective in &request.objectives_requested {
        let v = raw
            .get(objective)
            .copied()
            .ok_or(OracleError::MissingValue {
                objective: *objective,
            })?;
        if !v.is_finite() {
            return Err(OracleError::NonFiniteValue {
                objective: *objective,
            });
        }
        values.insert(*objective, v);
    }
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    Ok(EvaluationRecord {
        request,
        values,
        source: oracle.source(),
        wall_time_s: start.elapsed().as_secs_f64(),
        timestamp,
    })
}

/// Replays published measurements: O(1) per listed architecture, a hard
/// miss for anything else.
pub struct LookupOracle {
    by_arch: BTreeMap<String, BTreeMap<Objective, f64>>,
}

impl LookupOracle {
    pub fn from_reference_table(table: &ReferenceTable) -> LookupOracle {
        let mut by_arch = BTreeMap::new();
        for record in &table.records {
            let mut values = BTreeMap::new();
            for (name, v) in &record.values {
                if let Some(objective) = Objective::from_wire_name(name) {
                    values.insert(objective, *v);
                }
            }
            by_arch.insert(record.arch.clone(), values);
        }
        LookupOracle { by_arch }
    }

    pub fn parse(document: &str) -> Result<LookupOracle, OracleError> {
        Ok(LookupOracle::from_reference_table(&ReferenceTable::parse(
            document,
        )?))
    }

    pub fn archs(&self) -> impl Iterator<Item = &str> {
        self.by_arch.keys().map(String::as_str)
    }
}

impl Oracle for LookupOracle {
    fn source(&self) -> OracleSource {
        OracleSource::Lookup
    }

    fn evaluate_values(
        &self,
        request: &EvaluationRequest,
    ) -> Result<BTreeMap<Objective, f64>, OracleError> {
        self.by_arch
            .get(&request.arch)
            .cloned()
            .ok_or_else(|| OracleError::Miss {
                arch: request.arch.clone(),
            })
    }
}

/// Wire request written to a subprocess evaluator, one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub request_id: String,
    pub decision: Vec<usize>,
    pub arch: String,
    pub objectives_requested: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_samples: Option<u64>,
}

/// Wire response read back from the evaluator, one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub request_id: String,
    pub values: BTreeMap<String, f64>,
}

/// Drives a user-supplied evaluator process. Each evaluation spawns the
/// command, writes one request line to its stdin, and reads one response
/// line from its stdout; the child is expected to exit afterwards. One retry
/// is granted on a malformed response.
pub struct SubprocessOracle {
    command: Vec<String>,
    timeout: Duration,
    n_samples: Option<u64>,
}

/// Default evaluator timeout: real fidelity evaluations are expensive.
pub const DEFAULT_SUBPROCESS_TIMEOUT_S: f64 = 3600.0;

impl SubprocessOracle {
    /// Validates the command up front so a missing evaluator fails before
    /// any evaluation is attempted.
    pub fn new(
        command: Vec<String>,
        timeout: Duration,
        n_samples: Option<u64>,
    ) -> Result<SubprocessOracle, OracleError> {
        let program = command.first().ok_or_else(|| OracleError::CommandNotFound {
            command: String::new(),
        })?;
        if !executable_exists(program) {
            return Err(OracleError::CommandNotFound {
                command: program.clone(),
            });
        }
        Ok(SubprocessOracle {
            command,
            timeout,
            n_samples,
        })
    }

    fn run_once(&self, line: &str) -> Result<String, OracleError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(OracleError::Spawn)?;
        {
            let mut stdin = child.stdin.take().expect("stdin piped");
            stdin
                .write_all(line.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(OracleError::Io)?;
            // Dropping stdin closes it so line-at-a-time evaluators see EOF.
        }
        let mut stdout = child.stdout.take().expect("stdout piped");
        let mut stderr = child.stderr.take().expect("stderr piped");
        let reader = std::thread::spawn(move || {
            let mut out = String::new();
            let _ = stdout.read_to_string(&mut out);
            let mut err = String::new();
            let _ = stderr.read_to_string(&mut err);
            (out, err)
        });
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait().map_err(OracleError::Io)? {
                Some(status) => break status,
                None => {
                    if Instant::now() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        let _ = reader.join();
                        return Err(OracleError::Timeout {
                            seconds: self.timeout.as_secs_f64(),
                        });
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
            }
        };
        let (out, err) = reader.join().unwrap_or_default();
        if !status.success() {
            return Err(OracleError::ChildFailed {
                status: status.to_string(),
                stderr: err.trim().to_owned(),
            });
        }
        Ok(out)
    }
}

fn executable_exists(program: &str) -> bool {
    let path = Path::new(program);
    if path.components().count() > 1 {
        return path.is_file();
    }
    if let Some(paths) = std::env::var_os("PATH") {
        for dir in std::env::split_paths(&paths) {
            if dir.join(program).is_file() {
                return true;
            }
        }
    }
    false
}

impl Oracle for SubprocessOracle {
    fn source(&self) -> OracleSource {
        OracleSource::Subprocess
    }

    fn evaluate_values(
        &self,
        request: &EvaluationRequest,
    ) -> Result<BTreeMap<Objective, f64>, OracleError> {
        let wire = WireRequest {
            request_id: request.request_id.clone(),
            decision: request.decision.indices.to_vec(),
            arch: request.arch.clone(),
            objectives_requested: request
                .objectives_requested
                .iter()
                .map(|o| o.wire_name().to_owned())
                .collect(),
            n_samples: request.n_samples.or(self.n_samples),
        };
        let line = serde_json::to_string(&wire).expect("wire request serializes");
        let mut last_malformed = String::new();
        for _attempt in 0..2 {
            let out = self.run_once(&line)?;
            let first_line = out.lines().next().unwrap_or("");
            let response: WireResponse = match serde_json::from_str(first_line) {
                Ok(r) => r,
                Err(e) => {
                    last_malformed = format!("{e} in `{first_line}`");
                    continue;
                }
            };
            if response.request_id != request.request_id {
                return Err(OracleError::RequestIdMismatch {
                    sent: request.request_id.clone(),
                    received: response.request_id,
                });
            }
            let mut values = BTreeMap::new();
            for (name, v) in response.values {
                if let Some(objective) = Objective::from_wire_name(&name) {
                    values.insert(objective, v);
                }
            }
            return Ok(values);
        }
        Err(OracleError::MalformedResponse {
            detail: last_malformed,
        })
    }
}

/// Deterministic desk-scale benchmarks with enumerable true fronts.
///
/// `additive` draws independent per-(stage, variant) coefficient tables for
/// both objectives. `conflicting` uses the real composed SM8750 block
/// latency as the second objective and an anti-correlated per-stage fidelity
/// score as the first, so cheap blocks hurt fidelity the way reduced
/// attention does.
pub struct SyntheticOracle {
    space: SearchSpace,
    f1: Vec<Vec<f64>>,
    f2: Vec<Vec<f64>>,
}

const SM8750_PROFILE: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../profiles/sm8750_fp16"));

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

impl SyntheticOracle {
    pub fn new(kind: &str, space: &SearchSpace, seed: u64) -> Result<SyntheticOracle, OracleError> {
        match kind {
            "additive" => Ok(Self::additive(space, seed)),
            "conflicting" => Self::conflicting(space, seed),
            other => Err(OracleError::UnknownBenchmark(other.to_owned())),
        }
    }

    fn additive(space: &SearchSpace, seed: u64) -> SyntheticOracle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw_table = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            StageId::ALL
                .iter()
                .map(|&s| (0..space.count(s)).map(|_| unit_f64(rng) * 10.0).collect())
                .collect()
        };
        let f1 = draw_table(&mut rng);
        let f2 = draw_table(&mut rng);
        SyntheticOracle {
            space: space.clone(),
            f1,
            f2,
        }
    }

    fn conflicting(space: &SearchSpace, seed: u64) -> Result<SyntheticOracle, OracleError> {
        let table = CostTable::parse(SM8750_PROFILE)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f1 = Vec::with_capacity(StageId::ALL.len());
        let mut f2 = Vec::with_capacity(StageId::ALL.len());
        for &stage in StageId::ALL.iter() {
            let latencies: Vec<f64> = space
                .variants(stage)
                .iter()
                .map(|v| {
                    table
                        .get(stage, v.label())
                        .map(|e| e.latency_ms)
                        .ok_or_else(|| OracleError::Cost(crate::cost::CostError::MissingEntry {
                            stage,
                            label: v.label().to_owned(),
                            device: table.device.clone(),
                        }))
                })
                .collect::<Result<_, _>>()?;
            let lo = latencies.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = latencies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-9);
            let scale = 1.0 + 2.0 * unit_f64(&mut rng);
            // Fast blocks score high (bad) on fidelity, slow ones low, with
            // a little seeded roughness so the front is not a straight line.
            let fidelity: Vec<f64> = latencies
                .iter()
                .map(|l| scale * (hi - l) / span + 0.15 * scale * unit_f64(&mut rng))
                .collect();
            f1.push(fidelity);
            f2.push(latencies);
        }
        Ok(SyntheticOracle {
            space: space.clone(),
            f1,
            f2,
        })
    }

    /// Exact objective pair for one decision vector.
    pub fn objectives(&self, z: &DecisionVector) -> Result<(f64, f64), OracleError> {
        self.space.validate(z)?;
        let mut a = 0.0;
        let mut b = 0.0;
        for stage in StageId::ALL {
            let i = stage.ordinal();
            a += self.f1[i][z.indices[i]];
            b += self.f2[i][z.indices[i]];
        }
        Ok((a, b))
    }
}

impl Oracle for SyntheticOracle {
    fn source(&self) -> OracleSource {
        OracleSource::Synthetic
    }

    fn evaluate_values(
        &self,
        request: &EvaluationRequest,
    ) -> Result<BTreeMap<Objective, f64>, OracleError> {
        let (f1, f2) = self.objectives(&request.decision)?;
        // Benchmarks stand in for the (fidelity, cost) pair; parameter-count
        // requests reuse the cost table so either objective pair runs.
        let mut values = BTreeMap::new();
        values.insert(Objective::TaFid, f1);
        values.insert(Objective::LatencyMs, f2);
        values.insert(Objective::ParamsM, f2);
        Ok(values)
    }
}

/// Wraps another oracle and counts evaluations; a test instrument for
/// asserting that replay never touches the oracle.
pub struct CountingOracle<O> {
    inner: O,
    count: std::sync::atomic::AtomicUsize,
}

impl<O: Oracle> CountingOracle<O> {
    pub fn new(inner: O) -> CountingOracle<O> {
        CountingOracle {
            inner,
            count: std::sync::atomic::AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl<O: Oracle> Oracle for CountingOracle<O> {
    fn source(&self) -> OracleSource {
        self.inner.source()
    }

    fn evaluate_values(
        &self,
        request: &EvaluationRequest,
    ) -> Result<BTreeMap<Objective, f64>, OracleError> {
        self.count.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.evaluate_values(request)
    }
}
