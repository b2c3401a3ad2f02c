//! The relax-and-project EHVI optimization loop.
//!
//! A run draws a seeded initial design in the unit cube, evaluates the
//! projected architectures through the configured oracle, then iterates:
//! fit one GP per objective on all observations, draw a seeded candidate
//! pool, score it with exact expected hypervolume improvement against the
//! current archive, evaluate the winner's projection, append the result to
//! the event log. All randomness is derived as a pure function of the run
//! seed, the purpose and the index, so an interrupted run resumed from its
//! log continues bit-for-bit identically.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostError;
use crate::gp::{self, GpConfig, GpError, GpModel};
use crate::log::{self, EventKind, EventWriter, LockGuard, LogError, RunEvent};
use crate::moo::{self, MooError, ObjectivePoint, ParetoArchive};
use crate::oracle::{
    self, EvaluationRecord, EvaluationRequest, LookupOracle, Objective, Oracle, OracleError,
    SubprocessOracle, SyntheticOracle, DEFAULT_SUBPROCESS_TIMEOUT_S,
};
use crate::space::{ContinuousPoint, DecisionVector, SearchSpace, SpaceError, STAGE_COUNT};

/// The two supported objective pairs: fidelity against one efficiency axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Objective>", into = "Vec<Objective>")]
pub struct ObjectivePair {
    pub f1: Objective,
    pub f2: Objective,
}

impl ObjectivePair {
    pub const TAFID_LATENCY: ObjectivePair = ObjectivePair {
        f1: Objective::TaFid,
        f2: Objective::LatencyMs,
    };
    pub const TAFID_PARAMS: ObjectivePair = ObjectivePair {
        f1: Objective::TaFid,
        f2: Objective::ParamsM,
    };
}

impl TryFrom<Vec<Objective>> for ObjectivePair {
    type Error = String;
    fn try_from(v: Vec<Objective>) -> Result<ObjectivePair, String> {
        match v.as_slice() {
            [Objective::TaFid, Objective::LatencyMs] => Ok(ObjectivePair::TAFID_LATENCY),
            [Objective::TaFid, Objective::ParamsM] => Ok(ObjectivePair::TAFID_PARAMS),
            other => Err(format!(
                "objective pair must be [tafid, latency_ms] or [tafid, params_m], got {other:?}"
            )),
        }
    }
}

impl From<ObjectivePair> for Vec<Objective> {
    fn from(p: ObjectivePair) -> Vec<Objective> {
        vec![p.f1, p.f2]
    }
}

/// Which oracle a run evaluates against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Lookup {
        path: String,
    },
    Subprocess {
        command: Vec<String>,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_samples: Option<u64>,
    },
    Synthetic {
        benchmark: String,
        #[serde(default)]
        seed: u64,
    },
}

fn default_timeout_s() -> f64 {
    DEFAULT_SUBPROCESS_TIMEOUT_S
}

/// Where proposal candidates come from: the whole unit cube, or an explicit
/// architecture list (useful for replaying finite published sets).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateSet {
    #[default]
    Uniform,
    Archs {
        list: Vec<String>,
    },
}

/// Full run configuration. Deserializes from the run-config JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `nanosd_default` or a path to a space config file.
    pub space: String,
    pub objectives: ObjectivePair,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pool_size")]
    pub candidate_pool_size: usize,
    #[serde(default = "default_gp_restarts")]
    pub gp_restarts: usize,
    /// Reference-point margin: per objective, max observed plus this
    /// fraction of the observed range (plus one when the range collapses).
    #[serde(default = "default_ref_margin")]
    pub ref_margin: f64,
    #[serde(default)]
    pub low_discrepancy_init: bool,
    #[serde(default)]
    pub candidates: CandidateSet,
    pub oracle: OracleSpec,
}

fn default_n_init() -> usize {
    15
}
fn default_n_iter() -> usize {
    120
}
fn default_pool_size() -> usize {
    4096
}
fn default_gp_restarts() -> usize {
    8
}
fn default_ref_margin() -> f64 {
    0.1
}

impl RunConfig {
    pub fn parse(document: &str) -> Result<RunConfig, BoError> {
        let config: RunConfig = serde_json::from_str(document).map_err(BoError::ConfigJson)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BoError> {
        if self.n_init < 2 {
            return Err(BoError::Config(format!(
                "n_init must be at least 2, got {}",
                self.n_init
            )));
        }
        if self.candidate_pool_size < 1 {
            return Err(BoError::Config("candidate_pool_size must be positive".into()));
        }
        if !(self.ref_margin.is_finite() && self.ref_margin >= 0.0) {
            return Err(BoError::Config(format!(
                "ref_margin must be a non-negative number, got {}",
                self.ref_margin
            )));
        }
        Ok(())
    }

    /// Rewrites relative oracle paths against `base_dir` so the config echo
    /// in the run header stays usable from any working directory.
    pub fn resolve_paths(mut self, base_dir: &Path) -> RunConfig {
        fn absolutize(base: &Path, p: &str) -> String {
            let path = Path::new(p);
            if path.is_absolute() {
                p.to_owned()
            } else {
                base.join(path).to_string_lossy().into_owned()
            }
        }
        if self.space != "nanosd_default" {
            self.space = absolutize(base_dir, &self.space);
        }
        match &mut self.oracle {
            OracleSpec::Lookup { path } => *path = absolutize(base_dir, path),
            OracleSpec::Subprocess { command, .. } => {
                if let Some(program) = command.first_mut() {
                    if program.contains(std::path::MAIN_SEPARATOR) {
                        *program = absolutize(base_dir, program);
                    }
                }
            }
            OracleSpec::Synthetic { .. } => {}
        }
        self
    }
}

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("run config is not valid JSON: {0}")]
    ConfigJson(serde_json::Error),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("oracle failure at iteration {iteration:?}: {source}")]
    Oracle {
        iteration: Option<usize>,
        source: OracleError,
    },
    #[error("GP fit failure after {evals} evaluations: {source}")]
    Gp { evals: usize, source: GpError },
    #[error(transparent)]
    Moo(#[from] MooError),
    #[error("could not draw {needed} distinct initial projections (space too small)")]
    InitDesign { needed: usize },
    #[error("candidate list entry `{arch}` is invalid: {source}")]
    CandidateList { arch: String, source: SpaceError },
    #[error("log contains no evaluations to replay")]
    EmptyLog,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const TAG_INIT: u64 = 0x494e_4954;
const TAG_POOL: u64 = 0x504f_4f4c;
const TAG_GP1: u64 = 0x4750_0001;
const TAG_GP2: u64 = 0x4750_0002;

/// Stateless stream derivation: every random draw in a run is a pure
/// function of (seed, purpose, index), which is what makes resume exact.
fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ tag.wrapping_mul(0xd134_2543_de82_ef95)) ^ index)
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn draw_point(rng: &mut ChaCha8Rng) -> ContinuousPoint {
    let mut coords = [0.0; STAGE_COUNT];
    for c in coords.iter_mut() {
        *c = unit_f64(rng);
    }
    ContinuousPoint { coords }
}

/// Radical-inverse (Halton) point; bases are the first six primes.
fn halton_point(index: u64) -> ContinuousPoint {
    const BASES: [u64; STAGE_COUNT] = [2, 3, 5, 7, 11, 13];
    let mut coords = [0.0; STAGE_COUNT];
    for (c, &base) in coords.iter_mut().zip(BASES.iter()) {
        let mut i = index;
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        *c = r;
    }
    ContinuousPoint { coords }
}

/// Per-objective reference point: max observed plus a margin of
/// `margin * (max - min)`, or plus one when the range is degenerate.
pub fn reference_point(f1: &[f64], f2: &[f64], margin: f64) -> (f64, f64) {
    let coord = |values: &[f64]| -> f64 {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > min {
            max + margin * (max - min)
        } else {
            max + 1.0
        }
    };
    (coord(f1), coord(f2))
}

/// One evaluated design point: where the loop queried and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub x: ContinuousPoint,
    pub record: EvaluationRecord,
}

/// Live state of a run.
pub struct RunState {
    pub config: RunConfig,
    pub space: SearchSpace,
    pub history: Vec<HistoryEntry>,
    pub ref_point: Option<(f64, f64)>,
    gp1: Option<GpModel<f64>>,
    gp2: Option<GpModel<f64>>,
    evaluated: HashSet<DecisionVector>,
    candidate_list: Option<Vec<DecisionVector>>,
}

impl RunState {
    pub fn new(config: RunConfig, space: SearchSpace) -> Result<RunState, BoError> {
        config.validate()?;
        let candidate_list = match &config.candidates {
            CandidateSet::Uniform => None,
            CandidateSet::Archs { list } => {
                let mut decisions = Vec::with_capacity(list.len());
                for arch in list {
                    let z = space.decode_arch(arch).map_err(|source| {
                        BoError::CandidateList {
                            arch: arch.clone(),
                            source,
                        }
                    })?;
                    decisions.push(z);
                }
                Some(decisions)
            }
        };
        Ok(RunState {
            config,
            space,
            history: Vec::new(),
            ref_point: None,
            gp1: None,
            gp2: None,
            evaluated: HashSet::new(),
            candidate_list,
        })
    }

    /// Completed optimization iterations (history beyond the initial design).
    pub fn bo_iteration(&self) -> usize {
        self.history.len().saturating_sub(self.config.n_init)
    }

    pub fn push(&mut self, x: ContinuousPoint, record: EvaluationRecord) {
        self.evaluated.insert(record.request.decision);
        self.history.push(HistoryEntry { x, record });
    }

    fn values(&self, objective: Objective) -> Vec<f64> {
        self.history
            .iter()
            .map(|h| h.record.values[&objective])
            .collect()
    }

    pub fn objective_points(&self) -> Vec<ObjectivePoint<f64>> {
        let pair = self.config.objectives;
        self.history
            .iter()
            .map(|h| {
                ObjectivePoint::new(
                    h.record.values[&pair.f1],
                    h.record.values[&pair.f2],
                    h.record.request.arch.clone(),
                )
            })
            .collect()
    }

    /// The archive is always the exact Pareto front of the history.
    pub fn archive(&self) -> Result<ParetoArchive<f64>, BoError> {
        let ref_point = self
            .ref_point
            .expect("reference point set after initialization");
        Ok(ParetoArchive::from_points(
            &self.objective_points(),
            ref_point,
        )?)
    }

    /// Sets the initial reference point from everything observed so far.
    pub fn set_initial_ref(&mut self) {
        let pair = self.config.objectives;
        self.ref_point = Some(reference_point(
            &self.values(pair.f1),
            &self.values(pair.f2),
            self.config.ref_margin,
        ));
    }

    /// True when any observation sits on or beyond the reference point.
    pub fn ref_exceeded(&self) -> bool {
        let Some((r1, r2)) = self.ref_point else {
            return false;
        };
        let pair = self.config.objectives;
        self.history.iter().any(|h| {
            h.record.values[&pair.f1] >= r1 || h.record.values[&pair.f2] >= r2
        })
    }

    /// Re-bases the reference point when an observation falls on or beyond
    /// it. Returns the new point if a re-base happened.
    pub fn rebase_ref_if_exceeded(&mut self) -> Option<(f64, f64)> {
        if self.ref_exceeded() {
            self.set_initial_ref();
            self.ref_point
        } else {
            None
        }
    }

    /// Refits both surrogates from scratch on the full history. Training
    /// inputs are the projection-cell centers of the evaluated decisions:
    /// the objectives are functions of the cell, so the center is the
    /// canonical coordinate and keeps cell-boundary aliasing out of the fit.
    pub fn refit(&mut self) -> Result<(), BoError> {
        let xs: Vec<Vec<f64>> = self
            .history
            .iter()
            .map(|h| {
                self.space
                    .cell_center(&h.record.request.decision)
                    .coords
                    .to_vec()
            })
            .collect();
        let pair = self.config.objectives;
        let evals = self.history.len();
        let fit_one = |ys: Vec<f64>, tag: u64| -> Result<GpModel<f64>, BoError> {
            let config = GpConfig {
                restarts: self.config.gp_restarts,
                seed: derive_seed(self.config.seed, tag, evals as u64),
                ..GpConfig::default()
            };
            gp::fit(xs.clone(), ys, &config).map_err(|source| BoError::Gp { evals, source })
        };
        let gp1 = fit_one(self.values(pair.f1), TAG_GP1)?;
        let gp2 = fit_one(self.values(pair.f2), TAG_GP2)?;
        self.gp1 = Some(gp1);
        self.gp2 = Some(gp2);
        Ok(())
    }

    pub fn surrogates(&self) -> Option<(&GpModel<f64>, &GpModel<f64>)> {
        Some((self.gp1.as_ref()?, self.gp2.as_ref()?))
    }
}

/// Draws the initial design: `n_init` points whose projections are pairwise
/// distinct. Every point gets its own derived seed and up to 100 attempts.
pub fn init_design(
    config: &RunConfig,
    space: &SearchSpace,
    candidate_list: Option<&[DecisionVector]>,
    n: usize,
) -> Result<Vec<ContinuousPoint>, BoError> {
    let mut points = Vec::with_capacity(n);
    let mut used: HashSet<DecisionVector> = HashSet::new();
    let mut halton_index: u64 = 1;
    for j in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_INIT, j as u64));
        let mut accepted = false;
        for _attempt in 0..100 {
            let (x, z) = match candidate_list {
                Some(list) => {
                    let idx = (rng.next_u64() % list.len() as u64) as usize;
                    let z = list[idx];
                    (space.cell_center(&z), z)
                }
                None if config.low_discrepancy_init => {
                    let x = halton_point(halton_index);
                    halton_index += 1;
                    (x, space.project(&x))
                }
                None => {
                    let x = draw_point(&mut rng);
                    (x, space.project(&x))
                }
            };
            if used.insert(z) {
                points.push(x);
                accepted = true;
                break;
            }
        }
        if !accepted {
            // For explicit lists, fall back to the first unused entry before
            // giving up; a uniform draw failing 100 times means the space is
            // effectively smaller than the design.
            if let Some(list) = candidate_list {
                if let Some(z) = list.iter().find(|z| !used.contains(z)) {
                    used.insert(*z);
                    points.push(space.cell_center(z));
                    continue;
                }
            }
            return Err(BoError::InitDesign { needed: n });
        }
    }
    Ok(points)
}

/// Outcome of a proposal: a candidate or proof the space is exhausted.
pub enum Proposal {
    Candidate(ContinuousPoint, DecisionVector),
    Exhausted,
}

/// Scores a seeded candidate pool with EHVI and returns the maximizer.
///
/// Candidates are scored at their projection-cell centers (matching how the
/// surrogates are trained), and duplicate cells inside the pool collapse to
/// one candidate. Ties break toward the lexicographically smallest decision
/// vector.
pub fn propose(state: &RunState) -> Result<Proposal, BoError> {
    let (gp1, gp2) = state
        .surrogates()
        .expect("surrogates fitted before proposing");
    let archive = state.archive()?;
    let cells: Vec<DecisionVector> = match &state.candidate_list {
        Some(list) => list
            .iter()
            .filter(|z| !state.evaluated.contains(z))
            .copied()
            .collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                state.config.seed,
                TAG_POOL,
                state.bo_iteration() as u64,
            ));
            let mut seen = HashSet::new();
            (0..state.config.candidate_pool_size)
                .map(|_| state.space.project(&draw_point(&mut rng)))
                .filter(|z| !state.evaluated.contains(z) && seen.insert(*z))
                .collect()
        }
    };
    if cells.is_empty() {
        return Ok(Proposal::Exhausted);
    }
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|z| {
            let x = state.space.cell_center(z);
            let (m1, v1) = gp1.posterior(&x.coords);
            let (m2, v2) = gp2.posterior(&x.coords);
            moo::ehvi_2d(m1, v1, m2, v2, &archive)
        })
        .collect::<Result<_, _>>()?;
    let mut best = 0usize;
    for i in 1..cells.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && cells[i] < cells[best]) {
            best = i;
        }
    }
    let z = cells[best];
    Ok(Proposal::Candidate(state.space.cell_center(&z), z))
}

pub enum StepOutcome {
    Evaluated,
    Exhausted,
}

fn build_request(
    state: &RunState,
    id: String,
    z: DecisionVector,
) -> Result<EvaluationRequest, BoError> {
    let arch = state.space.encode_arch(&z)?;
    let n_samples = match &state.config.oracle {
        OracleSpec::Subprocess { n_samples, .. } => *n_samples,
        _ => None,
    };
    Ok(EvaluationRequest {
        request_id: id,
        decision: z,
        arch,
        objectives_requested: state.config.objectives.into(),
        n_samples,
    })
}

fn write_refit_and_snapshot(
    state: &RunState,
    writer: &mut EventWriter,
) -> Result<(), BoError> {
    let (gp1, gp2) = state.surrogates().expect("fitted");
    writer.write(EventKind::Refit {
        evals: state.history.len(),
        gp1: gp1.params().clone(),
        gp1_lml: gp1.log_marginal_likelihood(),
        gp2: gp2.params().clone(),
        gp2_lml: gp2.log_marginal_likelihood(),
    })?;
    let archive = state.archive()?;
    writer.write(EventKind::FrontSnapshot {
        evals: state.history.len(),
        ids: archive.ids().iter().map(|s| s.to_string()).collect(),
        hypervolume: moo::hypervolume_2d(&archive),
    })?;
    Ok(())
}

/// One optimization step: propose, evaluate, persist, refit.
pub fn step(
    state: &mut RunState,
    oracle: &dyn Oracle,
    writer: &mut EventWriter,
) -> Result<StepOutcome, BoError> {
    let iteration = state.bo_iteration();
    let (x, z) = match propose(state)? {
        Proposal::Candidate(x, z) => (x, z),
        Proposal::Exhausted => return Ok(StepOutcome::Exhausted),
    };
    let request = build_request(state, format!("bo-{iteration:04}"), z)?;
    let record = oracle::evaluate(oracle, request).map_err(|source| BoError::Oracle {
        iteration: Some(iteration),
        source,
    })?;
    state.push(x, record.clone());
    writer.write(EventKind::BoEval {
        iteration,
        x,
        record,
    })?;
    if let Some(ref_point) = state.rebase_ref_if_exceeded() {
        writer.write(EventKind::RefpointUpdate {
            ref_point,
            trigger: format!("observation bo-{iteration:04} exceeded the reference point"),
        })?;
    }
    state.refit()?;
    write_refit_and_snapshot(state, writer)?;
    Ok(StepOutcome::Evaluated)
}

/// Final outcome of a run (also reconstructable from a log via [`replay`]).
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub space_name: String,
    pub history: Vec<HistoryEntry>,
    pub ref_point: (f64, f64),
    pub archive: ParetoArchive<f64>,
    /// Hypervolume of the prefix front after each evaluation, under the
    /// final reference point.
    pub hv_trace: Vec<(usize, f64)>,
    pub status: String,
}

impl RunReport {
    fn from_state(state: &RunState, status: &str) -> Result<RunReport, BoError> {
        let archive = state.archive()?;
        let ref_point = state.ref_point.expect("reference point set");
        let points = state.objective_points();
        let mut hv_trace = Vec::with_capacity(points.len());
        for k in 1..=points.len() {
            let prefix = ParetoArchive::from_points(&points[..k], ref_point)?;
            hv_trace.push((k, moo::hypervolume_2d(&prefix)));
        }
        Ok(RunReport {
            config: state.config.clone(),
            space_name: state.space.name().to_owned(),
            history: state.history.clone(),
            ref_point,
            archive,
            hv_trace,
            status: status.to_owned(),
        })
    }

    /// Front CSV: `arch,f1,f2,source`, members ascending by f1. Stable
    /// byte-for-byte across runs with the same seed.
    pub fn front_csv(&self) -> String {
        let mut out = String::from("arch,f1,f2,source\n");
        for p in self.archive.points() {
            let source = self
                .history
                .iter()
                .find(|h| h.record.request.arch == p.id)
                .map(|h| h.record.source.to_string())
                .unwrap_or_else(|| "unknown".into());
            out.push_str(&format!("{},{},{},{}\n", p.id, p.f1, p.f2, source));
        }
        out
    }

    /// Hypervolume trace CSV: `evals,hypervolume`, one row per evaluation.
    pub fn hv_csv(&self) -> String {
        let mut out = String::from("evals,hypervolume\n");
        for (k, hv) in &self.hv_trace {
            out.push_str(&format!("{k},{hv}\n"));
        }
        out
    }
}

/// File name of the front CSV inside a run directory.
pub const FRONT_FILE: &str = "front.csv";
/// File name of the hypervolume trace CSV inside a run directory.
pub const HV_TRACE_FILE: &str = "hv_trace.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BoError + '_ {
    move |source| BoError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Loads the space named by a config: the builtin default or a file.
pub fn load_space(config: &RunConfig) -> Result<(SearchSpace, String), BoError> {
    if config.space == "nanosd_default" {
        let space = SearchSpace::nanosd_default();
        let doc = include_str!(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../spaces/nanosd_default"
        ));
        return Ok((space, doc.to_owned()));
    }
    let path = Path::new(&config.space);
    let doc = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok((SearchSpace::parse(&doc)?, doc))
}

/// Builds the oracle a config asks for.
pub fn build_oracle(spec: &OracleSpec, space: &SearchSpace) -> Result<Box<dyn Oracle>, BoError> {
    match spec {
        OracleSpec::Lookup { path } => {
            let doc = std::fs::read_to_string(Path::new(path)).map_err(io_err(Path::new(path)))?;
            let oracle = LookupOracle::parse(&doc).map_err(|source| BoError::Oracle {
                iteration: None,
                source,
            })?;
            Ok(Box::new(oracle))
        }
        OracleSpec::Subprocess {
            command,
            timeout_s,
            n_samples,
        } => {
            let oracle = SubprocessOracle::new(
                command.clone(),
                std::time::Duration::from_secs_f64(*timeout_s),
                *n_samples,
            )
            .map_err(|source| BoError::Oracle {
                iteration: None,
                source,
            })?;
            Ok(Box::new(oracle))
        }
        OracleSpec::Synthetic { benchmark, seed } => {
            let oracle =
                SyntheticOracle::new(benchmark, space, *seed).map_err(|source| BoError::Oracle {
                    iteration: None,
                    source,
                })?;
            Ok(Box::new(oracle))
        }
    }
}

fn now_s() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn run_header(config: &RunConfig, space: &SearchSpace, space_doc: &str) -> EventKind {
    EventKind::RunHeader {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        os: std::env::consts::OS.to_owned(),
        arch: std::env::consts::ARCH.to_owned(),
        config: config.clone(),
        space_name: space.name().to_owned(),
        space_doc: space_doc.to_owned(),
        cardinality: space.cardinality().to_string(),
        timestamp: now_s(),
    }
}

/// Executes the remaining budget of an initialized run. Shared by `run` and
/// `resume`.
fn drive_to_completion(
    state: &mut RunState,
    oracle: &dyn Oracle,
    writer: &mut EventWriter,
) -> Result<RunReport, BoError> {
    let mut status = "completed";
    while state.bo_iteration() < state.config.n_iter {
        match step(state, oracle, writer) {
            Ok(StepOutcome::Evaluated) => {}
            Ok(StepOutcome::Exhausted) => {
                status = "exhausted";
                break;
            }
            Err(e) => {
                let _ = writer.write(EventKind::RunEnd {
                    status: format!("error: {e}"),
                    total_evals: state.history.len(),
                    timestamp: now_s(),
                });
                return Err(e);
            }
        }
    }
    writer.write(EventKind::RunEnd {
        status: status.to_owned(),
        total_evals: state.history.len(),
        timestamp: now_s(),
    })?;
    RunReport::from_state(state, status)
}

fn write_outputs(out_dir: &Path, report: &RunReport) -> Result<(), BoError> {
    let front_path = out_dir.join(FRONT_FILE);
    std::fs::write(&front_path, report.front_csv()).map_err(io_err(&front_path))?;
    let hv_path = out_dir.join(HV_TRACE_FILE);
    std::fs::write(&hv_path, report.hv_csv()).map_err(io_err(&hv_path))?;
    Ok(())
}

/// Runs a fresh experiment into `out_dir` (event log plus front and
/// hypervolume CSVs). The config must already have resolved paths.
pub fn run(config: RunConfig, out_dir: &Path) -> Result<RunReport, BoError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let _lock = LockGuard::acquire(out_dir)?;
    let (space, space_doc) = load_space(&config)?;
    let oracle = build_oracle(&config.oracle, &space)?;
    let log_path = out_dir.join(log::LOG_FILE);
    let mut writer = EventWriter::create(&log_path)?;
    writer.write(run_header(&config, &space, &space_doc))?;

    let mut state = RunState::new(config, space)?;
    let points = init_design(
        &state.config,
        &state.space,
        state.candidate_list.as_deref(),
        state.config.n_init,
    )?;
    for (index, x) in points.into_iter().enumerate() {
        let z = match state.candidate_list.as_deref() {
            Some(_) => state.space.project(&x),
            None => state.space.project(&x),
        };
        let request = build_request(&state, format!("init-{index:04}"), z)?;
        let record = oracle::evaluate(oracle.as_ref(), request).map_err(|source| {
            let e = BoError::Oracle {
                iteration: None,
                source,
            };
            let _ = writer.write(EventKind::RunEnd {
                status: format!("error: {e}"),
                total_evals: state.history.len(),
                timestamp: now_s(),
            });
            e
        })?;
        state.push(x, record.clone());
        writer.write(EventKind::InitEval { index, x, record })?;
    }
    state.set_initial_ref();
    writer.write(EventKind::RefpointUpdate {
        ref_point: state.ref_point.expect("just set"),
        trigger: "initialization".into(),
    })?;
    state.refit()?;
    write_refit_and_snapshot(&state, &mut writer)?;

    let report = drive_to_completion(&mut state, oracle.as_ref(), &mut writer)?;
    write_outputs(out_dir, &report)?;
    Ok(report)
}

/// What a log fold yields: the echoed config, rebuilt state, and whether the
/// log already carries a run_end.
struct FoldedLog {
    state: RunState,
    finished: Option<String>,
}

fn fold_events(events: &[RunEvent]) -> Result<FoldedLog, BoError> {
    let header = log::header_of(events)?;
    let (config, space) = match header {
        EventKind::RunHeader {
            config, space_doc, ..
        } => (config.clone(), SearchSpace::parse(space_doc)?),
        _ => unreachable!("header_of returned a non-header"),
    };
    let mut state = RunState::new(config, space)?;
    let mut finished = None;
    for event in &events[1..] {
        match &event.event {
            EventKind::InitEval { x, record, .. } | EventKind::BoEval { x, record, .. } => {
                state.push(*x, record.clone());
            }
            EventKind::RefpointUpdate { ref_point, .. } => {
                state.ref_point = Some(*ref_point);
            }
            EventKind::RunEnd { status, .. } => {
                finished = Some(status.clone());
            }
            EventKind::RunHeader { .. }
            | EventKind::Refit { .. }
            | EventKind::FrontSnapshot { .. } => {}
        }
    }
    Ok(FoldedLog { state, finished })
}

/// Reconstructs the final report strictly from the event log. Never builds
/// or invokes an oracle.
pub fn replay(out_dir: &Path) -> Result<RunReport, BoError> {
    let outcome = log::read_events(&out_dir.join(log::LOG_FILE), true)?;
    let mut folded = fold_events(&outcome.events)?;
    if folded.state.history.is_empty() {
        return Err(BoError::EmptyLog);
    }
    // A truncated tail can end on an evaluation whose refpoint_update was
    // lost; recompute so the report stays well-formed.
    folded.state.rebase_ref_if_exceeded();
    let status = folded.finished.unwrap_or_else(|| "incomplete".into());
    RunReport::from_state(&folded.state, &status)
}

/// Continues an interrupted run to completion. A partial trailing line left
/// by a killed writer is truncated away; the continuation reproduces exactly
/// what the uninterrupted run would have done.
pub fn resume(out_dir: &Path) -> Result<RunReport, BoError> {
    let _lock = LockGuard::acquire(out_dir)?;
    let log_path = out_dir.join(log::LOG_FILE);
    let outcome = log::read_events(&log_path, true)?;
    let mut folded = fold_events(&outcome.events)?;
    if let Some(status) = folded.finished {
        // Nothing to do; recompute outputs from the log.
        let report = RunReport::from_state(&folded.state, &status)?;
        write_outputs(out_dir, &report)?;
        return Ok(report);
    }
    let mut writer = EventWriter::append_after(&log_path, &outcome.events)?;
    let state = &mut folded.state;
    let oracle = build_oracle(&state.config.oracle, &state.space)?;

    // Finish initialization if the kill landed inside it.
    if state.history.len() < state.config.n_init {
        let points = init_design(
            &state.config,
            &state.space,
            state.candidate_list.as_deref(),
            state.config.n_init,
        )?;
        for (index, x) in points.into_iter().enumerate().skip(state.history.len()) {
            let z = state.space.project(&x);
            let request = build_request(state, format!("init-{index:04}"), z)?;
            let record =
                oracle::evaluate(oracle.as_ref(), request).map_err(|source| BoError::Oracle {
                    iteration: None,
                    source,
                })?;
            state.push(x, record.clone());
            writer.write(EventKind::InitEval { index, x, record })?;
        }
    }
    if state.ref_point.is_none() {
        state.set_initial_ref();
        writer.write(EventKind::RefpointUpdate {
            ref_point: state.ref_point.expect("just set"),
            trigger: "initialization (resumed)".into(),
        })?;
    } else if let Some(ref_point) = state.rebase_ref_if_exceeded() {
        // The interrupted writer evaluated past the reference point but the
        // kill landed before the matching refpoint_update line.
        writer.write(EventKind::RefpointUpdate {
            ref_point,
            trigger: "rebase recovered on resume".into(),
        })?;
    }
    state.refit()?;
    let report = drive_to_completion(state, oracle.as_ref(), &mut writer)?;
    write_outputs(out_dir, &report)?;
    Ok(report)
}
