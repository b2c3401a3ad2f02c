//! Stage-wise discrete architecture space.
//!
//! A backbone is described by one block variant per retained stage, in the
//! fixed order E1, E2, E3, D3, D2, D1. Variants are short token strings over
//! the alphabet `{R, A}` (residual / attention modules). The optimizer works
//! on a continuous relaxation of the index space and projects back onto the
//! grid with a deterministic thresholding rule.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of searchable stages.
pub const STAGE_COUNT: usize = 6;

/// One of the six retained U-Net stages, ordinal 0..6 in the canonical
/// serialization order E1, E2, E3, D3, D2, D1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StageId(u8);

impl StageId {
    pub const ALL: [StageId; STAGE_COUNT] = [
        StageId(0),
        StageId(1),
        StageId(2),
        StageId(3),
        StageId(4),
        StageId(5),
    ];
    const NAMES: [&'static str; STAGE_COUNT] = ["E1", "E2", "E3", "D3", "D2", "D1"];

    pub fn from_ordinal(ordinal: usize) -> Option<StageId> {
        (ordinal < STAGE_COUNT).then_some(StageId(ordinal as u8))
    }

    pub fn from_name(name: &str) -> Option<StageId> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| StageId(i as u8))
    }

    pub fn ordinal(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.ordinal()]
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for StageId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        StageId::from_name(&s).ok_or_else(|| format!("unknown stage id `{s}`"))
    }
}

impl From<StageId> for String {
    fn from(s: StageId) -> String {
        s.name().to_owned()
    }
}

/// Module token inside a block variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Residual,
    Attention,
}

impl Token {
    fn from_char(c: char) -> Option<Token> {
        match c {
            'R' => Some(Token::Residual),
            'A' => Some(Token::Attention),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Token::Residual => 'R',
            Token::Attention => 'A',
        }
    }
}

/// A shape-preserving block variant: a non-empty token sequence starting
/// with a residual module, e.g. `RARA`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockVariant {
    tokens: Vec<Token>,
    label: String,
    is_teacher: bool,
}

impl BlockVariant {
    /// Parses a label such as `"RRA"`. The label must be non-empty, use only
    /// the `{R, A}` alphabet and begin with `R`.
    pub fn parse(label: &str, is_teacher: bool) -> Result<BlockVariant, SpaceError> {
        if label.is_empty() {
            return Err(SpaceError::EmptyVariantLabel);
        }
        let mut tokens = Vec::with_capacity(label.len());
        for c in label.chars() {
            let tok = Token::from_char(c).ok_or(SpaceError::UnknownToken {
                token: c,
                label: label.to_owned(),
            })?;
            tokens.push(tok);
        }
        if tokens[0] != Token::Residual {
            return Err(SpaceError::VariantMustStartWithResidual {
                label: label.to_owned(),
            });
        }
        Ok(BlockVariant {
            tokens,
            label: label.to_owned(),
            is_teacher,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_teacher(&self) -> bool {
        self.is_teacher
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        debug_assert!(self.label.chars().eq(self.tokens.iter().map(|t| t.as_char())));
        f.write_str(&self.label)
    }
}

/// The discrete design space: an ordered variant list per stage.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    name: String,
    variants: [Vec<BlockVariant>; STAGE_COUNT],
}

/// Decision vector `z`: one variant index per stage. Only meaningful with
/// respect to the space it was produced for. Serializes as a bare array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionVector {
    pub indices: [usize; STAGE_COUNT],
}

impl DecisionVector {
    pub fn new(indices: [usize; STAGE_COUNT]) -> DecisionVector {
        DecisionVector { indices }
    }
}

/// Relaxed representation `x` in the closed unit cube. Serializes as a bare
/// array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContinuousPoint {
    pub coords: [f64; STAGE_COUNT],
}

impl ContinuousPoint {
    pub fn new(coords: [f64; STAGE_COUNT]) -> Result<ContinuousPoint, SpaceError> {
        for (i, c) in coords.iter().enumerate() {
            if !c.is_finite() || *c < 0.0 || *c > 1.0 {
                return Err(SpaceError::CoordinateOutOfRange { axis: i, value: *c });
            }
        }
        Ok(ContinuousPoint { coords })
    }
}

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("space config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("variant label is empty")]
    EmptyVariantLabel,
    #[error("unknown token `{token}` in variant label `{label}` (alphabet is R, A)")]
    UnknownToken { token: char, label: String },
    #[error("variant `{label}` must start with a residual module (R)")]
    VariantMustStartWithResidual { label: String },
    #[error("stage {stage}: duplicate variant label `{label}`")]
    DuplicateLabel { stage: StageId, label: String },
    #[error("stage {stage} has an empty variant list")]
    EmptyStage { stage: StageId },
    #[error("missing stage {0} in space config")]
    MissingStage(StageId),
    #[error("stage {0} listed more than once in space config")]
    DuplicateStage(StageId),
    #[error("expected {STAGE_COUNT} stages, found {0}")]
    WrongStageCount(usize),
    #[error("coordinate {axis} = {value} outside [0, 1]")]
    CoordinateOutOfRange { axis: usize, value: f64 },
    #[error("index {index} out of range for stage {stage} ({count} variants)")]
    IndexOutOfRange {
        stage: StageId,
        index: usize,
        count: usize,
    },
    #[error("architecture string has {found} segments, expected {STAGE_COUNT}")]
    WrongSegmentCount { found: usize },
    #[error("unknown label `{label}` at stage {stage}")]
    UnknownLabel { stage: StageId, label: String },
    #[error("cardinality {cardinality} exceeds enumeration cap {cap}")]
    EnumerationCapExceeded { cardinality: u128, cap: u128 },
}

#[derive(Deserialize)]
struct SpaceDoc {
    name: String,
    stages: Vec<StageDoc>,
}

#[derive(Deserialize)]
struct StageDoc {
    id: String,
    variants: Vec<VariantDoc>,
}

#[derive(Deserialize)]
struct VariantDoc {
    label: String,
    #[serde(default)]
    teacher: bool,
}

const NANOSD_DEFAULT: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../spaces/nanosd_default"));

impl SearchSpace {
    /// Parses a space config document (JSON with `name` and an ordered
    /// `stages` list). All six stages must be present exactly once.
    pub fn parse(document: &str) -> Result<SearchSpace, SpaceError> {
        let doc: SpaceDoc = serde_json::from_str(document)?;
        if doc.stages.len() != STAGE_COUNT {
            return Err(SpaceError::WrongStageCount(doc.stages.len()));
        }
        let mut variants: [Option<Vec<BlockVariant>>; STAGE_COUNT] = Default::default();
        for stage_doc in &doc.stages {
            let stage = StageId::from_name(&stage_doc.id).ok_or_else(|| {
                SpaceError::UnknownLabel {
                    stage: StageId(0),
                    label: stage_doc.id.clone(),
                }
            })?;
            if variants[stage.ordinal()].is_some() {
                return Err(SpaceError::DuplicateStage(stage));
            }
            if stage_doc.variants.is_empty() {
                return Err(SpaceError::EmptyStage { stage });
            }
            let mut list = Vec::with_capacity(stage_doc.variants.len());
            for v in &stage_doc.variants {
                let variant = BlockVariant::parse(&v.label, v.teacher)?;
                if list.iter().any(|x: &BlockVariant| x.label() == variant.label()) {
                    return Err(SpaceError::DuplicateLabel {
                        stage,
                        label: v.label.clone(),
                    });
                }
                list.push(variant);
            }
            variants[stage.ordinal()] = Some(list);
        }
        for (i, slot) in variants.iter().enumerate() {
            if slot.is_none() {
                return Err(SpaceError::MissingStage(StageId(i as u8)));
            }
        }
        Ok(SearchSpace {
            name: doc.name,
            variants: variants.map(|v| v.unwrap()),
        })
    }

    /// The bundled default space: 4 encoder variants and 8 decoder variants
    /// per stage, 32,768 architectures in total.
    pub fn nanosd_default() -> SearchSpace {
        SearchSpace::parse(NANOSD_DEFAULT).expect("bundled default space is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn variants(&self, stage: StageId) -> &[BlockVariant] {
        &self.variants[stage.ordinal()]
    }

    /// Variant count for one stage.
    pub fn count(&self, stage: StageId) -> usize {
        self.variants[stage.ordinal()].len()
    }

    pub fn counts(&self) -> [usize; STAGE_COUNT] {
        StageId::ALL.map(|s| self.count(s))
    }

    /// Total number of architectures: the product of per-stage counts.
    pub fn cardinality(&self) -> u128 {
        self.variants.iter().map(|v| v.len() as u128).product()
    }

    /// Checks that every index selects an existing variant.
    pub fn validate(&self, z: &DecisionVector) -> Result<(), SpaceError> {
        for stage in StageId::ALL {
            let count = self.count(stage);
            let index = z.indices[stage.ordinal()];
            if index >= count {
                return Err(SpaceError::IndexOutOfRange { stage, index, count });
            }
        }
        Ok(())
    }

    /// Deterministic thresholding projection: each coordinate is mapped to
    /// `min(floor(x * count), count - 1)`. Total over the whole unit cube.
    pub fn project(&self, x: &ContinuousPoint) -> DecisionVector {
        let mut indices = [0usize; STAGE_COUNT];
        for stage in StageId::ALL {
            let n = self.count(stage);
            let scaled = (x.coords[stage.ordinal()] * n as f64).floor() as usize;
            indices[stage.ordinal()] = scaled.min(n - 1);
        }
        DecisionVector { indices }
    }

    /// Center of the projection cell a decision vector occupies; projecting
    /// the center recovers the same vector.
    pub fn cell_center(&self, z: &DecisionVector) -> ContinuousPoint {
        let mut coords = [0.0f64; STAGE_COUNT];
        for stage in StageId::ALL {
            let n = self.count(stage) as f64;
            coords[stage.ordinal()] = (z.indices[stage.ordinal()] as f64 + 0.5) / n;
        }
        ContinuousPoint { coords }
    }

    /// Serializes a decision vector as pipe-joined stage labels, e.g.
    /// `R|RA|RA|RARA|RARA|RR`.
    pub fn encode_arch(&self, z: &DecisionVector) -> Result<String, SpaceError> {
        self.validate(z)?;
        let labels: Vec<&str> = StageId::ALL
            .iter()
            .map(|s| self.variants[s.ordinal()][z.indices[s.ordinal()]].label())
            .collect();
        Ok(labels.join("|"))
    }

    /// Inverse of [`encode_arch`](Self::encode_arch).
    pub fn decode_arch(&self, s: &str) -> Result<DecisionVector, SpaceError> {
        let segments: Vec<&str> = s.split('|').collect();
        if segments.len() != STAGE_COUNT {
            return Err(SpaceError::WrongSegmentCount {
                found: segments.len(),
            });
        }
        let mut indices = [0usize; STAGE_COUNT];
        for stage in StageId::ALL {
            let label = segments[stage.ordinal()];
            let index = self.variants[stage.ordinal()]
                .iter()
                .position(|v| v.label() == label)
                .ok_or_else(|| SpaceError::UnknownLabel {
                    stage,
                    label: label.to_owned(),
                })?;
            indices[stage.ordinal()] = index;
        }
        Ok(DecisionVector { indices })
    }

    /// Iterates every decision vector in lexicographic order. Refuses spaces
    /// larger than `cap` (pass [`DEFAULT_ENUMERATION_CAP`] for the default).
    pub fn enumerate(&self, cap: u128) -> Result<Enumerate<'_>, SpaceError> {
        let cardinality = self.cardinality();
        if cardinality > cap {
            return Err(SpaceError::EnumerationCapExceeded { cardinality, cap });
        }
        Ok(Enumerate {
            space: self,
            next: Some(DecisionVector::new([0; STAGE_COUNT])),
        })
    }
}

/// Default cap for [`SearchSpace::enumerate`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Lexicographic iterator over all decision vectors of a space.
pub struct Enumerate<'a> {
    space: &'a SearchSpace,
    next: Option<DecisionVector>,
}

impl Iterator for Enumerate<'_> {
    type Item = DecisionVector;

    fn next(&mut self) -> Option<DecisionVector> {
        let current = self.next?;
        // Advance like a mixed-radix counter, most significant stage first.
        let mut indices = current.indices;
        let mut stage = STAGE_COUNT;
        loop {
            if stage == 0 {
                self.next = None;
                break;
            }
            stage -= 1;
            indices[stage] += 1;
            if indices[stage] < self.space.count(StageId::ALL[stage]) {
                self.next = Some(DecisionVector { indices });
                break;
            }
            indices[stage] = 0;
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space_with_counts(counts: [usize; STAGE_COUNT]) -> SearchSpace {
        // Labels R, RA, RAA, ... all start with R and are unique per stage.
        let stages: Vec<serde_json::Value> = StageId::ALL
            .iter()
            .map(|s| {
                let variants: Vec<serde_json::Value> = (0..counts[s.ordinal()])
                    .map(|i| {
                        let label = format!("R{}", "A".repeat(i));
                        serde_json::json!({ "label": label })
                    })
                    .collect();
                serde_json::json!({ "id": s.name(), "variants": variants })
            })
            .collect();
        let doc = serde_json::json!({ "name": "synthetic", "stages": stages });
        SearchSpace::parse(&doc.to_string()).unwrap()
    }

    #[test]
    fn default_space_cardinality() {
        let space = SearchSpace::nanosd_default();
        assert_eq!(space.counts(), [4, 4, 4, 8, 8, 8]);
        assert_eq!(space.cardinality(), 32_768);
    }

    #[test]
    fn degenerate_space_cardinality() {
        let space = space_with_counts([1; 6]);
        assert_eq!(space.cardinality(), 1);
    }

    #[test]
    fn supp_table_only_space_cardinality() {
        // Encoder stages without the teacher block: 3 * 3 * 3 * 8 * 8 * 8.
        let space = space_with_counts([3, 3, 3, 8, 8, 8]);
        assert_eq!(space.cardinality(), 13_824);
    }

    #[test]
    fn mixed_counts_cardinality() {
        let space = space_with_counts([2, 3, 4, 5, 6, 7]);
        assert_eq!(space.cardinality(), 5_040);
    }

    #[test]
    fn project_boundaries() {
        let space = SearchSpace::nanosd_default();
        let lo = space.project(&ContinuousPoint::new([0.0; 6]).unwrap());
        assert_eq!(lo.indices, [0, 0, 0, 0, 0, 0]);
        let hi = space.project(&ContinuousPoint::new([1.0; 6]).unwrap());
        assert_eq!(hi.indices, [3, 3, 3, 7, 7, 7]);
    }

    #[test]
    fn project_floor_formula() {
        let space = SearchSpace::nanosd_default();
        let x = ContinuousPoint::new([0.49, 0.51, 0.26, 0.12, 0.88, 0.99]).unwrap();
        assert_eq!(space.project(&x).indices, [1, 2, 1, 0, 7, 7]);
    }

    #[test]
    fn encode_known_rows() {
        let space = SearchSpace::nanosd_default();
        let z = space.decode_arch("R|RA|RA|RARA|RARA|RR").unwrap();
        assert_eq!(z.indices, [0, 1, 1, 7, 7, 2]);
        assert_eq!(space.encode_arch(&z).unwrap(), "R|RA|RA|RARA|RARA|RR");

        let z5 = space.decode_arch("R|R|R|RA|RR|RR").unwrap();
        assert_eq!(space.encode_arch(&z5).unwrap(), "R|R|R|RA|RR|RR");

        let all_zero = DecisionVector::new([0; 6]);
        assert_eq!(space.encode_arch(&all_zero).unwrap(), "R|R|R|R|R|R");
        assert_eq!(space.decode_arch("R|R|R|R|R|R").unwrap(), all_zero);
    }

    #[test]
    fn decode_rejects_unknown_label() {
        let space = SearchSpace::nanosd_default();
        let err = space.decode_arch("R|XX|R|R|R|R").unwrap_err();
        match err {
            SpaceError::UnknownLabel { stage, label } => {
                assert_eq!(stage.name(), "E2");
                assert_eq!(label, "XX");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn decode_rejects_wrong_segment_count() {
        let space = SearchSpace::nanosd_default();
        assert!(matches!(
            space.decode_arch("R|R|R"),
            Err(SpaceError::WrongSegmentCount { found: 3 })
        ));
    }

    #[test]
    fn enumerate_default_space() {
        let space = SearchSpace::nanosd_default();
        let mut seen = std::collections::HashSet::new();
        for z in space.enumerate(DEFAULT_ENUMERATION_CAP).unwrap() {
            assert!(seen.insert(z), "duplicate vector {z:?}");
        }
        assert_eq!(seen.len(), 32_768);
    }

    #[test]
    fn enumerate_binary_space_order() {
        let space = space_with_counts([2; 6]);
        let all: Vec<DecisionVector> = space.enumerate(DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all.len(), 64);
        assert_eq!(all[0].indices, [0, 0, 0, 0, 0, 0]);
        assert_eq!(all[1].indices, [0, 0, 0, 0, 0, 1]);
        assert_eq!(all[63].indices, [1, 1, 1, 1, 1, 1]);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted, "enumeration is lexicographic");
    }

    #[test]
    fn enumerate_single_vector() {
        let space = space_with_counts([1; 6]);
        let all: Vec<_> = space.enumerate(DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all, vec![DecisionVector::new([0; 6])]);
    }

    #[test]
    fn enumerate_cap_enforced() {
        let space = SearchSpace::nanosd_default();
        assert!(matches!(
            space.enumerate(100),
            Err(SpaceError::EnumerationCapExceeded { .. })
        ));
    }

    #[test]
    fn parse_rejects_duplicate_label() {
        let stages: Vec<serde_json::Value> = StageId::ALL
            .iter()
            .map(|s| {
                serde_json::json!({
                    "id": s.name(),
                    "variants": [{"label": "R"}, {"label": "R"}]
                })
            })
            .collect();
        let doc = serde_json::json!({ "name": "bad", "stages": stages });
        assert!(matches!(
            SearchSpace::parse(&doc.to_string()),
            Err(SpaceError::DuplicateLabel { .. })
        ));
    }

    #[test]
    fn parse_rejects_bad_token() {
        assert!(matches!(
            BlockVariant::parse("RX", false),
            Err(SpaceError::UnknownToken { token: 'X', .. })
        ));
        assert!(matches!(
            BlockVariant::parse("AR", false),
            Err(SpaceError::VariantMustStartWithResidual { .. })
        ));
        assert!(matches!(
            BlockVariant::parse("", false),
            Err(SpaceError::EmptyVariantLabel)
        ));
    }

    #[test]
    fn parse_rejects_missing_stage() {
        let stages: Vec<serde_json::Value> = ["E1", "E2", "E3", "D3", "D2", "D2"]
            .iter()
            .map(|id| {
                serde_json::json!({
                    "id": id,
                    "variants": [{"label": "R"}]
                })
            })
            .collect();
        let doc = serde_json::json!({ "name": "bad", "stages": stages });
        assert!(matches!(
            SearchSpace::parse(&doc.to_string()),
            Err(SpaceError::DuplicateStage(_))
        ));
    }

    #[test]
    fn teacher_flags_present_in_default() {
        let space = SearchSpace::nanosd_default();
        for stage in StageId::ALL {
            let teachers: Vec<&BlockVariant> = space
                .variants(stage)
                .iter()
                .filter(|v| v.is_teacher())
                .collect();
            assert_eq!(teachers.len(), 1, "stage {stage} has one teacher block");
            assert_eq!(teachers[0].label(), "RARA");
        }
    }

    #[test]
    fn projection_idempotent_on_cell_centers() {
        let space = SearchSpace::nanosd_default();
        let x = ContinuousPoint::new([0.3, 0.9, 0.0, 0.5, 0.77, 1.0]).unwrap();
        let z = space.project(&x);
        assert_eq!(space.project(&space.cell_center(&z)), z);
    }
}
