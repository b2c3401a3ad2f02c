//! Block-level device cost profiles and whole-architecture estimates.
//!
//! A profile maps `(stage, variant)` to measured latency (and optionally
//! parameter count) for one device and numeric precision. Whole-model
//! estimates compose additively: a fixed overhead plus the six selected
//! block entries. The composition is a ranking model, not a cycle-accurate
//! one, so ordinal agreement with measured whole-model numbers is what the
//! checks assert ([`rank_consistency`]).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::space::{DecisionVector, SearchSpace, SpaceError, StageId};

/// Measured cost of a single block variant on one device.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEntry {
    pub stage: StageId,
    pub label: String,
    pub latency_ms: f64,
    pub params_m: Option<f64>,
}

/// A per-block cost profile for one device and precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub device: String,
    pub precision: String,
    pub fixed_overhead_ms: f64,
    entries: BTreeMap<(StageId, String), CostEntry>,
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown stage id `{stage}`")]
    UnknownStage { line: usize, stage: String },
    #[error("line {line}: duplicate entry for ({stage}, {label})")]
    DuplicateEntry {
        line: usize,
        stage: StageId,
        label: String,
    },
    #[error("line {line}: negative value {value} for {column}")]
    NegativeValue {
        line: usize,
        column: &'static str,
        value: f64,
    },
    #[error("no entry for ({stage}, {label}) in profile `{device}`")]
    MissingEntry {
        stage: StageId,
        label: String,
        device: String,
    },
    #[error("entry ({stage}, {label}) in profile `{device}` has no params_m")]
    MissingParams {
        stage: StageId,
        label: String,
        device: String,
    },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("rank consistency needs identical key sets; `{key}` is missing from one side")]
    KeySetMismatch { key: String },
    #[error("rank consistency needs at least 3 paired values, got {0}")]
    TooFewPoints(usize),
    #[error("rank consistency undefined: one side is constant across all keys")]
    ConstantValues,
}

impl CostTable {
    pub fn new(device: &str, precision: &str, fixed_overhead_ms: f64) -> CostTable {
        CostTable {
            device: device.to_owned(),
            precision: precision.to_owned(),
            fixed_overhead_ms,
            entries: BTreeMap::new(),
        }
    }

    /// Parses a profile document. Metadata lives in `# key=value` comment
    /// lines (`device`, `precision`, `overhead_ms`); other `#` lines are
    /// free-form comments. The first data line must be the header
    /// `stage,label,latency_ms[,params_m]`, followed by one row per entry.
    pub fn parse(document: &str) -> Result<CostTable, CostError> {
        let mut table = CostTable::new("unknown", "unknown", 0.0);
        let mut header: Option<Vec<String>> = None;
        for (idx, raw) in document.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some((key, value)) = comment.split_once('=') {
                    match key.trim() {
                        "device" => table.device = value.trim().to_owned(),
                        "precision" => table.precision = value.trim().to_owned(),
                        "overhead_ms" => {
                            let v: f64 = value.trim().parse().map_err(|_| CostError::Malformed {
                                line: line_no,
                                message: format!("overhead_ms `{}` is not a number", value.trim()),
                            })?;
                            if v < 0.0 {
                                return Err(CostError::NegativeValue {
                                    line: line_no,
                                    column: "overhead_ms",
                                    value: v,
                                });
                            }
                            table.fixed_overhead_ms = v;
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match &header {
                None => {
                    if fields.len() < 3
                        || fields[0] != "stage"
                        || fields[1] != "label"
                        || fields[2] != "latency_ms"
                        || (fields.len() == 4 && fields[3] != "params_m")
                        || fields.len() > 4
                    {
                        return Err(CostError::Malformed {
                            line: line_no,
                            message: format!(
                                "expected header `stage,label,latency_ms[,params_m]`, got `{line}`"
                            ),
                        });
                    }
                    header = Some(fields.iter().map(|s| s.to_string()).collect());
                }
                Some(cols) => {
                    if fields.len() != cols.len() && !(fields.len() == 3 && cols.len() == 4) {
                        return Err(CostError::Malformed {
                            line: line_no,
                            message: format!(
                                "expected {} fields, got {}",
                                cols.len(),
                                fields.len()
                            ),
                        });
                    }
                    let stage = StageId::from_name(fields[0]).ok_or_else(|| {
                        CostError::UnknownStage {
                            line: line_no,
                            stage: fields[0].to_owned(),
                        }
                    })?;
                    let label = fields[1].to_owned();
                    let latency_ms: f64 =
                        fields[2].parse().map_err(|_| CostError::Malformed {
                            line: line_no,
                            message: format!("latency `{}` is not a number", fields[2]),
                        })?;
                    if latency_ms < 0.0 {
                        return Err(CostError::NegativeValue {
                            line: line_no,
                            column: "latency_ms",
                            value: latency_ms,
                        });
                    }
                    let params_m = if fields.len() == 4 && !fields[3].is_empty() {
                        let v: f64 = fields[3].parse().map_err(|_| CostError::Malformed {
                            line: line_no,
                            message: format!("params `{}` is not a number", fields[3]),
                        })?;
                        if v < 0.0 {
                            return Err(CostError::NegativeValue {
                                line: line_no,
                                column: "params_m",
                                value: v,
                            });
                        }
                        Some(v)
                    } else {
                        None
                    };
                    let key = (stage, label.clone());
                    if table.entries.contains_key(&key) {
                        return Err(CostError::DuplicateEntry {
                            line: line_no,
                            stage,
                            label,
                        });
                    }
                    table.entries.insert(
                        key,
                        CostEntry {
                            stage,
                            label,
                            latency_ms,
                            params_m,
                        },
                    );
                }
            }
        }
        if header.is_none() && !table.entries.is_empty() {
            unreachable!("entries imply a header");
        }
        Ok(table)
    }

    /// Serializes back to the profile format; `parse` of the output yields
    /// an equal table.
    pub fn serialize(&self) -> String {
        let has_params = self.entries.values().any(|e| e.params_m.is_some());
        let mut out = String::new();
        out.push_str(&format!("# device={}\n", self.device));
        out.push_str(&format!("# precision={}\n", self.precision));
        out.push_str(&format!("# overhead_ms={}\n", self.fixed_overhead_ms));
        out.push_str(if has_params {
            "stage,label,latency_ms,params_m\n"
        } else {
            "stage,label,latency_ms\n"
        });
        for entry in self.entries.values() {
            match (has_params, entry.params_m) {
                (true, Some(p)) => out.push_str(&format!(
                    "{},{},{},{}\n",
                    entry.stage, entry.label, entry.latency_ms, p
                )),
                (true, None) => out.push_str(&format!(
                    "{},{},{},\n",
                    entry.stage, entry.label, entry.latency_ms
                )),
                (false, _) => out.push_str(&format!(
                    "{},{},{}\n",
                    entry.stage, entry.label, entry.latency_ms
                )),
            }
        }
        out
    }

    pub fn insert(&mut self, entry: CostEntry) -> Result<(), CostError> {
        let key = (entry.stage, entry.label.clone());
        if self.entries.contains_key(&key) {
            return Err(CostError::DuplicateEntry {
                line: 0,
                stage: entry.stage,
                label: entry.label,
            });
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn get(&self, stage: StageId, label: &str) -> Option<&CostEntry> {
        self.entries.get(&(stage, label.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when every `(stage, variant)` of the space has an entry.
    pub fn is_complete_for(&self, space: &SearchSpace) -> bool {
        StageId::ALL.iter().all(|&stage| {
            space
                .variants(stage)
                .iter()
                .all(|v| self.get(stage, v.label()).is_some())
        })
    }

    fn selected_entry(
        &self,
        z: &DecisionVector,
        space: &SearchSpace,
        stage: StageId,
    ) -> Result<&CostEntry, CostError> {
        let label = space.variants(stage)[z.indices[stage.ordinal()]].label();
        self.get(stage, label).ok_or_else(|| CostError::MissingEntry {
            stage,
            label: label.to_owned(),
            device: self.device.clone(),
        })
    }

    /// Composed latency estimate: fixed overhead plus the sum of the six
    /// selected block latencies.
    pub fn estimate_latency(
        &self,
        z: &DecisionVector,
        space: &SearchSpace,
    ) -> Result<f64, CostError> {
        space.validate(z)?;
        let mut total = self.fixed_overhead_ms;
        for stage in StageId::ALL {
            total += self.selected_entry(z, space, stage)?.latency_ms;
        }
        Ok(total)
    }

    /// Composed parameter estimate in millions, same shape as
    /// [`estimate_latency`](Self::estimate_latency) over `params_m`.
    pub fn estimate_params(
        &self,
        z: &DecisionVector,
        space: &SearchSpace,
    ) -> Result<f64, CostError> {
        space.validate(z)?;
        let mut total = 0.0;
        for stage in StageId::ALL {
            let entry = self.selected_entry(z, space, stage)?;
            let params = entry.params_m.ok_or_else(|| CostError::MissingParams {
                stage,
                label: entry.label.clone(),
                device: self.device.clone(),
            })?;
            total += params;
        }
        Ok(total)
    }
}

/// Average rank of each value, ties sharing the mean of their rank range.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tie group gets the mean rank of its span.
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation between two keyed value maps, with average-rank
/// tie handling. Requires identical key sets of at least 3 keys.
pub fn rank_consistency(
    estimates: &BTreeMap<String, f64>,
    measured: &BTreeMap<String, f64>,
) -> Result<f64, CostError> {
    for key in estimates.keys() {
        if !measured.contains_key(key) {
            return Err(CostError::KeySetMismatch { key: key.clone() });
        }
    }
    for key in measured.keys() {
        if !estimates.contains_key(key) {
            return Err(CostError::KeySetMismatch { key: key.clone() });
        }
    }
    let n = estimates.len();
    if n < 3 {
        return Err(CostError::TooFewPoints(n));
    }
    let a: Vec<f64> = estimates.values().copied().collect();
    let b: Vec<f64> = estimates.keys().map(|k| measured[k]).collect();
    let ra = average_ranks(&a);
    let rb = average_ranks(&b);
    let mean = (n as f64 + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..n {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(CostError::ConstantValues);
    }
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// A row of a model reference table: optional display name, architecture
/// string, and named objective values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model: Option<String>,
    pub arch: String,
    pub values: BTreeMap<String, f64>,
}

impl ModelRecord {
    /// Display identifier: the model name when present, else the arch string.
    pub fn id(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.arch)
    }
}

/// Whole-model reference data, e.g. measured latencies per architecture or
/// the bundled objective table. CSV with a mandatory `arch` column, an
/// optional leading `model` column and any number of numeric columns.
#[derive(Debug, Clone, Default)]
pub struct ReferenceTable {
    pub device: String,
    pub precision: String,
    pub records: Vec<ModelRecord>,
}

impl ReferenceTable {
    pub fn parse(document: &str) -> Result<ReferenceTable, CostError> {
        let mut table = ReferenceTable::default();
        let mut header: Option<Vec<String>> = None;
        for (idx, raw) in document.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.trim().split_once('=') {
                    match key.trim() {
                        "device" => table.device = value.trim().to_owned(),
                        "precision" => table.precision = value.trim().to_owned(),
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match &header {
                None => {
                    let cols: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
                    if !cols.iter().any(|c| c == "arch") {
                        return Err(CostError::Malformed {
                            line: line_no,
                            message: "header must contain an `arch` column".into(),
                        });
                    }
                    header = Some(cols);
                }
                Some(cols) => {
                    if fields.len() != cols.len() {
                        return Err(CostError::Malformed {
                            line: line_no,
                            message: format!(
                                "expected {} fields, got {}",
                                cols.len(),
                                fields.len()
                            ),
                        });
                    }
                    let mut model = None;
                    let mut arch = None;
                    let mut values = BTreeMap::new();
                    for (col, field) in cols.iter().zip(fields.iter()) {
                        match col.as_str() {
                            "model" => model = Some(field.to_string()),
                            "arch" => arch = Some(field.to_string()),
                            _ => {
                                let v: f64 = field.parse().map_err(|_| CostError::Malformed {
                                    line: line_no,
                                    message: format!("`{field}` in column `{col}` is not a number"),
                                })?;
                                if !v.is_finite() {
                                    return Err(CostError::Malformed {
                                        line: line_no,
                                        message: format!("non-finite value in column `{col}`"),
                                    });
                                }
                                values.insert(col.clone(), v);
                            }
                        }
                    }
                    table.records.push(ModelRecord {
                        model,
                        arch: arch.expect("arch column checked in header"),
                        values,
                    });
                }
            }
        }
        Ok(table)
    }

    /// Column values keyed by record id, for rank comparisons.
    pub fn column(&self, name: &str) -> Result<BTreeMap<String, f64>, CostError> {
        let mut out = BTreeMap::new();
        for record in &self.records {
            let v = record.values.get(name).ok_or_else(|| CostError::Malformed {
                line: 0,
                message: format!("record `{}` has no column `{name}`", record.id()),
            })?;
            out.insert(record.id().to_owned(), *v);
        }
        Ok(out)
    }
}
