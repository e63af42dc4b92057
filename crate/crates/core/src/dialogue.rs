//! Human-coded dialogue labels: the coding schema, corpus ingestion,
//! inter-rater agreement and code distributions.
//!
//! The unit of coding is an entire response (a post or comment event),
//! never a sentence or word. Codes are always human-assigned; this module
//! only stores, checks and aggregates them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::Serialize;

use crate::error::{Error, Result, RowError};
use crate::model::{EventLog, ForumEvent, PostId};
use crate::network::{window_slices, Window};

/// Level of knowledge construction in a response, on the ordered phase
/// scale of the interaction analysis model, plus a none level for responses
/// showing no learning.
///
/// Phases compare by their numeral order; `NoLearning` is unordered with
/// the phases (comparisons return `None`). Phase display names beyond
/// Phase I are schema metadata supplied by configuration, not hardcoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum KnowledgePhase {
    NoLearning,
    PhaseI,
    PhaseII,
    PhaseIII,
    PhaseIV,
    PhaseV,
}

impl KnowledgePhase {
    pub const ALL: [KnowledgePhase; 6] = [
        KnowledgePhase::NoLearning,
        KnowledgePhase::PhaseI,
        KnowledgePhase::PhaseII,
        KnowledgePhase::PhaseIII,
        KnowledgePhase::PhaseIV,
        KnowledgePhase::PhaseV,
    ];

    /// Numeral rank among phases; none for `NoLearning`.
    fn rank(self) -> Option<u8> {
        match self {
            KnowledgePhase::NoLearning => None,
            KnowledgePhase::PhaseI => Some(1),
            KnowledgePhase::PhaseII => Some(2),
            KnowledgePhase::PhaseIII => Some(3),
            KnowledgePhase::PhaseIV => Some(4),
            KnowledgePhase::PhaseV => Some(5),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgePhase::NoLearning => "none",
            KnowledgePhase::PhaseI => "I",
            KnowledgePhase::PhaseII => "II",
            KnowledgePhase::PhaseIII => "III",
            KnowledgePhase::PhaseIV => "IV",
            KnowledgePhase::PhaseV => "V",
        }
    }
}

impl PartialOrd for KnowledgePhase {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match (self.rank(), other.rank()) {
            (Some(a), Some(b)) => Some(a.cmp(&b)),
            (None, None) => Some(std::cmp::Ordering::Equal),
            _ => None,
        }
    }
}

impl std::str::FromStr for KnowledgePhase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(KnowledgePhase::NoLearning),
            "I" => Ok(KnowledgePhase::PhaseI),
            "II" => Ok(KnowledgePhase::PhaseII),
            "III" => Ok(KnowledgePhase::PhaseIII),
            "IV" => Ok(KnowledgePhase::PhaseIV),
            "V" => Ok(KnowledgePhase::PhaseV),
            other => Err(format!("unknown phase `{other}` (expected none|I|II|III|IV|V)")),
        }
    }
}

/// Communicative intent of a response: exactly one of the five categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Argumentative,
    Responsive,
    Informative,
    Elicitive,
    Imperative,
}

impl Intent {
    pub const ALL: [Intent; 5] = [
        Intent::Argumentative,
        Intent::Responsive,
        Intent::Informative,
        Intent::Elicitive,
        Intent::Imperative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Argumentative => "argumentative",
            Intent::Responsive => "responsive",
            Intent::Informative => "informative",
            Intent::Elicitive => "elicitive",
            Intent::Imperative => "imperative",
        }
    }
}

impl std::str::FromStr for Intent {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "argumentative" => Ok(Intent::Argumentative),
            "responsive" => Ok(Intent::Responsive),
            "informative" => Ok(Intent::Informative),
            "elicitive" => Ok(Intent::Elicitive),
            "imperative" => Ok(Intent::Imperative),
            other => Err(format!(
                "unknown intent `{other}` (expected argumentative|responsive|informative|elicitive|imperative)"
            )),
        }
    }
}

/// One coder's labels for one response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodedResponse {
    pub post: PostId,
    pub coder: String,
    pub phase: KnowledgePhase,
    pub intent: Intent,
    pub topic: String,
}

/// Validated collection of coded responses. `(post, coder)` pairs are
/// unique and every post resolves to a text-bearing event in the log.
/// Conflicting multi-coder labels are kept as-is; consumers pick a coder or
/// an aggregation rule explicitly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodedCorpus {
    responses: Vec<CodedResponse>,
    coders: BTreeSet<String>,
}

impl CodedCorpus {
    pub fn responses(&self) -> &[CodedResponse] {
        &self.responses
    }

    pub fn coders(&self) -> &BTreeSet<String> {
        &self.coders
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

#[derive(Debug, serde::Deserialize)]
struct RawCodeRow {
    post_id: String,
    coder: String,
    phase: String,
    intent: String,
    #[serde(default)]
    topic: Option<String>,
}

/// Loads `codes.csv` (`post_id,coder,phase,intent,topic`), validating every
/// row against the event log.
pub fn load_codes(reader: impl Read, log: &EventLog) -> Result<CodedCorpus> {
    let by_post: BTreeMap<&PostId, &ForumEvent> =
        log.events().iter().map(|e| (&e.event_id, e)).collect();
    let mut errors: Vec<RowError> = Vec::new();
    let mut responses = Vec::new();
    let mut coders = BTreeSet::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();

    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: RawCodeRow = match record.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { line, field: "<record>".into(), message: e.to_string() });
                continue;
            }
        };
        let mut ok = true;
        match by_post.get(&PostId::new(row.post_id.clone())) {
            None => {
                errors.push(RowError {
                    line,
                    field: "post_id".into(),
                    message: format!("post `{}` not found in the event log", row.post_id),
                });
                ok = false;
            }
            Some(ev) if !ev.kind.is_textual() => {
                errors.push(RowError {
                    line,
                    field: "post_id".into(),
                    message: format!(
                        "event `{}` is a {} and has no text to code",
                        row.post_id,
                        ev.kind.as_str()
                    ),
                });
                ok = false;
            }
            Some(_) => {}
        }
        if !seen.insert((row.post_id.clone(), row.coder.clone())) {
            errors.push(RowError {
                line,
                field: "coder".into(),
                message: format!("duplicate code by `{}` for post `{}`", row.coder, row.post_id),
            });
            ok = false;
        }
        let phase = match row.phase.parse::<KnowledgePhase>() {
            Ok(p) => p,
            Err(msg) => {
                errors.push(RowError { line, field: "phase".into(), message: msg });
                ok = false;
                KnowledgePhase::NoLearning
            }
        };
        let intent = match row.intent.parse::<Intent>() {
            Ok(i) => i,
            Err(msg) => {
                errors.push(RowError { line, field: "intent".into(), message: msg });
                ok = false;
                Intent::Informative
            }
        };
        if ok {
            coders.insert(row.coder.clone());
            responses.push(CodedResponse {
                post: PostId::new(row.post_id),
                coder: row.coder,
                phase,
                intent,
                topic: row.topic.unwrap_or_default(),
            });
        }
    }
    if !errors.is_empty() {
        return Err(Error::RejectedRows(errors));
    }
    Ok(CodedCorpus { responses, coders })
}

/// Which label dimension to compare or tabulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeDimension {
    Phase,
    Intent,
}

/// Cohen's kappa between two coders over their jointly coded posts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub kappa: f64,
    /// Observed agreement fraction p_o.
    pub observed: f64,
    /// Chance agreement fraction p_e from the coders' marginals.
    pub expected: f64,
    /// Number of jointly coded posts.
    pub n: usize,
    /// Both coders constant and equal: p_e = 1 and kappa is reported as 1
    /// by convention.
    pub degenerate: bool,
}

/// kappa = (p_o - p_e) / (1 - p_e) over posts coded by both coders.
pub fn agreement(
    corpus: &CodedCorpus,
    coder_a: &str,
    coder_b: &str,
    dimension: CodeDimension,
) -> Result<Agreement> {
    let label = |r: &CodedResponse| -> String {
        match dimension {
            CodeDimension::Phase => r.phase.as_str().to_string(),
            CodeDimension::Intent => r.intent.as_str().to_string(),
        }
    };
    let mut by_post: BTreeMap<&PostId, (Option<String>, Option<String>)> = BTreeMap::new();
    for r in &corpus.responses {
        if r.coder == coder_a {
            by_post.entry(&r.post).or_default().0 = Some(label(r));
        } else if r.coder == coder_b {
            by_post.entry(&r.post).or_default().1 = Some(label(r));
        }
    }
    let joint: Vec<(String, String)> = by_post
        .into_values()
        .filter_map(|(a, b)| Some((a?, b?)))
        .collect();
    if joint.is_empty() {
        return Err(Error::NoJointlyCodedPosts(coder_a.to_string(), coder_b.to_string()));
    }
    let n = joint.len() as f64;
    let observed = joint.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let mut marg_a: BTreeMap<&str, f64> = BTreeMap::new();
    let mut marg_b: BTreeMap<&str, f64> = BTreeMap::new();
    for (a, b) in &joint {
        *marg_a.entry(a).or_insert(0.0) += 1.0 / n;
        *marg_b.entry(b).or_insert(0.0) += 1.0 / n;
    }
    let expected: f64 = marg_a
        .iter()
        .map(|(cat, pa)| pa * marg_b.get(cat).copied().unwrap_or(0.0))
        .sum();
    let degenerate = (1.0 - expected).abs() < 1e-12;
    let kappa = if degenerate { 1.0 } else { (observed - expected) / (1.0 - expected) };
    Ok(Agreement { kappa, observed, expected, n: joint.len(), degenerate })
}

/// How to group a code distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupBy {
    Subforum,
    Window { width_secs: i64 },
    Learner,
}

/// One aggregated cell: counts and within-group fractions of one label
/// value in one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistRow {
    pub group: String,
    pub dimension: CodeDimension,
    pub value: String,
    pub count: u64,
    pub fraction: f64,
}

/// Exhaustive counts of phase and intent labels per group. Fractions sum to
/// one per (group, dimension).
pub fn code_distribution(
    corpus: &CodedCorpus,
    log: &EventLog,
    group_by: &GroupBy,
) -> Result<Vec<DistRow>> {
    let by_post: BTreeMap<&PostId, &ForumEvent> =
        log.events().iter().map(|e| (&e.event_id, e)).collect();
    let windows: Vec<Window> = match group_by {
        GroupBy::Window { width_secs } => window_slices(log, *width_secs)?,
        _ => Vec::new(),
    };
    let group_of = |ev: &ForumEvent| -> String {
        match group_by {
            GroupBy::Subforum => ev.subforum.clone(),
            GroupBy::Learner => ev.learner.to_string(),
            GroupBy::Window { .. } => {
                let w = windows
                    .iter()
                    .rev()
                    .find(|w| ev.timestamp >= w.start)
                    .expect("event inside course interval");
                format!("window{:03}", w.index)
            }
        }
    };

    // (group, dimension) -> value -> count
    let mut counts: BTreeMap<(String, &'static str), BTreeMap<String, u64>> = BTreeMap::new();
    for r in &corpus.responses {
        let ev = by_post.get(&r.post).expect("corpus validated against log");
        let group = group_of(ev);
        *counts
            .entry((group.clone(), "phase"))
            .or_default()
            .entry(r.phase.as_str().to_string())
            .or_insert(0) += 1;
        *counts
            .entry((group, "intent"))
            .or_default()
            .entry(r.intent.as_str().to_string())
            .or_insert(0) += 1;
    }

    let mut rows = Vec::new();
    for ((group, dim), values) in counts {
        let total: u64 = values.values().sum();
        let dimension =
            if dim == "phase" { CodeDimension::Phase } else { CodeDimension::Intent };
        for (value, count) in values {
            rows.push(DistRow {
                group: group.clone(),
                dimension,
                value,
                count,
                fraction: count as f64 / total as f64,
            });
        }
    }
    Ok(rows)
}

/// `code_distribution.csv` rows: `group,dimension,value,count,fraction`.
pub fn write_distribution_csv(rows: &[DistRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "dimension", "value", "count", "fraction"])?;
    for r in rows {
        let dim = match r.dimension {
            CodeDimension::Phase => "phase",
            CodeDimension::Intent => "intent",
        };
        w.write_record([
            r.group.as_str(),
            dim,
            r.value.as_str(),
            &r.count.to_string(),
            &format!("{}", r.fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}
