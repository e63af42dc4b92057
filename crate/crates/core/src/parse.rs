//! Input parsing: `events.csv` / `events.jsonl`, `learners.csv`, `survey.csv`
//! and their JSONL equivalents.
//!
//! Parsing is a hard gate. Every malformed row is collected with its line
//! number and field name, and a single [`Error::RejectedRows`] reports them
//! all; no partially valid log is ever returned.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result, RowError};
use crate::model::{
    CourseMeta, EventKind, EventLog, ForumEvent, LearnerId, LearnerRecord, PostId, ThreadId,
};

/// Input file format, auto-detected from the extension by the path-based
/// entry points (`.jsonl`/`.ndjson` vs anything else as CSV).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawEventRow {
    event_id: String,
    learner_id: String,
    thread_id: String,
    subforum: String,
    timestamp: String,
    kind: String,
    #[serde(default)]
    vote_delta: Option<String>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawLearnerRow {
    learner_id: String,
    #[serde(default)]
    education: Option<String>,
    #[serde(default)]
    country: Option<String>,
    #[serde(default)]
    age: Option<String>,
    #[serde(default)]
    submitted_final: Option<String>,
    #[serde(default)]
    passed: Option<String>,
}

fn none_if_empty(v: Option<String>) -> Option<String> {
    v.filter(|s| !s.is_empty())
}

/// Accepts integer UTC seconds or an ISO-8601 / RFC-3339 datetime.
/// Sub-second precision is discarded.
fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    // Common ISO-8601 variant without timezone: treat as UTC.
    if let Ok(naive) = chrono::NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S") {
        return Ok(naive.and_utc().timestamp());
    }
    Err(format!("malformed timestamp `{raw}` (expected integer seconds or ISO-8601)"))
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw {
        "true" | "True" | "TRUE" | "1" | "yes" => Ok(true),
        "false" | "False" | "FALSE" | "0" | "no" => Ok(false),
        other => Err(format!("malformed boolean `{other}`")),
    }
}

/// Reads raw rows plus 1-based line numbers from either format.
fn read_rows<T: for<'de> Deserialize<'de>>(
    reader: impl Read,
    format: FileFormat,
    errors: &mut Vec<RowError>,
) -> Vec<(u64, T)> {
    let mut out = Vec::new();
    match format {
        FileFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
            let headers = match rdr.headers() {
                Ok(h) => h.clone(),
                Err(e) => {
                    errors.push(RowError { line: 1, field: "<header>".into(), message: e.to_string() });
                    return out;
                }
            };
            for result in rdr.records() {
                match result {
                    Ok(record) => {
                        let line = record.position().map_or(0, |p| p.line());
                        match record.deserialize::<T>(Some(&headers)) {
                            Ok(row) => out.push((line, row)),
                            Err(e) => errors.push(RowError {
                                line,
                                field: "<record>".into(),
                                message: e.to_string(),
                            }),
                        }
                    }
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line());
                        errors.push(RowError {
                            line,
                            field: "<record>".into(),
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        FileFormat::Jsonl => {
            let mut buf = String::new();
            let mut reader = reader;
            if let Err(e) = reader.read_to_string(&mut buf) {
                errors.push(RowError { line: 0, field: "<file>".into(), message: e.to_string() });
                return out;
            }
            for (i, line) in buf.lines().enumerate() {
                let line_no = i as u64 + 1;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<T>(line) {
                    Ok(row) => out.push((line_no, row)),
                    Err(e) => errors.push(RowError {
                        line: line_no,
                        field: "<record>".into(),
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    out
}

/// Parses and validates the event file (plus optional learner file) into an
/// [`EventLog`]. See the module docs for the error contract.
pub fn parse_event_log(
    events: impl Read,
    events_format: FileFormat,
    learners: Option<(impl Read, FileFormat)>,
    meta: &CourseMeta,
) -> Result<EventLog> {
    let mut errors = Vec::new();
    let rows: Vec<(u64, RawEventRow)> = read_rows(events, events_format, &mut errors);

    let mut parsed = Vec::with_capacity(rows.len());
    let mut seen_ids: BTreeMap<String, u64> = BTreeMap::new();
    for (line, row) in rows {
        let mut row_ok = true;
        let fail = |field: &str, message: String, errors: &mut Vec<RowError>| {
            errors.push(RowError { line, field: field.into(), message });
        };

        if row.event_id.is_empty() {
            fail("event_id", "empty identifier".into(), &mut errors);
            row_ok = false;
        } else if let Some(first) = seen_ids.insert(row.event_id.clone(), line) {
            fail(
                "event_id",
                format!("duplicate event_id `{}` (first seen on line {first})", row.event_id),
                &mut errors,
            );
            row_ok = false;
        }
        if row.learner_id.is_empty() {
            fail("learner_id", "empty identifier".into(), &mut errors);
            row_ok = false;
        }
        if row.thread_id.is_empty() {
            fail("thread_id", "empty identifier".into(), &mut errors);
            row_ok = false;
        }

        let timestamp = match parse_timestamp(&row.timestamp) {
            Ok(ts) => ts,
            Err(msg) => {
                fail("timestamp", msg, &mut errors);
                row_ok = false;
                0
            }
        };
        let kind = match row.kind.parse::<EventKind>() {
            Ok(k) => k,
            Err(msg) => {
                fail("kind", msg, &mut errors);
                row_ok = false;
                EventKind::Post
            }
        };

        let text = none_if_empty(row.text);
        let vote_delta = match none_if_empty(row.vote_delta) {
            None => None,
            Some(raw) => match raw.parse::<i8>() {
                Ok(d @ (1 | -1)) => Some(d),
                Ok(d) => {
                    fail("vote_delta", format!("vote_delta must be +1 or -1, got {d}"), &mut errors);
                    row_ok = false;
                    None
                }
                Err(_) => {
                    fail("vote_delta", format!("malformed vote_delta `{raw}`"), &mut errors);
                    row_ok = false;
                    None
                }
            },
        };

        if row_ok {
            match kind {
                EventKind::Vote => {
                    if text.is_some() {
                        fail("text", "vote events carry no text".into(), &mut errors);
                        row_ok = false;
                    }
                    if vote_delta.is_none() {
                        fail("vote_delta", "vote events require vote_delta".into(), &mut errors);
                        row_ok = false;
                    }
                }
                EventKind::View => {
                    if text.is_some() {
                        fail("text", "view events carry no text".into(), &mut errors);
                        row_ok = false;
                    }
                    if vote_delta.is_some() {
                        fail("vote_delta", "view events carry no vote_delta".into(), &mut errors);
                        row_ok = false;
                    }
                }
                EventKind::Post | EventKind::Comment => {
                    if vote_delta.is_some() {
                        fail(
                            "vote_delta",
                            "only vote events carry vote_delta".into(),
                            &mut errors,
                        );
                        row_ok = false;
                    }
                }
            }
        }

        if row_ok {
            parsed.push(ForumEvent {
                event_id: PostId::new(row.event_id),
                learner: LearnerId::new(row.learner_id),
                thread: ThreadId::new(row.thread_id),
                subforum: row.subforum,
                timestamp,
                kind,
                vote_delta,
                text,
            });
        }
    }

    let mut learner_map: BTreeMap<LearnerId, LearnerRecord> = BTreeMap::new();
    if let Some((reader, format)) = learners {
        let rows: Vec<(u64, RawLearnerRow)> = read_rows(reader, format, &mut errors);
        for (line, row) in rows {
            if row.learner_id.is_empty() {
                errors.push(RowError {
                    line,
                    field: "learner_id".into(),
                    message: "empty identifier".into(),
                });
                continue;
            }
            let id = LearnerId::new(row.learner_id);
            if learner_map.contains_key(&id) {
                errors.push(RowError {
                    line,
                    field: "learner_id".into(),
                    message: format!("duplicate learner record for `{id}`"),
                });
                continue;
            }
            let mut rec = LearnerRecord {
                education: none_if_empty(row.education),
                country: none_if_empty(row.country),
                ..Default::default()
            };
            let mut ok = true;
            if let Some(raw) = none_if_empty(row.age) {
                match raw.parse::<u32>() {
                    Ok(a) => rec.age = Some(a),
                    Err(_) => {
                        errors.push(RowError {
                            line,
                            field: "age".into(),
                            message: format!("malformed age `{raw}`"),
                        });
                        ok = false;
                    }
                }
            }
            for (field, raw, slot) in [
                ("submitted_final", none_if_empty(row.submitted_final), 0usize),
                ("passed", none_if_empty(row.passed), 1),
            ] {
                if let Some(raw) = raw {
                    match parse_bool(&raw) {
                        Ok(b) => {
                            if slot == 0 {
                                rec.submitted_final = Some(b);
                            } else {
                                rec.passed = Some(b);
                            }
                        }
                        Err(msg) => {
                            errors.push(RowError { line, field: field.into(), message: msg });
                            ok = false;
                        }
                    }
                }
            }
            if ok {
                learner_map.insert(id, rec);
            }
        }
    }

    if !errors.is_empty() {
        return Err(Error::RejectedRows(errors));
    }
    EventLog::new(parsed, learner_map, meta)
}

/// Path-based wrapper with format auto-detection.
pub fn parse_event_log_from_paths(
    events: &Path,
    learners: Option<&Path>,
    meta: &CourseMeta,
) -> Result<EventLog> {
    let ev_reader = std::fs::File::open(events)?;
    let ev_format = FileFormat::from_path(events);
    match learners {
        Some(lp) => {
            let lr = std::fs::File::open(lp)?;
            parse_event_log(ev_reader, ev_format, Some((lr, FileFormat::from_path(lp))), meta)
        }
        None => {
            parse_event_log(ev_reader, ev_format, None::<(std::fs::File, FileFormat)>, meta)
        }
    }
}

/// Outcome of linking a survey file into an event log.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LinkReport {
    pub matched: usize,
    /// Survey rows whose learner id appears nowhere in the log. They are
    /// counted and listed, never dropped silently.
    pub unmatched: usize,
    pub unmatched_learners: Vec<LearnerId>,
}

/// Enriches learner records with survey answers keyed by `learner_id`.
/// Survey files have a `learner_id` column plus arbitrary response columns;
/// empty fields are treated as missing.
pub fn link_records(
    log: EventLog,
    survey: impl Read,
    format: FileFormat,
) -> Result<(EventLog, LinkReport)> {
    let mut rows: Vec<(u64, BTreeMap<String, String>)> = Vec::new();
    let mut errors = Vec::new();
    match format {
        FileFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(survey);
            let headers = rdr.headers()?.clone();
            for (i, record) in rdr.records().enumerate() {
                let record = record?;
                let map: BTreeMap<String, String> = headers
                    .iter()
                    .zip(record.iter())
                    .map(|(h, v)| (h.to_string(), v.to_string()))
                    .collect();
                rows.push((i as u64 + 2, map));
            }
        }
        FileFormat::Jsonl => {
            for (line, map) in read_rows::<BTreeMap<String, String>>(survey, format, &mut errors) {
                rows.push((line, map));
            }
            if !errors.is_empty() {
                return Err(Error::RejectedRows(errors));
            }
        }
    }

    let mut learners = log.learners().clone();
    let mut seen: BTreeMap<LearnerId, u64> = BTreeMap::new();
    let mut duplicates: Vec<LearnerId> = Vec::new();
    let mut matched = 0usize;
    let mut unmatched_learners = Vec::new();
    for (line, mut map) in rows {
        let Some(raw_id) = map.remove("learner_id") else {
            return Err(Error::RejectedRows(vec![RowError {
                line,
                field: "learner_id".into(),
                message: "survey rows must be keyed by learner_id".into(),
            }]));
        };
        let id = LearnerId::new(raw_id);
        if seen.insert(id.clone(), line).is_some() {
            duplicates.push(id);
            continue;
        }
        match learners.get_mut(&id) {
            Some(rec) => {
                rec.survey_responses =
                    map.into_iter().filter(|(_, v)| !v.is_empty()).collect();
                matched += 1;
            }
            None => unmatched_learners.push(id),
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::DuplicateSurveyRows(duplicates));
    }

    let report = LinkReport { matched, unmatched: unmatched_learners.len(), unmatched_learners };
    Ok((log.with_learners(learners)?, report))
}

/// Serializes a log back to the canonical `events.csv` layout. Together with
/// [`parse_event_log`] this makes parsing idempotent:
/// `parse(serialize(parse(x))) == parse(x)`.
pub fn write_events_csv(log: &EventLog, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event_id", "learner_id", "thread_id", "subforum", "timestamp", "kind", "vote_delta", "text"])?;
    for ev in log.events() {
        w.write_record([
            ev.event_id.as_str(),
            ev.learner.as_str(),
            ev.thread.as_str(),
            &ev.subforum,
            &ev.timestamp.to_string(),
            ev.kind.as_str(),
            &ev.vote_delta.map_or(String::new(), |d| format!("{d:+}")),
            ev.text.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}
