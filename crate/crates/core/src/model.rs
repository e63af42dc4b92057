//! Canonical data schema: identifiers, forum events, learner records and the
//! validated event log.
//!
//! An [`EventLog`] is immutable after construction and every constructor is a
//! hard validation gate: downstream analyses can assume all invariants hold.
//! Timestamps are integer UTC seconds; sub-second precision is discarded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_string())
            }
        }
    };
}

id_type!(
    /// Opaque learner identifier.
    LearnerId
);
id_type!(
    /// Opaque discussion-thread identifier.
    ThreadId
);
id_type!(
    /// Opaque post/comment identifier (also used as the event id for
    /// text-bearing events).
    PostId
);

/// What a forum event records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Post,
    Comment,
    View,
    Vote,
}

impl EventKind {
    /// Post and comment events carry text and count as forum participation.
    pub fn is_textual(self) -> bool {
        matches!(self, EventKind::Post | EventKind::Comment)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Post => "post",
            EventKind::Comment => "comment",
            EventKind::View => "view",
            EventKind::Vote => "vote",
        }
    }
}

impl std::str::FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "post" => Ok(EventKind::Post),
            "comment" => Ok(EventKind::Comment),
            "view" => Ok(EventKind::View),
            "vote" => Ok(EventKind::Vote),
            other => Err(format!("unknown kind `{other}` (expected post|comment|view|vote)")),
        }
    }
}

/// One validated forum event. The sub-forum label is carried on every event
/// so windowed slicing never needs a join.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumEvent {
    pub event_id: PostId,
    pub learner: LearnerId,
    pub thread: ThreadId,
    pub subforum: String,
    /// UTC seconds.
    pub timestamp: i64,
    pub kind: EventKind,
    /// Present exactly when `kind == Vote`; always +1 or -1. The voter is
    /// `learner`; vote targets are resolved only to thread level.
    pub vote_delta: Option<i8>,
    /// Present only for post/comment events (and may still be absent there).
    pub text: Option<String>,
}

/// Per-learner demographics, outcomes and survey answers. All optional:
/// surveys typically cover a small fraction of participants, so missingness
/// is the normal case.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerRecord {
    pub education: Option<String>,
    /// ISO country code.
    pub country: Option<String>,
    pub age: Option<u32>,
    pub submitted_final: Option<bool>,
    pub passed: Option<bool>,
    /// Survey answers keyed by column name; empty values are never stored.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub survey_responses: BTreeMap<String, String>,
}

impl LearnerRecord {
    /// A respondent is a learner with at least one non-empty survey field.
    pub fn is_survey_respondent(&self) -> bool {
        !self.survey_responses.is_empty()
    }
}

/// Course-level metadata supplied alongside the raw files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CourseMeta {
    /// Course interval as UTC seconds, inclusive on both ends.
    pub start: i64,
    pub end: i64,
    /// Total enrollment. When absent, defaults to the number of distinct
    /// learners observed across events and learner records.
    pub enrolled_count: Option<u64>,
}

/// Validated, time-ordered forum event log.
///
/// Events are sorted by `(timestamp, event_id)`, all invariants listed on the
/// field docs hold, and the structure is immutable: it is safe to share
/// read-only across concurrent analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    events: Vec<ForumEvent>,
    learners: BTreeMap<LearnerId, LearnerRecord>,
    course_start: i64,
    course_end: i64,
    enrolled_count: u64,
}

impl EventLog {
    /// Validates and assembles a log. This is the single gate enforcing:
    ///
    /// - every event id unique (so each post maps to exactly one thread)
    /// - view/vote events carry no text; vote_delta present iff kind is vote
    ///   and always +1/-1
    /// - every thread referenced by a view/vote was created by some
    ///   post/comment (a thread exists because somebody posted in it)
    /// - all timestamps inside the course interval
    /// - enrolled_count covers every learner appearing in events
    /// - passed implies submitted_final in learner records
    ///
    /// Learners appearing in events but absent from `learners` get a default
    /// record with all optionals empty.
    pub fn new(
        mut events: Vec<ForumEvent>,
        mut learners: BTreeMap<LearnerId, LearnerRecord>,
        meta: &CourseMeta,
    ) -> Result<Self> {
        if meta.end <= meta.start {
            return Err(Error::Invalid(format!(
                "course interval end ({}) must be after start ({})",
                meta.end, meta.start
            )));
        }

        let mut seen_ids = BTreeSet::new();
        let mut textual_threads = BTreeSet::new();
        for ev in &events {
            if !seen_ids.insert(ev.event_id.clone()) {
                return Err(Error::Invalid(format!("duplicate event_id `{}`", ev.event_id)));
            }
            if ev.timestamp < meta.start || ev.timestamp > meta.end {
                return Err(Error::Invalid(format!(
                    "event `{}` timestamp {} outside course interval [{}, {}]",
                    ev.event_id, ev.timestamp, meta.start, meta.end
                )));
            }
            match ev.kind {
                EventKind::Vote => {
                    if ev.text.is_some() {
                        return Err(Error::Invalid(format!(
                            "vote event `{}` carries text",
                            ev.event_id
                        )));
                    }
                    if !matches!(ev.vote_delta, Some(1) | Some(-1)) {
                        return Err(Error::Invalid(format!(
                            "vote event `{}` needs vote_delta of +1 or -1",
                            ev.event_id
                        )));
                    }
                }
                EventKind::View => {
                    if ev.text.is_some() || ev.vote_delta.is_some() {
                        return Err(Error::Invalid(format!(
                            "view event `{}` carries text or vote_delta",
                            ev.event_id
                        )));
                    }
                }
                EventKind::Post | EventKind::Comment => {
                    if ev.vote_delta.is_some() {
                        return Err(Error::Invalid(format!(
                            "{} event `{}` carries vote_delta",
                            ev.kind.as_str(),
                            ev.event_id
                        )));
                    }
                    textual_threads.insert(ev.thread.clone());
                }
            }
        }
        for ev in &events {
            if !ev.kind.is_textual() && !textual_threads.contains(&ev.thread) {
                return Err(Error::Invalid(format!(
                    "event `{}` references thread `{}` that no post/comment created",
                    ev.event_id, ev.thread
                )));
            }
        }

        // Total, stable order: timestamp, then event id.
        events.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.event_id.cmp(&b.event_id))
        });

        let active: BTreeSet<LearnerId> = events.iter().map(|e| e.learner.clone()).collect();
        for learner in &active {
            learners.entry(learner.clone()).or_default();
        }
        for (learner, rec) in &learners {
            if rec.passed == Some(true) && rec.submitted_final != Some(true) {
                return Err(Error::Invalid(format!(
                    "learner `{learner}` passed without submitting a final assignment"
                )));
            }
        }

        let distinct_active = active.len() as u64;
        let enrolled_count = match meta.enrolled_count {
            Some(n) if n < distinct_active => {
                return Err(Error::Invalid(format!(
                    "enrolled_count {n} is below the {distinct_active} distinct learners in events"
                )));
            }
            Some(n) => n,
            None => learners.len() as u64,
        };

        Ok(Self {
            events,
            learners,
            course_start: meta.start,
            course_end: meta.end,
            enrolled_count,
        })
    }

    pub fn events(&self) -> &[ForumEvent] {
        &self.events
    }

    pub fn learners(&self) -> &BTreeMap<LearnerId, LearnerRecord> {
        &self.learners
    }

    pub fn course_interval(&self) -> (i64, i64) {
        (self.course_start, self.course_end)
    }

    pub fn course_duration(&self) -> i64 {
        self.course_end - self.course_start
    }

    pub fn enrolled_count(&self) -> u64 {
        self.enrolled_count
    }

    /// Learners with at least one event of any kind.
    pub fn active_learners(&self) -> BTreeSet<&LearnerId> {
        self.events.iter().map(|e| &e.learner).collect()
    }

    /// Replaces learner records wholesale. Used by survey linking; revalidates
    /// the outcome invariant.
    pub(crate) fn with_learners(mut self, learners: BTreeMap<LearnerId, LearnerRecord>) -> Result<Self> {
        for (learner, rec) in &learners {
            if rec.passed == Some(true) && rec.submitted_final != Some(true) {
                return Err(Error::Invalid(format!(
                    "learner `{learner}` passed without submitting a final assignment"
                )));
            }
        }
        self.learners = learners;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ev(id: &str, learner: &str, thread: &str, ts: i64, kind: EventKind) -> ForumEvent {
        ForumEvent {
            event_id: PostId::from(id),
            learner: LearnerId::from(learner),
            thread: ThreadId::from(thread),
            subforum: "general".to_string(),
            timestamp: ts,
            kind,
            vote_delta: if kind == EventKind::Vote { Some(1) } else { None },
            text: if kind.is_textual() { Some(format!("text {id}")) } else { None },
        }
    }

    fn meta() -> CourseMeta {
        CourseMeta { start: 0, end: 1000, enrolled_count: None }
    }

    #[test]
    fn sorts_events_with_stable_tiebreak() {
        let events = vec![
            ev("p2", "a", "t1", 10, EventKind::Post),
            ev("p1", "b", "t1", 10, EventKind::Post),
            ev("p0", "c", "t1", 5, EventKind::Post),
        ];
        let log = EventLog::new(events, BTreeMap::new(), &meta()).unwrap();
        let ids: Vec<&str> = log.events().iter().map(|e| e.event_id.as_str()).collect();
        assert_eq!(ids, ["p0", "p1", "p2"]);
    }

    #[test]
    fn rejects_duplicate_event_id() {
        let events = vec![
            ev("p1", "a", "t1", 10, EventKind::Post),
            ev("p1", "b", "t1", 20, EventKind::Post),
        ];
        let err = EventLog::new(events, BTreeMap::new(), &meta()).unwrap_err();
        assert!(err.to_string().contains("duplicate event_id"));
    }

    #[test]
    fn rejects_vote_with_text() {
        let mut vote = ev("v1", "a", "t1", 10, EventKind::Vote);
        vote.text = Some("illegal".into());
        let events = vec![ev("p1", "a", "t1", 5, EventKind::Post), vote];
        assert!(EventLog::new(events, BTreeMap::new(), &meta()).is_err());
    }

    #[test]
    fn rejects_out_of_interval_timestamp() {
        let events = vec![ev("p1", "a", "t1", 2000, EventKind::Post)];
        assert!(EventLog::new(events, BTreeMap::new(), &meta()).is_err());
    }

    #[test]
    fn rejects_dangling_thread_reference() {
        let events = vec![
            ev("p1", "a", "t1", 5, EventKind::Post),
            ev("w1", "b", "t9", 10, EventKind::View),
        ];
        let err = EventLog::new(events, BTreeMap::new(), &meta()).unwrap_err();
        assert!(err.to_string().contains("no post/comment created"));
    }

    #[test]
    fn defaults_missing_learner_records() {
        let events = vec![ev("p1", "a", "t1", 5, EventKind::Post)];
        let log = EventLog::new(events, BTreeMap::new(), &meta()).unwrap();
        assert!(log.learners().contains_key(&LearnerId::from("a")));
        assert_eq!(log.enrolled_count(), 1);
    }

    #[test]
    fn rejects_low_enrolled_count() {
        let events = vec![
            ev("p1", "a", "t1", 5, EventKind::Post),
            ev("p2", "b", "t1", 6, EventKind::Post),
        ];
        let m = CourseMeta { start: 0, end: 100, enrolled_count: Some(1) };
        assert!(EventLog::new(events, BTreeMap::new(), &m).is_err());
    }

    #[test]
    fn rejects_passed_without_submission() {
        let events = vec![ev("p1", "a", "t1", 5, EventKind::Post)];
        let mut learners = BTreeMap::new();
        learners.insert(
            LearnerId::from("a"),
            LearnerRecord { passed: Some(true), ..Default::default() },
        );
        assert!(EventLog::new(events, learners, &meta()).is_err());
    }
}
