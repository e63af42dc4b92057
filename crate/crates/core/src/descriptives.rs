//! Course-level descriptive outputs: activity time series, participation
//! partition and survey response-rate reporting.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EventKind, EventLog};

/// Event counts per contiguous time bucket spanning the course interval.
/// Buckets align to course start, not calendar weeks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub bucket_start: Vec<i64>,
    pub counts: Vec<u64>,
    pub bucket_width: i64,
}

impl TimeSeries {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts of events matching `kind_filter` per bucket. A width larger than
/// the course interval yields a single-bucket series.
pub fn activity_series(log: &EventLog, kind_filter: &[EventKind], bucket_width: i64) -> Result<TimeSeries> {
    if bucket_width <= 0 {
        return Err(Error::Invalid("bucket width must be positive".into()));
    }
    let (start, end) = log.course_interval();
    let n_buckets = ((end - start) as u64).div_ceil(bucket_width as u64).max(1) as usize;
    let mut counts = vec![0u64; n_buckets];
    for ev in log.events() {
        if !kind_filter.contains(&ev.kind) {
            continue;
        }
        let offset = (ev.timestamp - start) as u64;
        let idx = ((offset / bucket_width as u64) as usize).min(n_buckets - 1);
        counts[idx] += 1;
    }
    let bucket_start = (0..n_buckets).map(|i| start + i as i64 * bucket_width).collect();
    Ok(TimeSeries { bucket_start, counts, bucket_width })
}

/// Five-number-ish summary of a count distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistSummary {
    pub min: u64,
    pub median: f64,
    pub mean: f64,
    pub max: u64,
}

impl DistSummary {
    fn from_counts(mut counts: Vec<u64>) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        counts.sort_unstable();
        let n = counts.len();
        let median = if n % 2 == 1 {
            counts[n / 2] as f64
        } else {
            (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
        };
        let mean = counts.iter().sum::<u64>() as f64 / n as f64;
        Some(Self { min: counts[0], median, mean, max: counts[n - 1] })
    }
}

/// Exhaustive, disjoint partition of the enrolled population.
///
/// Posters wrote at least one post/comment; viewers_only appear in the log
/// (views or votes) without ever posting; the rest of the enrollment is
/// inactive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipationSummary {
    pub posters: u64,
    pub viewers_only: u64,
    pub inactive_enrolled: u64,
    pub posts_per_poster: Option<DistSummary>,
}

pub fn participation_summary(log: &EventLog) -> ParticipationSummary {
    use std::collections::BTreeMap;
    let mut posts_by_learner: BTreeMap<&crate::model::LearnerId, u64> = BTreeMap::new();
    let mut active: std::collections::BTreeSet<&crate::model::LearnerId> =
        std::collections::BTreeSet::new();
    for ev in log.events() {
        active.insert(&ev.learner);
        if ev.kind.is_textual() {
            *posts_by_learner.entry(&ev.learner).or_insert(0) += 1;
        }
    }
    let posters = posts_by_learner.len() as u64;
    let viewers_only = active.len() as u64 - posters;
    let inactive_enrolled = log.enrolled_count() - active.len() as u64;
    ParticipationSummary {
        posters,
        viewers_only,
        inactive_enrolled,
        posts_per_poster: DistSummary::from_counts(posts_by_learner.into_values().collect()),
    }
}

/// Survey coverage relative to enrollment. The low-response flag trips below
/// a one-in-ten rate, the bound typical of MOOC pre/post surveys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyRate {
    pub respondents: u64,
    pub enrolled: u64,
    pub rate: f64,
    pub low_response_flag: bool,
}

pub const LOW_RESPONSE_BOUND: f64 = 0.10;

pub fn survey_response_rate(log: &EventLog) -> Result<SurveyRate> {
    let enrolled = log.enrolled_count();
    if enrolled == 0 {
        return Err(Error::Invalid("survey rate needs a positive enrollment".into()));
    }
    let respondents =
        log.learners().values().filter(|r| r.is_survey_respondent()).count() as u64;
    let rate = respondents as f64 / enrolled as f64;
    Ok(SurveyRate { respondents, enrolled, rate, low_response_flag: rate < LOW_RESPONSE_BOUND })
}

/// Activity CSV rows: `bucket_start,count`.
pub fn write_activity_csv(series: &TimeSeries, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bucket_start", "count"])?;
    for (start, count) in series.bucket_start.iter().zip(&series.counts) {
        w.write_record([start.to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CourseMeta, ForumEvent, LearnerId, PostId, ThreadId};
    use std::collections::BTreeMap;

    const WEEK: i64 = 7 * 24 * 3600;

    fn ev(id: &str, learner: &str, ts: i64, kind: EventKind) -> ForumEvent {
        ForumEvent {
            event_id: PostId::from(id),
            learner: LearnerId::from(learner),
            thread: ThreadId::from("t1"),
            subforum: "general".into(),
            timestamp: ts,
            kind,
            vote_delta: if kind == EventKind::Vote { Some(1) } else { None },
            text: if kind.is_textual() { Some("x".into()) } else { None },
        }
    }

    fn log_of(events: Vec<ForumEvent>, end: i64, enrolled: Option<u64>) -> EventLog {
        // guarantee at least one post so view/vote threads resolve
        let meta = CourseMeta { start: 0, end, enrolled_count: enrolled };
        EventLog::new(events, BTreeMap::new(), &meta).unwrap()
    }

    #[test]
    fn posts_land_in_first_week() {
        let events: Vec<ForumEvent> =
            (0..10).map(|i| ev(&format!("p{i}"), "a", i * 3600, EventKind::Post)).collect();
        let log = log_of(events, 5 * WEEK, None);
        let series = activity_series(&log, &[EventKind::Post], WEEK).unwrap();
        assert_eq!(series.counts, vec![10, 0, 0, 0, 0]);
    }

    #[test]
    fn empty_log_all_zero() {
        let log = log_of(vec![], 3 * WEEK, Some(5));
        let series = activity_series(&log, &[EventKind::Post], WEEK).unwrap();
        assert_eq!(series.counts, vec![0, 0, 0]);
    }

    #[test]
    fn kind_filter_excludes_views() {
        let events = vec![
            ev("p1", "a", 10, EventKind::Post),
            ev("p2", "a", 20, EventKind::Post),
            ev("w1", "b", 30, EventKind::View),
        ];
        let log = log_of(events, 100, None);
        let series = activity_series(&log, &[EventKind::Post], 1000).unwrap();
        assert_eq!(series.counts, vec![2]);
        assert_eq!(series.bucket_start.len(), 1);
    }

    #[test]
    fn bucket_width_change_keeps_total() {
        let events: Vec<ForumEvent> =
            (0..23).map(|i| ev(&format!("p{i}"), "a", i * 977 % 100_000, EventKind::Post)).collect();
        let log = log_of(events, 100_000, None);
        for width in [1, 7, 100, 99_999, 1_000_000] {
            let s = activity_series(&log, &[EventKind::Post], width).unwrap();
            assert_eq!(s.total(), 23, "width {width}");
        }
    }

    #[test]
    fn participation_partition() {
        let events = vec![
            ev("p1", "a", 10, EventKind::Post),
            ev("p2", "b", 20, EventKind::Post),
            ev("w1", "c", 30, EventKind::View),
        ];
        let log = log_of(events, 100, Some(10));
        let s = participation_summary(&log);
        assert_eq!((s.posters, s.viewers_only, s.inactive_enrolled), (2, 1, 7));
        assert_eq!(s.posters + s.viewers_only + s.inactive_enrolled, log.enrolled_count());
    }

    #[test]
    fn everyone_posts_once() {
        let events: Vec<ForumEvent> =
            (0..4).map(|i| ev(&format!("p{i}"), &format!("L{i}"), 10 + i, EventKind::Post)).collect();
        let log = log_of(events, 100, Some(4));
        let s = participation_summary(&log);
        assert_eq!(s.viewers_only, 0);
        assert_eq!(s.posts_per_poster.unwrap().mean, 1.0);
    }

    #[test]
    fn poster_distribution_hand_computed() {
        // post counts {1, 1, 2, 3, 8}
        let mut events = Vec::new();
        let mut n = 0;
        for (learner, count) in [("a", 1), ("b", 1), ("c", 2), ("d", 3), ("e", 8)] {
            for _ in 0..count {
                events.push(ev(&format!("p{n}"), learner, 10 + n, EventKind::Post));
                n += 1;
            }
        }
        let log = log_of(events, 100, None);
        let d = participation_summary(&log).posts_per_poster.unwrap();
        assert_eq!(d.median, 2.0);
        assert_eq!(d.mean, 3.0);
        assert_eq!((d.min, d.max), (1, 8));
    }

    #[test]
    fn survey_rate_flags() {
        let events = vec![ev("p1", "a", 10, EventKind::Post)];
        let mut log = log_of(events, 100, Some(10_000));
        // no respondents
        let r = survey_response_rate(&log).unwrap();
        assert_eq!(r.rate, 0.0);
        assert!(r.low_response_flag);

        // 500 / 10000 -> 0.05, flagged
        let mut learners = log.learners().clone();
        for i in 0..500 {
            let id = LearnerId::new(format!("s{i}"));
            let mut rec = crate::model::LearnerRecord::default();
            rec.survey_responses.insert("q".into(), "yes".into());
            learners.insert(id, rec);
        }
        log = log.clone().with_learners(learners.clone()).unwrap();
        let r = survey_response_rate(&log).unwrap();
        assert!((r.rate - 0.05).abs() < 1e-12);
        assert!(r.low_response_flag);

        // 2000 / 10000 -> 0.2, unflagged
        for i in 500..2000 {
            let id = LearnerId::new(format!("s{i}"));
            let mut rec = crate::model::LearnerRecord::default();
            rec.survey_responses.insert("q".into(), "yes".into());
            learners.insert(id, rec);
        }
        let log = log.with_learners(learners).unwrap();
        let r = survey_response_rate(&log).unwrap();
        assert!((r.rate - 0.2).abs() < 1e-12);
        assert!(!r.low_response_flag);
    }
}
