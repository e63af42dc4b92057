//! Co-posting network construction.
//!
//! Learners are nodes if they posted or commented at least once in scope; an
//! edge connects two learners per distinct thread they both posted in, with
//! edge weight counting those shared threads. Networks are undirected, have
//! no self-edges, and views/votes never create nodes or edges.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventLog, LearnerId, ThreadId};

/// One half-open time slice `[start, end)` of the course interval.
/// Consecutive windows tile the interval; the last is truncated at course
/// end, and an event falling exactly on course end belongs to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub start: i64,
    pub end: i64,
}

/// Cuts the course interval into `ceil(duration / width)` windows.
pub fn window_slices(log: &EventLog, width_secs: i64) -> Result<Vec<Window>> {
    if width_secs <= 0 {
        return Err(Error::Invalid("window width must be positive".into()));
    }
    let (start, end) = log.course_interval();
    let mut windows = Vec::new();
    let mut cursor = start;
    let mut index = 0;
    while cursor < end {
        let stop = (cursor + width_secs).min(end);
        windows.push(Window { index, start: cursor, end: stop });
        cursor = stop;
        index += 1;
    }
    Ok(windows)
}

/// Restriction of an analysis to a time window and/or sub-forum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub window: Option<Window>,
    pub subforum: Option<String>,
}

impl Scope {
    pub fn whole_course() -> Self {
        Self::default()
    }

    pub fn window(window: Window) -> Self {
        Self { window: Some(window), subforum: None }
    }

    pub fn describe(&self) -> String {
        let w = self
            .window
            .map_or("whole-course".to_string(), |w| format!("window {} [{}, {})", w.index, w.start, w.end));
        let s = self.subforum.as_deref().unwrap_or("all sub-forums");
        format!("{w}, {s}")
    }

    /// Whether a (timestamp, subforum) event falls inside this scope. Events
    /// exactly at the window's end are included only when the window is the
    /// final slice touching course end.
    fn contains(&self, timestamp: i64, subforum: &str, course_end: i64) -> bool {
        if let Some(w) = self.window {
            let in_window =
                timestamp >= w.start && (timestamp < w.end || (w.end == course_end && timestamp == course_end));
            if !in_window {
                return false;
            }
        }
        match &self.subforum {
            Some(f) => f == subforum,
            None => true,
        }
    }
}

/// Learner-to-thread participation within a scope: the bipartite structure
/// that co-posting networks project down from.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteIncidence {
    participation: BTreeMap<LearnerId, BTreeSet<ThreadId>>,
    threads: BTreeSet<ThreadId>,
    scope: Scope,
}

impl BipartiteIncidence {
    /// Collects post/comment participation in scope. Views and votes
    /// contribute nothing.
    pub fn from_log(log: &EventLog, scope: &Scope) -> Self {
        let (_, course_end) = log.course_interval();
        let mut participation: BTreeMap<LearnerId, BTreeSet<ThreadId>> = BTreeMap::new();
        let mut threads = BTreeSet::new();
        for ev in log.events() {
            if !ev.kind.is_textual() {
                continue;
            }
            if !scope.contains(ev.timestamp, &ev.subforum, course_end) {
                continue;
            }
            participation.entry(ev.learner.clone()).or_default().insert(ev.thread.clone());
            threads.insert(ev.thread.clone());
        }
        Self { participation, threads, scope: scope.clone() }
    }

    /// Builds directly from (learner, thread) pairs; used by null-model
    /// resampling and test fixtures.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (LearnerId, ThreadId)>, scope: Scope) -> Self {
        let mut participation: BTreeMap<LearnerId, BTreeSet<ThreadId>> = BTreeMap::new();
        let mut threads = BTreeSet::new();
        for (learner, thread) in pairs {
            participation.entry(learner).or_default().insert(thread.clone());
            threads.insert(thread);
        }
        Self { participation, threads, scope }
    }

    pub fn participation(&self) -> &BTreeMap<LearnerId, BTreeSet<ThreadId>> {
        &self.participation
    }

    /// Threads per learner, `d_i`.
    pub fn learner_degree(&self, learner: &LearnerId) -> usize {
        self.participation.get(learner).map_or(0, |t| t.len())
    }

    /// Posters per thread, `k_t`.
    pub fn thread_sizes(&self) -> BTreeMap<ThreadId, usize> {
        let mut sizes: BTreeMap<ThreadId, usize> =
            self.threads.iter().map(|t| (t.clone(), 0)).collect();
        for threads in self.participation.values() {
            for t in threads {
                *sizes.get_mut(t).expect("thread registered") += 1;
            }
        }
        sizes
    }

    /// Number of threads in scope, `T`.
    pub fn thread_count(&self) -> usize {
        self.threads.len()
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Projects down to the weighted co-posting network: edge weight is the
    /// number of distinct shared threads.
    pub fn project(&self) -> CommNetwork {
        let mut by_thread: BTreeMap<&ThreadId, Vec<&LearnerId>> = BTreeMap::new();
        for (learner, threads) in &self.participation {
            for t in threads {
                by_thread.entry(t).or_default().push(learner);
            }
        }
        let mut edges: BTreeMap<(LearnerId, LearnerId), u32> = BTreeMap::new();
        for members in by_thread.values() {
            for i in 0..members.len() {
                for j in (i + 1)..members.len() {
                    // members are in BTreeMap order, so i < j is canonical
                    let key = (members[i].clone(), members[j].clone());
                    *edges.entry(key).or_insert(0) += 1;
                }
            }
        }
        CommNetwork {
            nodes: self.participation.keys().cloned().collect(),
            edges,
            scope: self.scope.clone(),
        }
    }
}

/// Weighted undirected co-posting network for one scope.
///
/// Edge keys are canonically ordered pairs `(a, b)` with `a < b`; weights are
/// always at least 1. Isolated nodes (learners who posted but shared no
/// thread) are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommNetwork {
    nodes: BTreeSet<LearnerId>,
    edges: BTreeMap<(LearnerId, LearnerId), u32>,
    scope: Scope,
}

impl CommNetwork {
    /// Assembles a network from parts, canonicalizing edge order and
    /// rejecting self-edges and endpoints outside the node set.
    pub fn from_parts(
        nodes: BTreeSet<LearnerId>,
        edges: impl IntoIterator<Item = ((LearnerId, LearnerId), u32)>,
        scope: Scope,
    ) -> Result<Self> {
        let mut canonical = BTreeMap::new();
        for ((a, b), w) in edges {
            if a == b {
                return Err(Error::Invalid(format!("self-edge on `{a}`")));
            }
            if w == 0 {
                return Err(Error::Invalid(format!("zero-weight edge ({a}, {b})")));
            }
            if !nodes.contains(&a) || !nodes.contains(&b) {
                return Err(Error::Invalid(format!("edge ({a}, {b}) references unknown node")));
            }
            let key = if a < b { (a, b) } else { (b, a) };
            *canonical.entry(key).or_insert(0) += w;
        }
        Ok(Self { nodes, edges: canonical, scope })
    }

    pub fn nodes(&self) -> &BTreeSet<LearnerId> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonically ordered `((a, b), weight)` entries.
    pub fn edges(&self) -> impl Iterator<Item = (&(LearnerId, LearnerId), u32)> {
        self.edges.iter().map(|(k, w)| (k, *w))
    }

    pub fn weight(&self, a: &LearnerId, b: &LearnerId) -> Option<u32> {
        let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        self.edges.get(&key).copied()
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Unweighted degree per node; isolated nodes report 0.
    pub fn degree_sequence(&self) -> BTreeMap<LearnerId, usize> {
        let mut degrees: BTreeMap<LearnerId, usize> =
            self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for (a, b) in self.edges.keys() {
            *degrees.get_mut(a).expect("endpoint in node set") += 1;
            *degrees.get_mut(b).expect("endpoint in node set") += 1;
        }
        degrees
    }

    /// Edge-list CSV: `learner_a,learner_b,weight`, canonical order.
    pub fn write_edge_list(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["learner_a", "learner_b", "weight"])?;
        for ((a, b), weight) in &self.edges {
            w.write_record([a.as_str(), b.as_str(), &weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Node-list CSV including isolates.
    pub fn write_node_list(&self, out: impl Write) -> Result<()> {
        let degrees = self.degree_sequence();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["learner_id", "degree"])?;
        for (node, degree) in &degrees {
            w.write_record([node.as_str(), &degree.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON header recording scope metadata and sizes.
    pub fn scope_header(&self) -> serde_json::Value {
        serde_json::json!({
            "scope": self.scope,
            "nodes": self.node_count(),
            "edges": self.edge_count(),
        })
    }
}

/// Builds the co-posting network for one scope. Node per learner with at
/// least one post/comment in scope; edge weight counts distinct shared
/// threads in scope.
pub fn build_conetwork(log: &EventLog, scope: &Scope) -> CommNetwork {
    BipartiteIncidence::from_log(log, scope).project()
}
