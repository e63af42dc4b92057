//! Network vulnerability: attack curves under node removal, the
//! vulnerability index, and critical sets of learners whose removal
//! fragments discussion.
//!
//! Removal strategies recompute their target metric after every removal
//! (adaptive targeting). Ties always break by lexicographic learner id so
//! runs are deterministic. The largest-connected-component fraction is
//! always relative to the original node count, isolates included.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LearnerId;
use crate::network::CommNetwork;
use crate::seeding::sub_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStrategy {
    DegreeRecomputed,
    BetweennessRecomputed,
    Random,
}

impl AttackStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackStrategy::DegreeRecomputed => "degree_recomputed",
            AttackStrategy::BetweennessRecomputed => "betweenness_recomputed",
            AttackStrategy::Random => "random",
        }
    }
}

impl std::str::FromStr for AttackStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "degree" | "degree_recomputed" => Ok(AttackStrategy::DegreeRecomputed),
            "betweenness" | "betweenness_recomputed" => Ok(AttackStrategy::BetweennessRecomputed),
            "random" => Ok(AttackStrategy::Random),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// LCC fraction after each removal. `points[m] = (m/N, lcc_m/N)`; the first
/// point is the intact network and the last has everything removed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackCurve {
    pub points: Vec<(f64, f64)>,
    pub strategy: AttackStrategy,
    pub replicates: usize,
}

/// Ordered node prefix whose removal drives the LCC fraction to `epsilon`
/// or below; empty when the network already satisfies the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalSet {
    pub nodes: Vec<LearnerId>,
    pub epsilon: f64,
    pub achieved_lcc: f64,
}

/// Index-based adjacency view of a network; ids are sorted so index order
/// is lexicographic learner-id order.
struct IndexedGraph {
    ids: Vec<LearnerId>,
    adj: Vec<Vec<usize>>,
}

impl IndexedGraph {
    fn from_network(net: &CommNetwork) -> Self {
        let ids: Vec<LearnerId> = net.nodes().iter().cloned().collect();
        let index = |id: &LearnerId| ids.binary_search(id).expect("node indexed");
        let mut adj = vec![Vec::new(); ids.len()];
        for ((a, b), _) in net.edges() {
            let (i, j) = (index(a), index(b));
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Self { ids, adj }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn lcc_size(&self, alive: &[bool]) -> usize {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        let mut best = 0;
        for start in 0..n {
            if !alive[start] || seen[start] {
                continue;
            }
            let mut size = 0;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                size += 1;
                for &u in &self.adj[v] {
                    if alive[u] && !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            best = best.max(size);
        }
        best
    }

    fn degrees(&self, alive: &[bool]) -> Vec<f64> {
        (0..self.len())
            .map(|v| {
                if !alive[v] {
                    return -1.0;
                }
                self.adj[v].iter().filter(|&&u| alive[u]).count() as f64
            })
            .collect()
    }

    /// Exact betweenness centrality on the alive subgraph (Brandes 2001,
    /// unweighted). Each unordered pair contributes once.
    fn betweenness(&self, alive: &[bool]) -> Vec<f64> {
        let n = self.len();
        let mut centrality = vec![0.0f64; n];
        for s in 0..n {
            if !alive[s] {
                centrality[s] = -1.0;
                continue;
            }
            let mut stack = Vec::new();
            let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut sigma = vec![0.0f64; n];
            let mut dist = vec![-1i64; n];
            sigma[s] = 1.0;
            dist[s] = 0;
            let mut queue = VecDeque::new();
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                stack.push(v);
                for &w in &self.adj[v] {
                    if !alive[w] {
                        continue;
                    }
                    if dist[w] < 0 {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                    if dist[w] == dist[v] + 1 {
                        sigma[w] += sigma[v];
                        preds[w].push(v);
                    }
                }
            }
            let mut delta = vec![0.0f64; n];
            while let Some(w) = stack.pop() {
                for &v in &preds[w] {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
                if w != s {
                    centrality[w] += delta[w];
                }
            }
        }
        // undirected: every pair was counted from both endpoints
        for (v, c) in centrality.iter_mut().enumerate() {
            if alive[v] {
                *c /= 2.0;
            }
        }
        centrality
    }
}

/// Smallest index holding the maximum score; dead nodes carry -1 and never
/// win. Index order is lexicographic id order, which is the tie rule.
fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best
}

fn removal_order_deterministic(graph: &IndexedGraph, strategy: AttackStrategy) -> Vec<usize> {
    let n = graph.len();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let scores = match strategy {
            AttackStrategy::DegreeRecomputed => graph.degrees(&alive),
            AttackStrategy::BetweennessRecomputed => graph.betweenness(&alive),
            AttackStrategy::Random => unreachable!("random handled separately"),
        };
        let target = argmax_first(&scores);
        alive[target] = false;
        order.push(target);
    }
    order
}

fn curve_for_order(graph: &IndexedGraph, order: &[usize]) -> Vec<f64> {
    let n = graph.len();
    let mut alive = vec![true; n];
    let mut lcc = Vec::with_capacity(n + 1);
    lcc.push(graph.lcc_size(&alive) as f64 / n as f64);
    for &v in order {
        alive[v] = false;
        lcc.push(graph.lcc_size(&alive) as f64 / n as f64);
    }
    lcc
}

/// Removes one node at a time under `strategy`, recording the LCC fraction
/// after each removal. Random curves are averaged over `replicates` runs
/// with order-independent sub-seeding.
pub fn attack_curve(
    net: &CommNetwork,
    strategy: AttackStrategy,
    replicates: usize,
    seed: u64,
) -> Result<AttackCurve> {
    let graph = IndexedGraph::from_network(net);
    let n = graph.len();
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    if replicates == 0 {
        return Err(Error::Invalid("at least one replicate required".into()));
    }
    let (lcc, replicates) = match strategy {
        AttackStrategy::Random => {
            let sums: Vec<f64> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, r as u64));
                    let mut order: Vec<usize> = (0..n).collect();
                    order.shuffle(&mut rng);
                    curve_for_order(&graph, &order)
                })
                .reduce(
                    || vec![0.0; n + 1],
                    |mut acc, curve| {
                        for (a, c) in acc.iter_mut().zip(&curve) {
                            *a += c;
                        }
                        acc
                    },
                );
            (sums.into_iter().map(|s| s / replicates as f64).collect::<Vec<_>>(), replicates)
        }
        _ => {
            let order = removal_order_deterministic(&graph, strategy);
            (curve_for_order(&graph, &order), 1)
        }
    };
    let points = lcc
        .into_iter()
        .enumerate()
        .map(|(m, frac)| (m as f64 / n as f64, frac))
        .collect();
    Ok(AttackCurve { points, strategy, replicates })
}

/// Smallest removed fraction on the curve with LCC fraction at or below
/// `epsilon`; 1.0 when the curve never reaches it.
pub fn vulnerability_index(curve: &AttackCurve, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(curve
        .points
        .iter()
        .find(|(_, lcc)| *lcc <= epsilon)
        .map_or(1.0, |(fraction, _)| *fraction))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(Error::Invalid("epsilon must lie strictly between 0 and 1".into()));
    }
    Ok(())
}

/// The removal prefix realizing the vulnerability index under `strategy`.
/// For the random strategy this follows the replicate-0 removal order of
/// the given seed.
pub fn critical_set(
    net: &CommNetwork,
    strategy: AttackStrategy,
    epsilon: f64,
    seed: u64,
) -> Result<CriticalSet> {
    check_epsilon(epsilon)?;
    let graph = IndexedGraph::from_network(net);
    let n = graph.len();
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    let order = match strategy {
        AttackStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        }
        _ => removal_order_deterministic(&graph, strategy),
    };
    let mut alive = vec![true; n];
    let mut achieved = graph.lcc_size(&alive) as f64 / n as f64;
    let mut nodes = Vec::new();
    for &v in &order {
        if achieved <= epsilon {
            break;
        }
        alive[v] = false;
        nodes.push(graph.ids[v].clone());
        achieved = graph.lcc_size(&alive) as f64 / n as f64;
    }
    Ok(CriticalSet { nodes, epsilon, achieved_lcc: achieved })
}

/// Default size cap for the exact oracle below.
pub const BRUTE_FORCE_DEFAULT_MAX: usize = 12;

/// Exact minimum-cardinality node set achieving LCC fraction <= epsilon, by
/// subset enumeration in increasing size; ties break lexicographically.
/// Exponential: refuses networks larger than `max_n`.
pub fn brute_force_min_critical_set(
    net: &CommNetwork,
    epsilon: f64,
    max_n: usize,
) -> Result<CriticalSet> {
    check_epsilon(epsilon)?;
    let graph = IndexedGraph::from_network(net);
    let n = graph.len();
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    if n > max_n {
        return Err(Error::OracleTooLarge { nodes: n, max: max_n });
    }
    for size in 0..=n {
        let mut combo: Vec<usize> = (0..size).collect();
        'combos: loop {
            let mut alive = vec![true; n];
            for &v in &combo {
                alive[v] = false;
            }
            let lcc = graph.lcc_size(&alive) as f64 / n as f64;
            if lcc <= epsilon {
                return Ok(CriticalSet {
                    nodes: combo.iter().map(|&v| graph.ids[v].clone()).collect(),
                    epsilon,
                    achieved_lcc: lcc,
                });
            }
            if size == 0 {
                break;
            }
            // advance to the next lexicographic size-combination of 0..n
            let mut i = size;
            while i > 0 {
                i -= 1;
                if combo[i] != i + n - size {
                    combo[i] += 1;
                    for j in (i + 1)..size {
                        combo[j] = combo[j - 1] + 1;
                    }
                    continue 'combos;
                }
            }
            break;
        }
    }
    unreachable!("removing all nodes always yields an empty LCC");
}

/// `attack_curve.csv` rows: `fraction,lcc`.
pub fn write_attack_curve_csv(curve: &AttackCurve, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fraction", "lcc"])?;
    for (fraction, lcc) in &curve.points {
        w.write_record([format!("{fraction}"), format!("{lcc}")])?;
    }
    w.flush()?;
    Ok(())
}
