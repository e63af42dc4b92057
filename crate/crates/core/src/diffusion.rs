//! Susceptible-Infected information spread on communication networks.
//!
//! Synchronous discrete time: at every step each infected-susceptible
//! adjacent pair transmits independently with probability beta, so a
//! susceptible node with m infected neighbors is infected with probability
//! 1 - (1-beta)^m. There is no recovery. Traces measure the potential for
//! information to flow, not actual message content.
//!
//! The weighted mode folds edge weight w into the per-edge probability as
//! 1 - (1-beta)^w, as if each shared thread were an independent contact.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mathutil::mean_stddev;
use crate::model::{EventLog, LearnerId};
use crate::network::{build_conetwork, window_slices, CommNetwork, Scope};
use crate::seeding::sub_seed;

/// Per-step compartment sizes for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfectionTrace {
    /// susceptible[s] + infected[s] equals the node count at every step;
    /// index 0 is the initial state.
    pub susceptible: Vec<usize>,
    pub infected: Vec<usize>,
    pub seeds: BTreeSet<LearnerId>,
    pub beta: f64,
    pub weighted: bool,
    pub scope: Scope,
}

impl InfectionTrace {
    pub fn node_count(&self) -> usize {
        self.susceptible[0] + self.infected[0]
    }

    pub fn steps(&self) -> usize {
        self.infected.len() - 1
    }

    /// Final fraction infected.
    pub fn coverage(&self) -> f64 {
        *self.infected.last().expect("nonempty trace") as f64 / self.node_count() as f64
    }

    /// First step with coverage at or above one half, if reached.
    pub fn time_to_half(&self) -> Option<usize> {
        let n = self.node_count() as f64;
        self.infected.iter().position(|&i| i as f64 / n >= 0.5)
    }
}

struct SiGraph {
    ids: Vec<LearnerId>,
    /// (neighbor index, transmission probability) per node
    adj: Vec<Vec<(usize, f64)>>,
}

impl SiGraph {
    fn from_network(net: &CommNetwork, beta: f64, weighted: bool) -> Self {
        let ids: Vec<LearnerId> = net.nodes().iter().cloned().collect();
        let index = |id: &LearnerId| ids.binary_search(id).expect("node indexed");
        let mut adj = vec![Vec::new(); ids.len()];
        for ((a, b), w) in net.edges() {
            let p = if weighted { 1.0 - (1.0 - beta).powi(w as i32) } else { beta };
            let (i, j) = (index(a), index(b));
            adj[i].push((j, p));
            adj[j].push((i, p));
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|e| e.0);
        }
        Self { ids, adj }
    }
}

fn resolve_seeds(ids: &[LearnerId], seeds: &BTreeSet<LearnerId>) -> Result<Vec<usize>> {
    seeds
        .iter()
        .map(|s| {
            ids.binary_search(s).map_err(|_| Error::SeedNotInNetwork(s.clone()))
        })
        .collect()
}

/// One synchronous SI step over the active graph. Iteration order is fixed
/// (ascending node index, ascending neighbor index) so a given RNG stream
/// always produces the same outcome.
fn si_step(graph: &SiGraph, infected: &mut [bool], rng: &mut ChaCha8Rng) -> usize {
    let mut newly = Vec::new();
    for v in 0..graph.ids.len() {
        if infected[v] {
            continue;
        }
        for &(u, p) in &graph.adj[v] {
            if !infected[u] {
                continue;
            }
            if rng.random::<f64>() < p {
                newly.push(v);
                break;
            }
        }
    }
    for v in &newly {
        infected[*v] = true;
    }
    newly.len()
}

fn any_frontier(graph: &SiGraph, infected: &[bool]) -> bool {
    (0..graph.ids.len()).any(|v| {
        !infected[v] && graph.adj[v].iter().any(|&(u, _)| infected[u])
    })
}

/// Simulates SI spread on a static network. Stops at `max_steps` or as soon
/// as no susceptible node has an infected neighbor. Deterministic given
/// `seed`.
pub fn simulate_si(
    net: &CommNetwork,
    seeds: &BTreeSet<LearnerId>,
    beta: f64,
    max_steps: usize,
    seed: u64,
    weighted: bool,
) -> Result<InfectionTrace> {
    check_beta(beta)?;
    let graph = SiGraph::from_network(net, beta, weighted);
    let seed_idx = resolve_seeds(&graph.ids, seeds)?;
    let n = graph.ids.len();
    let mut infected = vec![false; n];
    for &s in &seed_idx {
        infected[s] = true;
    }
    let mut trace_infected = vec![seed_idx.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_steps {
        if !any_frontier(&graph, &infected) {
            break;
        }
        si_step(&graph, &mut infected, &mut rng);
        trace_infected.push(infected.iter().filter(|&&i| i).count());
    }
    Ok(finish_trace(trace_infected, n, seeds, beta, weighted, net.scope().clone()))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Invalid("beta must lie in [0, 1]".into()));
    }
    Ok(())
}

fn finish_trace(
    trace_infected: Vec<usize>,
    n: usize,
    seeds: &BTreeSet<LearnerId>,
    beta: f64,
    weighted: bool,
    scope: Scope,
) -> InfectionTrace {
    InfectionTrace {
        susceptible: trace_infected.iter().map(|&i| n - i).collect(),
        infected: trace_infected,
        seeds: seeds.clone(),
        beta,
        weighted,
        scope,
    }
}

/// Simulates SI spread where only the edges of each time window's network
/// are active during that window: one synchronous step per window in
/// chronological order. The node universe is the whole-course network under
/// the same sub-forum scope.
pub fn simulate_si_temporal(
    log: &EventLog,
    subforum: Option<&str>,
    window_width: i64,
    seeds: &BTreeSet<LearnerId>,
    beta: f64,
    seed: u64,
    weighted: bool,
) -> Result<InfectionTrace> {
    check_beta(beta)?;
    let whole_scope = Scope { window: None, subforum: subforum.map(String::from) };
    let universe = build_conetwork(log, &whole_scope);
    let ids: Vec<LearnerId> = universe.nodes().iter().cloned().collect();
    let seed_idx = resolve_seeds(&ids, seeds)?;
    let n = ids.len();
    let mut infected = vec![false; n];
    for &s in &seed_idx {
        infected[s] = true;
    }
    let mut trace_infected = vec![seed_idx.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for window in window_slices(log, window_width)? {
        let scope = Scope { window: Some(window), subforum: subforum.map(String::from) };
        let win_net = build_conetwork(log, &scope);
        // map window edges onto the universe index space
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for ((a, b), w) in win_net.edges() {
            let p = if weighted { 1.0 - (1.0 - beta).powi(w as i32) } else { beta };
            let i = ids.binary_search(a).expect("window node in universe");
            let j = ids.binary_search(b).expect("window node in universe");
            adj[i].push((j, p));
            adj[j].push((i, p));
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|e| e.0);
        }
        let graph = SiGraph { ids: ids.clone(), adj };
        si_step(&graph, &mut infected, &mut rng);
        trace_infected.push(infected.iter().filter(|&&i| i).count());
    }
    Ok(finish_trace(trace_infected, n, seeds, beta, weighted, whole_scope))
}

/// Runs `replicates` independent simulations with order-independent
/// sub-seeds.
pub fn simulate_si_replicates(
    net: &CommNetwork,
    seeds: &BTreeSet<LearnerId>,
    beta: f64,
    max_steps: usize,
    replicates: usize,
    seed: u64,
    weighted: bool,
) -> Result<Vec<InfectionTrace>> {
    if replicates == 0 {
        return Err(Error::Invalid("at least one replicate required".into()));
    }
    (0..replicates)
        .into_par_iter()
        .map(|r| simulate_si(net, seeds, beta, max_steps, sub_seed(seed, r as u64), weighted))
        .collect()
}

/// Aggregate over a homogeneous replicate set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionSummary {
    pub replicates: usize,
    pub mean_coverage: f64,
    pub stddev_coverage: f64,
    /// Mean first step reaching half coverage; `None` when any replicate
    /// never reached it (the mean of values including infinity).
    pub mean_time_to_half: Option<f64>,
    pub unreached_half: usize,
}

/// Summarizes traces that share scope, beta and weighting.
pub fn diffusion_summary(traces: &[InfectionTrace]) -> Result<DiffusionSummary> {
    let first = traces.first().ok_or(Error::MixedTraceScopes)?;
    if traces.iter().any(|t| {
        t.scope != first.scope || t.beta != first.beta || t.weighted != first.weighted
    }) {
        return Err(Error::MixedTraceScopes);
    }
    let coverages: Vec<f64> = traces.iter().map(|t| t.coverage()).collect();
    let (mean_coverage, stddev_coverage) = mean_stddev(&coverages);
    let halves: Vec<Option<usize>> = traces.iter().map(|t| t.time_to_half()).collect();
    let unreached_half = halves.iter().filter(|h| h.is_none()).count();
    let mean_time_to_half = if unreached_half > 0 {
        None
    } else {
        let (m, _) = mean_stddev(&halves.iter().map(|h| h.unwrap() as f64).collect::<Vec<_>>());
        Some(m)
    };
    Ok(DiffusionSummary {
        replicates: traces.len(),
        mean_coverage,
        stddev_coverage,
        mean_time_to_half,
        unreached_half,
    })
}

/// Tidy trace CSV: `replicate,step,infected_count`.
pub fn write_traces_csv(traces: &[InfectionTrace], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replicate", "step", "infected_count"])?;
    for (r, trace) in traces.iter().enumerate() {
        for (step, count) in trace.infected.iter().enumerate() {
            w.write_record([r.to_string(), step.to_string(), count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
