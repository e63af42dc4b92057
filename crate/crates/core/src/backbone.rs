//! Significance filtering of co-posting networks.
//!
//! The observed network is treated as a noise-corrupted version of an
//! underlying interaction network: a pair may share a thread purely because
//! both learners are active or because threads are large. Both filters below
//! condition on exactly those two confounds, via a fixed-degree bipartite
//! null (each learner keeps their thread count `d_i`, each thread keeps its
//! poster count `k_t`):
//!
//! - the analytic route scores an edge by the hypergeometric tail of its
//!   shared-thread count, conditioning on `d_i`, `d_j` and the thread total;
//! - the Monte Carlo route resamples whole participation graphs by
//!   degree-preserving edge swaps and compares the observed weight against
//!   the replicated ones.
//!
//! The two routes are deliberately independent of one another so each can
//! serve as an oracle for the other on small instances.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mathutil::{ln_choose, ln_factorial_table};
use crate::model::{LearnerId, ThreadId};
use crate::network::{BipartiteIncidence, CommNetwork};
use crate::seeding::sub_seed;

/// How an edge p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SigMethod {
    Analytic,
    MonteCarlo,
}

impl SigMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SigMethod::Analytic => "analytic",
            SigMethod::MonteCarlo => "montecarlo",
        }
    }
}

/// Per-edge significance: observed weight, expected weight under the null,
/// and the upper-tail p-value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSignificance {
    pub a: LearnerId,
    pub b: LearnerId,
    pub weight: u32,
    pub expected: f64,
    pub p_value: f64,
    pub method: SigMethod,
}

/// P(W >= w) where W is the number of shared threads between two learners
/// holding `di` and `dj` of `t` threads, each chosen uniformly without
/// replacement and independently of the other:
/// P(W = k) = C(dj, k) C(t - dj, di - k) / C(t, di).
pub fn hypergeometric_p_at_least(w: u32, t: u64, di: u64, dj: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Invalid("incidence has no threads".into()));
    }
    if di > t || dj > t {
        return Err(Error::Invalid(format!(
            "inconsistent incidence: learner degree ({di} or {dj}) exceeds thread count {t}"
        )));
    }
    let w = u64::from(w);
    let lo = di.saturating_sub(t - dj); // support lower bound max(0, di+dj-t)
    let hi = di.min(dj);
    if w <= lo {
        return Ok(1.0);
    }
    if w > hi {
        return Ok(0.0);
    }
    let table = ln_factorial_table(t as usize);
    let ln_denom = ln_choose(&table, t, di);
    let mut p = 0.0;
    for k in w..=hi {
        let ln_pmf = ln_choose(&table, dj, k) + ln_choose(&table, t - dj, di - k) - ln_denom;
        p += ln_pmf.exp();
    }
    Ok(p.min(1.0))
}

/// Scores every edge of `net` against the analytic hypergeometric null.
/// `net` must be built from the same scope as `inc`.
pub fn edge_significance_analytic(
    inc: &BipartiteIncidence,
    net: &CommNetwork,
) -> Result<Vec<EdgeSignificance>> {
    let t = inc.thread_count() as u64;
    let mut out = Vec::with_capacity(net.edge_count());
    for ((a, b), weight) in net.edges() {
        let di = inc.learner_degree(a) as u64;
        let dj = inc.learner_degree(b) as u64;
        if di == 0 || dj == 0 {
            return Err(Error::Invalid(format!(
                "edge ({a}, {b}) has an endpoint missing from the incidence scope"
            )));
        }
        let p_value = hypergeometric_p_at_least(weight, t, di, dj)?;
        out.push(EdgeSignificance {
            a: a.clone(),
            b: b.clone(),
            weight,
            expected: di as f64 * dj as f64 / t as f64,
            p_value,
            method: SigMethod::Analytic,
        });
    }
    Ok(out)
}

/// Attempted swaps per bipartite edge in each replicate chain: the usual
/// `10 x |edges|` mixing heuristic.
pub const SWAPS_PER_EDGE: usize = 10;

/// Degree-preserving randomizations of the learner-thread graph.
#[derive(Debug, Clone)]
pub struct NullIncidences {
    pub incidences: Vec<BipartiteIncidence>,
    /// Set when no swap ever succeeded: the bipartite graph admits no
    /// alternative configuration (e.g. a single thread), so every replicate
    /// equals the observed graph.
    pub degenerate: bool,
    /// Total successful swaps across all replicates, recorded as mixing
    /// metadata.
    pub successful_swaps: u64,
}

/// Projections of [`NullIncidences`] to co-posting networks.
#[derive(Debug, Clone)]
pub struct NullSamples {
    pub networks: Vec<CommNetwork>,
    pub degenerate: bool,
    pub successful_swaps: u64,
}

/// Resamples the learner-thread bipartite graph by edge-swap shuffling,
/// preserving every learner degree `d_i` and thread size `k_t` exactly.
///
/// Each replicate runs an independent swap chain from the observed graph
/// with `SWAPS_PER_EDGE x |edges|` attempted swaps, seeded by
/// `sub_seed(seed, replicate)`, so generation is order-independent and
/// byte-identical under a fixed seed.
pub fn sample_null_incidences(
    inc: &BipartiteIncidence,
    replicates: usize,
    seed: u64,
) -> Result<NullIncidences> {
    if replicates == 0 {
        return Err(Error::Invalid("at least one replicate required".into()));
    }
    // index the bipartite edges
    let learners: Vec<&LearnerId> = inc.participation().keys().collect();
    let mut threads: Vec<&ThreadId> = Vec::new();
    let mut thread_index: BTreeMap<&ThreadId, u32> = BTreeMap::new();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for (li, (_, ts)) in inc.participation().iter().enumerate() {
        for t in ts {
            let ti = *thread_index.entry(t).or_insert_with(|| {
                threads.push(t);
                (threads.len() - 1) as u32
            });
            edges.push((li as u32, ti));
        }
    }

    let results: Vec<(BipartiteIncidence, u64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, r as u64));
            let mut es = edges.clone();
            let mut present: HashSet<(u32, u32)> = es.iter().copied().collect();
            let mut successes = 0u64;
            let budget = SWAPS_PER_EDGE * es.len();
            for _ in 0..budget {
                let x = rng.random_range(0..es.len());
                let y = rng.random_range(0..es.len());
                if x == y {
                    continue;
                }
                let (i1, t1) = es[x];
                let (i2, t2) = es[y];
                if i1 == i2 || t1 == t2 {
                    continue;
                }
                if present.contains(&(i1, t2)) || present.contains(&(i2, t1)) {
                    continue;
                }
                present.remove(&(i1, t1));
                present.remove(&(i2, t2));
                present.insert((i1, t2));
                present.insert((i2, t1));
                es[x] = (i1, t2);
                es[y] = (i2, t1);
                successes += 1;
            }
            let replicate = BipartiteIncidence::from_pairs(
                es.iter().map(|&(li, ti)| {
                    (learners[li as usize].clone(), threads[ti as usize].clone())
                }),
                inc.scope().clone(),
            );
            (replicate, successes)
        })
        .collect();

    let successful_swaps: u64 = results.iter().map(|(_, s)| s).sum();
    Ok(NullIncidences {
        incidences: results.into_iter().map(|(i, _)| i).collect(),
        degenerate: successful_swaps == 0,
        successful_swaps,
    })
}

/// Resamples and projects: the sample co-posting networks used for Monte
/// Carlo edge significance.
pub fn sample_null_networks(
    inc: &BipartiteIncidence,
    replicates: usize,
    seed: u64,
) -> Result<NullSamples> {
    let null = sample_null_incidences(inc, replicates, seed)?;
    Ok(NullSamples {
        networks: null.incidences.par_iter().map(|i| i.project()).collect(),
        degenerate: null.degenerate,
        successful_swaps: null.successful_swaps,
    })
}

/// Scores every edge of `net` against sampled null networks with add-one
/// smoothing: p = (1 + #{samples with weight >= observed}) / (1 + #samples).
pub fn edge_significance_montecarlo(
    net: &CommNetwork,
    samples: &[CommNetwork],
) -> Vec<EdgeSignificance> {
    let n = samples.len();
    net.edges()
        .map(|((a, b), weight)| {
            let mut at_least = 0usize;
            let mut total = 0u64;
            for sample in samples {
                let w = sample.weight(a, b).unwrap_or(0);
                total += u64::from(w);
                if w >= weight {
                    at_least += 1;
                }
            }
            EdgeSignificance {
                a: a.clone(),
                b: b.clone(),
                weight,
                expected: total as f64 / n as f64,
                p_value: (1 + at_least) as f64 / (1 + n) as f64,
                method: SigMethod::MonteCarlo,
            }
        })
        .collect()
}

/// A significance-filtered network plus its retention report.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneResult {
    pub network: CommNetwork,
    pub alpha: f64,
    pub edges_before: usize,
    pub edges_after: usize,
}

impl BackboneResult {
    /// Fraction of observed edges that survived the filter.
    pub fn retention(&self) -> f64 {
        if self.edges_before == 0 {
            return 1.0;
        }
        self.edges_after as f64 / self.edges_before as f64
    }
}

/// Retains edges with p-value <= alpha. Nodes are kept even when isolated.
/// Every edge of `net` must be covered by `sig`.
pub fn filter_backbone(
    net: &CommNetwork,
    sig: &[EdgeSignificance],
    alpha: f64,
) -> Result<BackboneResult> {
    let lookup: BTreeMap<(&LearnerId, &LearnerId), f64> =
        sig.iter().map(|s| ((&s.a, &s.b), s.p_value)).collect();
    let mut kept = Vec::new();
    for ((a, b), weight) in net.edges() {
        let key = if a < b { (a, b) } else { (b, a) };
        let p = lookup
            .get(&key)
            .ok_or_else(|| Error::UncoveredEdge(a.clone(), b.clone()))?;
        if *p <= alpha {
            kept.push(((a.clone(), b.clone()), weight));
        }
    }
    let edges_after = kept.len();
    let network = CommNetwork::from_parts(net.nodes().clone(), kept, net.scope().clone())?;
    Ok(BackboneResult { network, alpha, edges_before: net.edge_count(), edges_after })
}

/// `significance.csv` rows: `learner_a,learner_b,weight,expected,p_value,method`.
pub fn write_significance_csv(sig: &[EdgeSignificance], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["learner_a", "learner_b", "weight", "expected", "p_value", "method"])?;
    for s in sig {
        w.write_record([
            s.a.as_str(),
            s.b.as_str(),
            &s.weight.to_string(),
            &format!("{}", s.expected),
            &format!("{}", s.p_value),
            s.method.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Scope;
    use proptest::prelude::*;

    fn pairs(spec: &[(&str, &[&str])]) -> BipartiteIncidence {
        let mut v = Vec::new();
        for (learner, threads) in spec {
            for t in *threads {
                v.push((LearnerId::from(*learner), ThreadId::from(*t)));
            }
        }
        BipartiteIncidence::from_pairs(v, Scope::whole_course())
    }

    #[test]
    fn both_in_every_thread_is_never_significant() {
        let inc = pairs(&[("a", &["t1", "t2", "t3"]), ("b", &["t1", "t2", "t3"])]);
        let net = inc.project();
        let sig = edge_significance_analytic(&inc, &net).unwrap();
        assert_eq!(sig.len(), 1);
        assert_eq!(sig[0].weight, 3);
        assert_eq!(sig[0].p_value, 1.0);
    }

    #[test]
    fn two_singles_sharing_one_thread() {
        // T = 10, d_i = d_j = 1, shared -> p = 1/10
        let mut spec: Vec<(&str, &[&str])> = vec![("a", &["t0"]), ("b", &["t0"])];
        let fillers: Vec<(&str, &[&str])> = vec![
            ("f1", &["t1"]),
            ("f2", &["t2"]),
            ("f3", &["t3"]),
            ("f4", &["t4"]),
            ("f5", &["t5"]),
            ("f6", &["t6"]),
            ("f7", &["t7"]),
            ("f8", &["t8"]),
            ("f9", &["t9"]),
        ];
        spec.extend(fillers);
        let inc = pairs(&spec);
        assert_eq!(inc.thread_count(), 10);
        let net = inc.project();
        let sig = edge_significance_analytic(&inc, &net).unwrap();
        let ab = sig
            .iter()
            .find(|s| s.a == LearnerId::from("a") && s.b == LearnerId::from("b"))
            .unwrap();
        assert!((ab.p_value - 0.1).abs() < 1e-12);
        assert!((ab.expected - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_observed_weight_has_p_one() {
        assert_eq!(hypergeometric_p_at_least(0, 10, 3, 4).unwrap(), 1.0);
    }

    #[test]
    fn inconsistent_incidence_errors() {
        assert!(hypergeometric_p_at_least(1, 0, 0, 0).is_err());
        assert!(hypergeometric_p_at_least(1, 3, 5, 2).is_err());
    }

    #[test]
    fn single_thread_sampling_is_degenerate() {
        let inc = pairs(&[("a", &["t1"]), ("b", &["t1"]), ("c", &["t1"])]);
        let observed = inc.project();
        let samples = sample_null_networks(&inc, 20, 7).unwrap();
        assert!(samples.degenerate);
        for net in &samples.networks {
            assert_eq!(net, &observed);
        }
    }

    #[test]
    fn replicates_preserve_both_degree_sequences() {
        let inc = pairs(&[
            ("a", &["t1", "t2", "t3"]),
            ("b", &["t1", "t4"]),
            ("c", &["t2", "t4", "t5"]),
            ("d", &["t5"]),
            ("e", &["t3", "t5"]),
        ]);
        let d_before: BTreeMap<_, _> = inc
            .participation()
            .iter()
            .map(|(l, t)| (l.clone(), t.len()))
            .collect();
        let k_before = inc.thread_sizes();
        let null = sample_null_incidences(&inc, 50, 99).unwrap();
        assert!(!null.degenerate);
        for rep in &null.incidences {
            let d: BTreeMap<_, _> =
                rep.participation().iter().map(|(l, t)| (l.clone(), t.len())).collect();
            assert_eq!(d, d_before);
            assert_eq!(rep.thread_sizes(), k_before);
        }
    }

    #[test]
    fn two_disjoint_pairs_realize_multiple_configurations() {
        let inc = pairs(&[("a", &["t1"]), ("b", &["t1"]), ("c", &["t2"]), ("d", &["t2"])]);
        let samples = sample_null_networks(&inc, 200, 3).unwrap();
        let distinct: std::collections::BTreeSet<String> = samples
            .networks
            .iter()
            .map(|n| {
                n.edges()
                    .map(|((a, b), _)| format!("{a}-{b}"))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        assert!(distinct.len() >= 2, "only saw {distinct:?}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let inc = pairs(&[
            ("a", &["t1", "t2"]),
            ("b", &["t1", "t3"]),
            ("c", &["t2", "t3"]),
            ("d", &["t1"]),
        ]);
        let s1 = sample_null_networks(&inc, 30, 1234).unwrap();
        let s2 = sample_null_networks(&inc, 30, 1234).unwrap();
        assert_eq!(s1.networks, s2.networks);
        assert_eq!(s1.successful_swaps, s2.successful_swaps);
        let s3 = sample_null_networks(&inc, 30, 1235).unwrap();
        assert_ne!(s1.networks, s3.networks);
    }

    #[test]
    fn montecarlo_smoothing_formula() {
        let inc = pairs(&[("a", &["t1"]), ("b", &["t1"]), ("c", &["t2"]), ("d", &["t2"])]);
        let net = inc.project();
        // all samples identical to observed -> every edge p = 1
        let samples = vec![net.clone(); 199];
        let sig = edge_significance_montecarlo(&net, &samples);
        assert!(sig.iter().all(|s| s.p_value == 1.0));
        // no sample reaches the observed weight -> p = 1/200
        let empty_sample = CommNetwork::from_parts(
            net.nodes().clone(),
            Vec::<((LearnerId, LearnerId), u32)>::new(),
            net.scope().clone(),
        )
        .unwrap();
        let samples = vec![empty_sample; 199];
        let sig = edge_significance_montecarlo(&net, &samples);
        assert!(sig.iter().all(|s| (s.p_value - 0.005).abs() < 1e-12));
    }

    #[test]
    fn filter_identity_and_empty() {
        let inc = pairs(&[
            ("a", &["t1", "t2"]),
            ("b", &["t1", "t2"]),
            ("c", &["t1"]),
            ("d", &["t3"]),
        ]);
        let net = inc.project();
        let sig = edge_significance_analytic(&inc, &net).unwrap();
        let all = filter_backbone(&net, &sig, 1.0).unwrap();
        assert_eq!(&all.network, &net);
        assert_eq!(all.retention(), 1.0);
        let none = filter_backbone(&net, &sig, 0.0).unwrap();
        assert_eq!(none.network.edge_count(), 0);
        // nodes retained even when isolated
        assert_eq!(none.network.node_count(), net.node_count());
    }

    #[test]
    fn filter_requires_full_coverage() {
        let inc = pairs(&[("a", &["t1"]), ("b", &["t1"])]);
        let net = inc.project();
        let err = filter_backbone(&net, &[], 0.05).unwrap_err();
        assert!(matches!(err, Error::UncoveredEdge(_, _)));
    }

    proptest! {
        /// Upper-tail p is non-increasing in the observed weight and always
        /// inside [0, 1].
        #[test]
        fn p_monotone_in_weight(t in 1u64..40, di in 0u64..40, dj in 0u64..40) {
            prop_assume!(di <= t && dj <= t);
            let mut last = 1.0f64;
            for w in 0..=(di.min(dj) as u32 + 1) {
                let p = hypergeometric_p_at_least(w, t, di, dj).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!(p <= last + 1e-12);
                last = p;
            }
        }

        /// Retention fraction grows with alpha.
        #[test]
        fn retention_monotone_in_alpha(seed in any::<u64>()) {
            let inc = pairs(&[
                ("a", &["t1", "t2", "t3"]),
                ("b", &["t1", "t2"]),
                ("c", &["t2", "t3"]),
                ("d", &["t1", "t3"]),
                ("e", &["t4"]),
                ("f", &["t4", "t2"]),
            ]);
            let net = inc.project();
            let samples = sample_null_networks(&inc, 120, seed).unwrap();
            let sig = edge_significance_montecarlo(&net, &samples.networks);
            let mut last = 0.0f64;
            for alpha in [0.0, 0.01, 0.05, 0.2, 0.5, 1.0] {
                let r = filter_backbone(&net, &sig, alpha).unwrap().retention();
                prop_assert!(r >= last);
                last = r;
            }
        }
    }
}
