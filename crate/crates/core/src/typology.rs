//! Learner typology via Bayesian nonnegative matrix factorization.
//!
//! A nonnegative learner-by-feature matrix A is factorized as A ~ W H with
//! per-component precision hyperparameters beta_k (automatic relevance
//! determination): components the data does not support are driven toward
//! zero energy and marked inactive, so the effective number of learner
//! types is selected automatically rather than fixed up front.
//!
//! The fit alternates multiplicative updates of W and H with closed-form
//! re-estimation of beta, monitoring the full objective
//!
//! ```text
//! F = 1/2 ||A - WH||^2
//!   + sum_k [ beta_k/2 (||W_:k||^2 + ||H_k:||^2) + b beta_k
//!             - ((N + M)/2 + a) ln beta_k ]
//! ```
//!
//! Every update is a coordinate descent step on F, so the objective trace
//! is non-increasing. Gamma(a, b) hyperpriors keep beta finite when a
//! component's energy hits zero.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dialogue::{CodedCorpus, Intent, KnowledgePhase};
use crate::error::{Error, Result};
use crate::model::{EventKind, EventLog, LearnerId};
use crate::seeding::sub_seed;

/// Which coder's labels feed code-count feature columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeSource {
    /// Use a single coder's labels verbatim.
    Coder(String),
    /// Per post and dimension, take the majority label across coders; ties
    /// break toward the first label in enum order.
    Majority,
}

/// Which feature columns to build.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub posts: bool,
    pub comments: bool,
    pub threads_touched: bool,
    pub views: bool,
    pub votes_cast: bool,
    /// Append per-intent counts from a coded corpus.
    pub intent_counts: bool,
    /// Append per-phase counts from a coded corpus.
    pub phase_counts: bool,
    pub code_source: CodeSource,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            posts: true,
            comments: true,
            threads_touched: true,
            views: true,
            votes_cast: true,
            intent_counts: true,
            phase_counts: false,
            code_source: CodeSource::Majority,
        }
    }
}

/// Nonnegative learner-by-feature matrix. Learners whose configured
/// features are all zero are excluded from the matrix and reported.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub learners: Vec<LearnerId>,
    pub columns: Vec<String>,
    pub values: Array2<f64>,
    pub excluded: Vec<LearnerId>,
}

impl FeatureMatrix {
    /// Rescales every column to unit mean (columns that are entirely zero
    /// are left alone). Keeps entries nonnegative, unlike z-scoring.
    pub fn scaled_to_unit_mean(&self) -> FeatureMatrix {
        let mut values = self.values.clone();
        for mut col in values.axis_iter_mut(Axis(1)) {
            let mean = col.mean().unwrap_or(0.0);
            if mean > 0.0 {
                col.mapv_inplace(|v| v / mean);
            }
        }
        FeatureMatrix { values, ..self.clone() }
    }
}

/// Majority vote with ties broken toward the lowest key (schema order).
fn majority_by_key<L: Copy, K: Ord>(votes: &[L], key: impl Fn(L) -> K) -> Option<L> {
    let mut counts: BTreeMap<K, (L, usize)> = BTreeMap::new();
    for &v in votes {
        counts.entry(key(v)).or_insert((v, 0)).1 += 1;
    }
    counts
        .into_values()
        .fold(None, |best: Option<(L, usize)>, (label, count)| match best {
            Some((_, c)) if c >= count => best,
            _ => Some((label, count)),
        })
        .map(|(label, _)| label)
}

/// Builds the learner-by-feature count matrix: one row per learner with at
/// least one event, columns per `config`. Code-count columns require a
/// corpus.
pub fn build_feature_matrix(
    log: &EventLog,
    corpus: Option<&CodedCorpus>,
    config: &FeatureConfig,
) -> Result<FeatureMatrix> {
    let wants_codes = config.intent_counts || config.phase_counts;
    if wants_codes && corpus.is_none() {
        return Err(Error::Invalid(
            "feature config requests code-count columns but no coded corpus was supplied".into(),
        ));
    }

    let mut columns: Vec<String> = Vec::new();
    for (enabled, name) in [
        (config.posts, "posts"),
        (config.comments, "comments"),
        (config.threads_touched, "threads_touched"),
        (config.views, "views"),
        (config.votes_cast, "votes_cast"),
    ] {
        if enabled {
            columns.push(name.to_string());
        }
    }
    if config.intent_counts {
        for i in Intent::ALL {
            columns.push(format!("intent:{}", i.as_str()));
        }
    }
    if config.phase_counts {
        for p in KnowledgePhase::ALL {
            columns.push(format!("phase:{}", p.as_str()));
        }
    }
    if columns.is_empty() {
        return Err(Error::Invalid("feature config selects no columns".into()));
    }

    let learners: Vec<LearnerId> = log.active_learners().into_iter().cloned().collect();
    let index: BTreeMap<&LearnerId, usize> =
        learners.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let col: BTreeMap<&str, usize> =
        columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut values = Array2::<f64>::zeros((learners.len(), columns.len()));

    let mut threads_by_learner: BTreeMap<usize, BTreeSet<&crate::model::ThreadId>> =
        BTreeMap::new();
    for ev in log.events() {
        let row = index[&ev.learner];
        let mut bump = |name: &str| {
            if let Some(&c) = col.get(name) {
                values[[row, c]] += 1.0;
            }
        };
        match ev.kind {
            EventKind::Post => bump("posts"),
            EventKind::Comment => bump("comments"),
            EventKind::View => bump("views"),
            EventKind::Vote => bump("votes_cast"),
        }
        if ev.kind.is_textual() && config.threads_touched {
            threads_by_learner.entry(row).or_default().insert(&ev.thread);
        }
    }
    if let Some(&c) = col.get("threads_touched") {
        for (row, threads) in &threads_by_learner {
            values[[*row, c]] = threads.len() as f64;
        }
    }

    if wants_codes {
        let corpus = corpus.expect("checked above");
        let author_of: BTreeMap<&crate::model::PostId, &LearnerId> =
            log.events().iter().map(|e| (&e.event_id, &e.learner)).collect();
        // gather labels per post under the configured source
        let mut intent_votes: BTreeMap<&crate::model::PostId, Vec<Intent>> = BTreeMap::new();
        let mut phase_votes: BTreeMap<&crate::model::PostId, Vec<KnowledgePhase>> =
            BTreeMap::new();
        for r in corpus.responses() {
            if let CodeSource::Coder(ref c) = config.code_source {
                if &r.coder != c {
                    continue;
                }
            }
            intent_votes.entry(&r.post).or_default().push(r.intent);
            phase_votes.entry(&r.post).or_default().push(r.phase);
        }
        if config.intent_counts {
            for (post, votes) in &intent_votes {
                let pos = |i: Intent| Intent::ALL.iter().position(|&x| x == i).unwrap();
                let Some(label) = majority_by_key(votes, pos) else { continue };
                let row = index[author_of[post]];
                values[[row, col[format!("intent:{}", label.as_str()).as_str()]]] += 1.0;
            }
        }
        if config.phase_counts {
            for (post, votes) in &phase_votes {
                let pos =
                    |p: KnowledgePhase| KnowledgePhase::ALL.iter().position(|&x| x == p).unwrap();
                let Some(label) = majority_by_key(votes, pos) else { continue };
                let row = index[author_of[post]];
                values[[row, col[format!("phase:{}", label.as_str()).as_str()]]] += 1.0;
            }
        }
    }

    // drop all-zero rows, reporting them
    let keep: Vec<usize> = (0..learners.len())
        .filter(|&r| values.row(r).iter().any(|&v| v > 0.0))
        .collect();
    let excluded: Vec<LearnerId> = (0..learners.len())
        .filter(|r| !keep.contains(r))
        .map(|r| learners[r].clone())
        .collect();
    let kept_values = values.select(Axis(0), &keep);
    let kept_learners = keep.iter().map(|&r| learners[r].clone()).collect();

    Ok(FeatureMatrix { learners: kept_learners, columns, values: kept_values, excluded })
}

/// Fit hyperparameters and stopping controls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnmfParams {
    pub k_max: usize,
    /// Gamma hyperprior shape on the component precisions.
    pub a: f64,
    /// Gamma hyperprior rate on the component precisions.
    pub b: f64,
    pub max_iters: usize,
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
    pub seed: u64,
    /// Independent restarts; the fit with the lowest final objective wins.
    pub restarts: usize,
}

impl Default for BnmfParams {
    fn default() -> Self {
        Self { k_max: 20, a: 1e-3, b: 1e-3, max_iters: 2000, tol: 1e-10, seed: 0, restarts: 1 }
    }
}

/// Relative energy below which a component counts as pruned.
pub const PRUNE_ENERGY_FRACTION: f64 = 1e-8;

/// Factorization result. `active` lists the components whose energy
/// survived relevance pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    /// Final per-component precisions beta_k; large means irrelevant.
    pub relevance: Vec<f64>,
    pub active: Vec<usize>,
    pub objective_trace: Vec<f64>,
    /// Sub-seed of the winning restart.
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
}

impl Factorization {
    pub fn reconstruction(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }

    /// ||A - WH||_F / ||A||_F.
    pub fn relative_error(&self, a: &Array2<f64>) -> f64 {
        let diff = a - &self.reconstruction();
        (diff.mapv(|x| x * x).sum() / a.mapv(|x| x * x).sum()).sqrt()
    }

    fn component_energies(&self) -> Vec<f64> {
        (0..self.w.ncols())
            .map(|k| {
                self.w.column(k).mapv(|x| x * x).sum() + self.h.row(k).mapv(|x| x * x).sum()
            })
            .collect()
    }
}

const DENOM_EPS: f64 = 1e-12;

fn objective(
    a: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    beta: &[f64],
    ha: f64,
    hb: f64,
) -> f64 {
    let resid = a - &w.dot(h);
    let data = 0.5 * resid.mapv(|x| x * x).sum();
    let (n, m) = (a.nrows() as f64, a.ncols() as f64);
    let prior: f64 = beta
        .iter()
        .enumerate()
        .map(|(k, &bk)| {
            let energy =
                w.column(k).mapv(|x| x * x).sum() + h.row(k).mapv(|x| x * x).sum();
            bk / 2.0 * energy + hb * bk - ((n + m) / 2.0 + ha) * bk.ln()
        })
        .sum();
    data + prior
}

fn single_fit(a: &Array2<f64>, params: &BnmfParams, seed: u64) -> Factorization {
    let (n, m) = (a.nrows(), a.ncols());
    let k = params.k_max;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (a.mean().unwrap_or(1.0).max(DENOM_EPS) / k as f64).sqrt();
    let mut w = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() * scale + DENOM_EPS);
    let mut h = Array2::from_shape_fn((k, m), |_| rng.random::<f64>() * scale + DENOM_EPS);

    let beta_update = |w: &Array2<f64>, h: &Array2<f64>| -> Vec<f64> {
        (0..k)
            .map(|c| {
                let energy =
                    w.column(c).mapv(|x| x * x).sum() + h.row(c).mapv(|x| x * x).sum();
                (n as f64 + m as f64 + 2.0 * params.a) / (energy + 2.0 * params.b)
            })
            .collect()
    };
    let mut beta = beta_update(&w, &h);

    let mut trace = Vec::with_capacity(params.max_iters + 1);
    trace.push(objective(a, &w, &h, &beta, params.a, params.b));
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        // W <- W * (A H^T) / (W H H^T + W diag(beta))
        let hht = h.dot(&h.t());
        let numer_w = a.dot(&h.t());
        let mut denom_w = w.dot(&hht);
        for (c, &bk) in beta.iter().enumerate() {
            let col = w.column(c).mapv(|x| x * bk);
            denom_w.column_mut(c).zip_mut_with(&col, |d, &x| *d += x);
        }
        w.zip_mut_with(&(&numer_w / &denom_w.mapv(|d| d + DENOM_EPS)), |wv, &r| *wv *= r);

        // H <- H * (W^T A) / (W^T W H + diag(beta) H)
        let wtw = w.t().dot(&w);
        let numer_h = w.t().dot(a);
        let mut denom_h = wtw.dot(&h);
        for (c, &bk) in beta.iter().enumerate() {
            let row = h.row(c).mapv(|x| x * bk);
            denom_h.row_mut(c).zip_mut_with(&row, |d, &x| *d += x);
        }
        h.zip_mut_with(&(&numer_h / &denom_h.mapv(|d| d + DENOM_EPS)), |hv, &r| *hv *= r);

        beta = beta_update(&w, &h);

        let f = objective(a, &w, &h, &beta, params.a, params.b);
        let prev = *trace.last().expect("trace seeded");
        trace.push(f);
        iterations += 1;
        if (prev - f).abs() < params.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let mut fit = Factorization {
        w,
        h,
        relevance: beta,
        active: Vec::new(),
        objective_trace: trace,
        seed,
        iterations,
        converged,
    };
    let energies = fit.component_energies();
    let total: f64 = energies.iter().sum();
    fit.active = energies
        .iter()
        .enumerate()
        .filter(|(_, &e)| e >= PRUNE_ENERGY_FRACTION * total)
        .map(|(c, _)| c)
        .collect();
    fit
}

/// Factorizes a nonnegative matrix, returning the best of
/// `params.restarts` independent fits (lowest final objective; ties break
/// toward the earliest restart). Bit-identical for a fixed seed.
pub fn bnmf(a: &Array2<f64>, params: &BnmfParams) -> Result<Factorization> {
    if a.iter().any(|&v| v < 0.0) {
        return Err(Error::Invalid("feature matrix has negative entries".into()));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Invalid("feature matrix is empty".into()));
    }
    if params.k_max == 0 || params.k_max > a.nrows().min(a.ncols()) {
        return Err(Error::Invalid(format!(
            "k_max must lie in 1..=min(rows, cols) = {}",
            a.nrows().min(a.ncols())
        )));
    }
    if params.max_iters == 0 {
        return Err(Error::Invalid("max_iters must be at least 1".into()));
    }
    if params.restarts == 0 {
        return Err(Error::Invalid("at least one restart required".into()));
    }
    let fits: Vec<Factorization> = (0..params.restarts)
        .into_par_iter()
        .map(|r| single_fit(a, params, sub_seed(params.seed, r as u64)))
        .collect();
    Ok(fits
        .into_iter()
        .reduce(|best, f| {
            let fb = *best.objective_trace.last().expect("nonempty");
            let ff = *f.objective_trace.last().expect("nonempty");
            if ff < fb {
                f
            } else {
                best
            }
        })
        .expect("restarts >= 1"))
}

/// One learner's dominant type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeRow {
    pub learner: LearnerId,
    /// Component index into the factorization (an element of `active`).
    pub component: usize,
    /// Row-normalized W mass on the dominant component.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeAssignment {
    pub rows: Vec<TypeRow>,
    pub active: Vec<usize>,
}

/// Assigns each learner the active component with the largest W entry,
/// ties toward the lowest component index; strength is the row-normalized
/// entry over active components.
pub fn assign_types(f: &Factorization, learners: &[LearnerId]) -> Result<TypeAssignment> {
    if f.active.is_empty() {
        return Err(Error::Invalid("factorization has no active components".into()));
    }
    if learners.len() != f.w.nrows() {
        return Err(Error::Invalid(format!(
            "{} learners supplied for {} factorization rows",
            learners.len(),
            f.w.nrows()
        )));
    }
    let rows = learners
        .iter()
        .enumerate()
        .map(|(r, learner)| {
            let mass: f64 = f.active.iter().map(|&k| f.w[[r, k]]).sum();
            let mut component = f.active[0];
            let mut best = f64::NEG_INFINITY;
            for &k in &f.active {
                if f.w[[r, k]] > best {
                    best = f.w[[r, k]];
                    component = k;
                }
            }
            // an all-zero row carries no evidence; spread strength uniformly
            let strength = if mass > 0.0 { best / mass } else { 1.0 / f.active.len() as f64 };
            TypeRow { learner: learner.clone(), component, strength }
        })
        .collect();
    Ok(TypeAssignment { rows, active: f.active.clone() })
}

/// One categorical cross-tab cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileCell {
    pub component: usize,
    pub dimension: String,
    pub value: String,
    pub count: u64,
    /// Within-type fraction.
    pub fraction: f64,
}

/// Mean activity per type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeActivity {
    pub component: usize,
    pub learners: u64,
    pub mean_posts: f64,
    pub mean_views: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeProfile {
    pub categorical: Vec<ProfileCell>,
    pub activity: Vec<TypeActivity>,
}

fn age_band(age: Option<u32>) -> String {
    match age {
        None => "unknown".into(),
        Some(a) if a < 18 => "<18".into(),
        Some(a) if a < 25 => "18-24".into(),
        Some(a) if a < 35 => "25-34".into(),
        Some(a) if a < 45 => "35-44".into(),
        Some(a) if a < 55 => "45-54".into(),
        Some(_) => "55+".into(),
    }
}

fn opt_bool(v: Option<bool>) -> String {
    match v {
        None => "unknown".into(),
        Some(true) => "true".into(),
        Some(false) => "false".into(),
    }
}

/// Cross-tabulates types against demographics, outcomes and forum activity.
/// Missing demographics land in explicit "unknown" buckets.
pub fn profile_types(assignment: &TypeAssignment, log: &EventLog) -> TypeProfile {
    let mut posts: BTreeMap<&LearnerId, u64> = BTreeMap::new();
    let mut views: BTreeMap<&LearnerId, u64> = BTreeMap::new();
    for ev in log.events() {
        match ev.kind {
            EventKind::Post | EventKind::Comment => {
                *posts.entry(&ev.learner).or_insert(0) += 1
            }
            EventKind::View => *views.entry(&ev.learner).or_insert(0) += 1,
            EventKind::Vote => {}
        }
    }

    // (component, dimension, value) -> count
    let mut counts: BTreeMap<(usize, String, String), u64> = BTreeMap::new();
    let mut totals: BTreeMap<usize, u64> = BTreeMap::new();
    let mut post_sums: BTreeMap<usize, u64> = BTreeMap::new();
    let mut view_sums: BTreeMap<usize, u64> = BTreeMap::new();
    let default_record = crate::model::LearnerRecord::default();
    for row in &assignment.rows {
        let rec = log.learners().get(&row.learner).unwrap_or(&default_record);
        *totals.entry(row.component).or_insert(0) += 1;
        *post_sums.entry(row.component).or_insert(0) +=
            posts.get(&row.learner).copied().unwrap_or(0);
        *view_sums.entry(row.component).or_insert(0) +=
            views.get(&row.learner).copied().unwrap_or(0);
        for (dim, value) in [
            ("education", rec.education.clone().unwrap_or_else(|| "unknown".into())),
            ("country", rec.country.clone().unwrap_or_else(|| "unknown".into())),
            ("age_band", age_band(rec.age)),
            ("submitted_final", opt_bool(rec.submitted_final)),
            ("passed", opt_bool(rec.passed)),
        ] {
            *counts.entry((row.component, dim.to_string(), value)).or_insert(0) += 1;
        }
    }

    let categorical = counts
        .into_iter()
        .map(|((component, dimension, value), count)| ProfileCell {
            component,
            dimension,
            value,
            count,
            fraction: count as f64 / totals[&component] as f64,
        })
        .collect();
    let activity = totals
        .iter()
        .map(|(&component, &n)| TypeActivity {
            component,
            learners: n,
            mean_posts: post_sums[&component] as f64 / n as f64,
            mean_views: view_sums[&component] as f64 / n as f64,
        })
        .collect();
    TypeProfile { categorical, activity }
}
