//! Iterative multiple-testing search for coherent sets.
//!
//! From a seed set `A_0 = {s}`, every column is tested against the current
//! set and the Benjamini–Yekutieli rejections form the next set. The
//! search stops at a fixed point, an empty set, a revisited set (cycle), or
//! after `max_iter` steps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latentcorr::{sweep, StandardizedMatrix};
use crate::scalar::Real;

pub const DEFAULT_FDR: f64 = 0.05;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Benjamini–Yekutieli step-up procedure; returns rejected indices in ascending order.
pub fn by_reject<T: Real>(pvalues: &[T], q: f64) -> Result<Vec<usize>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("FDR level {q} must lie in (0, 1)")));
    }
    if let Some(j) = pvalues.iter().position(|p| !(*p >= T::zero() && *p <= T::one())) {
        return Err(Error::InvalidArgument(format!(
            "p-value {} at index {j} is outside [0, 1]",
            pvalues[j]
        )));
    }
    let d = pvalues.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    let harmonic: f64 = (1..=d).map(|i| 1.0 / i as f64).sum();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).unwrap().then(a.cmp(&b)));
    let scale = q / (d as f64 * harmonic);
    let cutoff = (1..=d)
        .rev()
        .find(|&k| pvalues[order[k - 1]].as_f64() <= k as f64 * scale)
        .map(|k| pvalues[order[k - 1]]);
    Ok(match cutoff {
        None => Vec::new(),
        Some(c) => (0..d).filter(|&j| pvalues[j] <= c).collect(),
    })
}

/// P-values of every column against `set`, self-term excluded.
///
/// For a singleton `{s}` the seed itself has no comparison set; it is
/// given p-value 0 so that it occupies the first BY rank.
pub fn set_pvalues<T: Real>(u: &StandardizedMatrix<T>, set: &[usize]) -> Result<Vec<T>> {
    Ok(sweep(u, set)?
        .into_iter()
        .map(|s| s.map_or(T::zero(), |s| s.pvalue))
        .collect())
}

/// One search iteration: `BY(p(., A), q)`. A singleton that rejects only itself yields the empty set.
pub fn step<T: Real>(u: &StandardizedMatrix<T>, set: &[usize], q: f64) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("step needs a nonempty set".into()));
    }
    let rejected = by_reject(&set_pvalues(u, set)?, q)?;
    if set.len() == 1 && rejected == set {
        return Ok(Vec::new());
    }
    Ok(rejected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    FixedPoint,
    Cycle,
    MaxIter,
    Empty,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::FixedPoint => "fixed_point",
            Reason::Cycle => "cycle",
            Reason::MaxIter => "max_iter",
            Reason::Empty => "empty",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub seed: usize,
    /// `A_0, ..., A_T`.
    pub trajectory: Vec<Vec<usize>>,
    pub terminal: Vec<usize>,
    pub reason: Reason,
    pub iterations: usize,
}

// Memo of step results shared across seeds; step is a pure function of the set.
struct StepCache(RwLock<HashMap<Vec<usize>, Vec<usize>>>);

impl StepCache {
    fn new() -> Self {
        Self(RwLock::new(HashMap::new()))
    }

    fn step<T: Real>(&self, u: &StandardizedMatrix<T>, set: &[usize], q: f64) -> Result<Vec<usize>> {
        if let Some(hit) = self.0.read().unwrap().get(set) {
            return Ok(hit.clone());
        }
        let next = step(u, set, q)?;
        self.0.write().unwrap().insert(set.to_vec(), next.clone());
        Ok(next)
    }
}

fn search_with<T: Real>(
    u: &StandardizedMatrix<T>,
    seed: usize,
    q: f64,
    max_iter: usize,
    cache: Option<&StepCache>,
) -> Result<SearchOutcome> {
    if seed >= u.d() {
        return Err(Error::InvalidArgument(format!(
            "seed {seed} out of range for {} columns",
            u.d()
        )));
    }
    let mut current = vec![seed];
    let mut trajectory = vec![current.clone()];
    let mut seen: HashSet<Vec<usize>> = HashSet::from([current.clone()]);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let next = match cache {
            Some(c) => c.step(u, &current, q)?,
            None => step(u, &current, q)?,
        };
        trajectory.push(next.clone());
        let reason = if next.is_empty() {
            Some(Reason::Empty)
        } else if next == current {
            Some(Reason::FixedPoint)
        } else if seen.contains(&next) {
            Some(Reason::Cycle)
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(SearchOutcome {
                seed,
                trajectory,
                terminal: next,
                reason,
                iterations,
            });
        }
        seen.insert(next.clone());
        current = next;
    }
    Ok(SearchOutcome {
        seed,
        trajectory,
        terminal: current,
        reason: Reason::MaxIter,
        iterations,
    })
}

/// Runs the search from a single seed column.
pub fn search<T: Real>(u: &StandardizedMatrix<T>, seed: usize, q: f64, max_iter: usize) -> Result<SearchOutcome> {
    search_with(u, seed, q, max_iter, None)
}

/// A terminal set of two or more columns, with how many seeds reached it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentSetResult {
    pub members: Vec<usize>,
    /// Membership p-values of each member against the rest of the set.
    pub member_pvalues: BTreeMap<usize, f64>,
    pub seeds_reaching: usize,
    pub reason: Reason,
}

/// Searches from every seed and collects distinct terminal sets of size >= 2.
///
/// Output is sorted by `seeds_reaching` descending, then by member indices.
pub fn mine_all<T: Real>(
    u: &StandardizedMatrix<T>,
    seeds: &[usize],
    q: f64,
    max_iter: usize,
) -> Result<Vec<CoherentSetResult>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds given".into()));
    }
    let cache = StepCache::new();
    let outcomes = seeds
        .par_iter()
        .map(|&s| search_with(u, s, q, max_iter, Some(&cache)))
        .collect::<Result<Vec<_>>>()?;
    let mut groups: BTreeMap<Vec<usize>, (usize, Reason)> = BTreeMap::new();
    for o in outcomes {
        if o.terminal.len() < 2 {
            continue;
        }
        let e = groups.entry(o.terminal).or_insert((0, o.reason));
        e.0 += 1;
        e.1 = e.1.min(o.reason);
    }
    let mut results = groups
        .into_par_iter()
        .map(|(members, (count, reason))| {
            let p = set_pvalues(u, &members)?;
            Ok(CoherentSetResult {
                member_pvalues: members.iter().map(|&j| (j, p[j].as_f64())).collect(),
                members,
                seeds_reaching: count,
                reason,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| b.seeds_reaching.cmp(&a.seeds_reaching).then_with(|| a.members.cmp(&b.members)));
    Ok(results)
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy grouping by Jaccard overlap with the group representative.
///
/// Results are visited by `seeds_reaching` descending; each joins the first
/// group whose representative it overlaps at `>= threshold`, adding its
/// seed count to the representative.
pub fn dedup(results: &[CoherentSetResult], threshold: f64) -> Result<Vec<CoherentSetResult>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Jaccard threshold {threshold} must lie in (0, 1]"
        )));
    }
    let mut sorted: Vec<&CoherentSetResult> = results.iter().collect();
    sorted.sort_by(|a, b| b.seeds_reaching.cmp(&a.seeds_reaching).then_with(|| a.members.cmp(&b.members)));
    let mut reps: Vec<CoherentSetResult> = Vec::new();
    for r in sorted {
        match reps.iter_mut().find(|g| jaccard(&g.members, &r.members) >= threshold) {
            Some(g) => g.seeds_reaching += r.seeds_reaching,
            None => reps.push(r.clone()),
        }
    }
    reps.sort_by(|a, b| b.seeds_reaching.cmp(&a.seeds_reaching).then_with(|| a.members.cmp(&b.members)));
    Ok(reps)
}

/// Single-step neighborhood of a target set.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub target: Vec<usize>,
    /// Rejected columns outside the target, by ascending p-value.
    pub neighbors: Vec<usize>,
    /// Target members that were themselves rejected.
    pub retained_targets: Vec<usize>,
    pub pvalues: BTreeMap<usize, f64>,
}

pub fn neighborhood<T: Real>(u: &StandardizedMatrix<T>, target: &[usize], q: f64) -> Result<Neighborhood> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("neighborhood needs a nonempty target".into()));
    }
    let mut target = target.to_vec();
    target.sort_unstable();
    target.dedup();
    let p = set_pvalues(u, &target)?;
    let rejected = by_reject(&p, q)?;
    let (mut retained, mut neighbors): (Vec<usize>, Vec<usize>) =
        rejected.iter().partition(|j| target.binary_search(j).is_ok());
    if target.len() == 1 {
        retained.clear();
    }
    neighbors.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(a.cmp(&b)));
    let pvalues = neighbors.iter().map(|&j| (j, p[j].as_f64())).collect();
    Ok(Neighborhood {
        target,
        neighbors,
        retained_targets: retained,
        pvalues,
    })
}

/// JSON record for one mined set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetRecord {
    pub members: Vec<String>,
    pub seeds_reaching: usize,
    pub reason: Reason,
    pub pvalues: BTreeMap<String, f64>,
}

impl SetRecord {
    pub fn from_result(r: &CoherentSetResult, labels: &[String]) -> Self {
        let mut members: Vec<String> = r.members.iter().map(|&j| labels[j].clone()).collect();
        members.sort();
        Self {
            members,
            seeds_reaching: r.seeds_reaching,
            reason: r.reason,
            pvalues: r.member_pvalues.iter().map(|(&j, &p)| (labels[j].clone(), p)).collect(),
        }
    }
}

/// JSON record for one neighborhood; `target` first, then neighbors by strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodRecord {
    pub target: Vec<String>,
    pub neighbors: Vec<String>,
    pub retained_targets: Vec<String>,
    pub pvalues: BTreeMap<String, f64>,
}

impl NeighborhoodRecord {
    pub fn from_neighborhood(nb: &Neighborhood, labels: &[String]) -> Self {
        let names = |v: &[usize]| v.iter().map(|&j| labels[j].clone()).collect::<Vec<_>>();
        Self {
            target: names(&nb.target),
            neighbors: names(&nb.neighbors),
            retained_targets: names(&nb.retained_targets),
            pvalues: nb.pvalues.iter().map(|(&j, &p)| (labels[j].clone(), p)).collect(),
        }
    }
}

/// Plain-text listing, one block per set.
pub fn sets_table(records: &[SetRecord]) -> String {
    let mut out = String::new();
    for (k, r) in records.iter().enumerate() {
        let _ = writeln!(
            out,
            "Set {} ({} members, reached by {} seed{}, {})",
            k + 1,
            r.members.len(),
            r.seeds_reaching,
            if r.seeds_reaching == 1 { "" } else { "s" },
            r.reason.as_str()
        );
        for m in &r.members {
            let _ = writeln!(out, "  {m:<40} {:.3e}", r.pvalues.get(m).copied().unwrap_or(f64::NAN));
        }
    }
    if records.is_empty() {
        out.push_str("No coherent sets found.\n");
    }
    out
}

pub fn neighborhoods_table(records: &[NeighborhoodRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "Target: {}", r.target.join(", "));
        if r.neighbors.is_empty() {
            out.push_str("  (no neighbors)\n");
        }
        for m in &r.neighbors {
            let _ = writeln!(out, "  {m:<40} {:.3e}", r.pvalues[m]);
        }
        out.push('\n');
    }
    out
}
