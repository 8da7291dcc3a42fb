//! Simulation study: planted equicorrelated block, randomized thresholds,
//! and a comparison of the coherent-set search against distance-based
//! hierarchical clustering.
//!
//! Everything here runs in `f64`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{default_col_labels, default_row_labels, BinaryDataset};
use crate::error::{Error, Result};
use crate::latentcorr::standardize;
use crate::miner::{mine_all, DEFAULT_FDR, DEFAULT_MAX_ITER};
use crate::special::normal_quantile;
use crate::threshold::{default_eps_theta, fit_empirical, theta_matrix, FitOptions, ThetaMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    RandomExpo1,
    FixedOne,
}

impl TauMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TauMode::RandomExpo1 => "random",
            TauMode::FixedOne => "fixed",
        }
    }
}

impl FromStr for TauMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" | "random_expo1" => Ok(TauMode::RandomExpo1),
            "fixed" | "fixed_one" => Ok(TauMode::FixedOne),
            other => Err(Error::InvalidArgument(format!("unknown tau mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub d: usize,
    /// Size of the planted block (columns `0..m`).
    pub m: usize,
    pub rho: f64,
    pub tau_mode: TauMode,
    pub alpha_range: (f64, f64),
    pub rng_seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n: 101,
            d: 1000,
            m: 100,
            rho: 0.5,
            tau_mode: TauMode::RandomExpo1,
            alpha_range: (0.05, 0.5),
            rng_seed: 1,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.alpha_range;
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("n and d must be positive".into()));
        }
        if self.m > self.d {
            return Err(Error::InvalidArgument(format!("block size {} exceeds d = {}", self.m, self.d)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rho {} must lie in [0, 1)", self.rho)));
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha range ({lo}, {hi}) is invalid")));
        }
        Ok(())
    }

    pub fn truth(&self) -> Vec<usize> {
        (0..self.m).collect()
    }

    /// Generator for replicate `rep` of grid entry `spec_index`.
    pub fn rng(&self, spec_index: usize, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(((spec_index as u64) << 32) | rep as u64);
        rng
    }
}

/// Dense n x d real matrix, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl LatentMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

/// `Z_ij = sqrt(rho) W_i + sqrt(1 - rho) e_ij` for `j < m`, iid N(0, 1) otherwise.
pub fn gen_latent<R: Rng + ?Sized>(spec: &SimulationSpec, rng: &mut R) -> LatentMatrix {
    let (n, d) = (spec.n, spec.d);
    let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let (a, b) = (spec.rho.sqrt(), (1.0 - spec.rho).sqrt());
    let mut data = Vec::with_capacity(n * d);
    for j in 0..d {
        for &wi in &w {
            let e: f64 = rng.sample(StandardNormal);
            data.push(if j < spec.m { a * wi + b * e } else { e });
        }
    }
    LatentMatrix { n, d, data }
}

#[derive(Debug, Clone)]
pub struct Thresholds {
    pub theta: ThetaMatrix<f64>,
    pub tau: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Draws `alpha_j ~ U(lo, hi)` and `tau_i` per the mode, then `theta = 1 - exp(-tau alpha)`.
pub fn gen_thresholds<R: Rng + ?Sized>(spec: &SimulationSpec, rng: &mut R) -> Result<Thresholds> {
    let (lo, hi) = spec.alpha_range;
    let alpha: Vec<f64> = (0..spec.d)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect();
    let tau: Vec<f64> = match spec.tau_mode {
        TauMode::RandomExpo1 => (0..spec.n)
            .map(|_| {
                let t: f64 = rng.sample(Exp1);
                t.max(f64::MIN_POSITIVE)
            })
            .collect(),
        TauMode::FixedOne => vec![1.0; spec.n],
    };
    // Keep theta strictly inside (0, 1) so the quantile transform stays finite.
    let theta = ThetaMatrix::from_fn(spec.n, spec.d, |i, j| {
        (-(-(tau[i] * alpha[j])).exp_m1()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    })?;
    Ok(Thresholds { theta, tau, alpha })
}

/// `X_ij = 1{Z_ij <= Phi^{-1}(theta_ij)}`.
pub fn threshold_data(z: &LatentMatrix, theta: &ThetaMatrix<f64>) -> Result<BinaryDataset> {
    if z.n != theta.n() || z.d != theta.d() {
        return Err(Error::Shape(format!(
            "latent matrix is {} x {}, thresholds are {} x {}",
            z.n,
            z.d,
            theta.n(),
            theta.d()
        )));
    }
    let mut cells = Vec::new();
    for j in 0..z.d {
        for (i, (&zi, &ti)) in z.column(j).iter().zip(theta.column(j)).enumerate() {
            if zi <= normal_quantile(ti) {
                cells.push((i, j));
            }
        }
    }
    BinaryDataset::from_cells(default_row_labels(z.n), default_col_labels(z.d), cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    L1,
    L2,
    Binary,
    Correlation,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 4] = [DistanceKind::L1, DistanceKind::L2, DistanceKind::Binary, DistanceKind::Correlation];

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::L1 => "l1",
            DistanceKind::L2 => "l2",
            DistanceKind::Binary => "binary",
            DistanceKind::Correlation => "correlation",
        }
    }
}

fn distance_from_counts(kind: DistanceKind, n: usize, sj: usize, sk: usize, c: usize) -> f64 {
    let mismatches = (sj + sk - 2 * c) as f64;
    match kind {
        DistanceKind::L1 => mismatches,
        DistanceKind::L2 => mismatches.sqrt(),
        DistanceKind::Binary => {
            if c == 0 {
                f64::INFINITY
            } else {
                (sj * sk) as f64 / c as f64
            }
        }
        DistanceKind::Correlation => {
            let (n, sj, sk, c) = (n as f64, sj as f64, sk as f64, c as f64);
            let var = sj * (n - sj) * sk * (n - sk);
            // Constant columns are treated as uncorrelated.
            let r = if var > 0.0 { (n * c - sj * sk) / var.sqrt() } else { 0.0 };
            (2.0 * (1.0 - r)).max(0.0).sqrt()
        }
    }
}

fn co_count(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// Distance between columns `j` and `k`. `Binary` is `+inf` when the columns never co-occur.
pub fn distance(ds: &BinaryDataset, kind: DistanceKind, j: usize, k: usize) -> f64 {
    let c = co_count(ds.column(j), ds.column(k));
    distance_from_counts(kind, ds.n(), ds.column_sum(j), ds.column_sum(k), c)
}

/// Co-occurrence counts for all column pairs, row-major d x d.
fn co_occurrence(ds: &BinaryDataset) -> Vec<u32> {
    let d = ds.d();
    let mut counts = vec![0u32; d * d];
    for row in ds.rows() {
        for (a, &j) in row.iter().enumerate() {
            for &k in &row[a..] {
                counts[j * d + k] += 1;
            }
        }
    }
    counts
}

/// Condensed pairwise distances (pairs `j < k` in row order), with the
/// binary `+inf` sentinel replaced by `10 * max_finite + 1`.
pub fn distance_matrix(ds: &BinaryDataset, kind: DistanceKind) -> Vec<f64> {
    let d = ds.d();
    let counts = co_occurrence(ds);
    let sums: Vec<usize> = (0..d).map(|j| ds.column_sum(j)).collect();
    let mut out = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    for j in 0..d {
        for k in j + 1..d {
            out.push(distance_from_counts(kind, ds.n(), sums[j], sums[k], counts[j * d + k] as usize));
        }
    }
    let max_finite = out.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    let fill = 10.0 * max_finite + 1.0;
    for x in out.iter_mut().filter(|x| x.is_infinite()) {
        *x = fill;
    }
    out
}

/// One agglomeration step. Leaves are `0..d`; the cluster formed at step `s` is `d + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

fn condensed_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    d * i - i * (i + 1) / 2 + (j - i - 1)
}

/// Average-linkage (UPGMA) dendrogram via the nearest-neighbor chain, merges sorted by height.
pub fn average_linkage(condensed: &[f64], d: usize) -> Result<Vec<Merge>> {
    if condensed.len() != d * d.saturating_sub(1) / 2 {
        return Err(Error::Shape(format!("{} distances for {d} points", condensed.len())));
    }
    if condensed.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("distance matrix contains NaN".into()));
    }
    let mut dist = condensed.to_vec();
    let mut size = vec![1usize; d];
    let mut active = vec![true; d];
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(d.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    while raw.len() + 1 < d {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap());
        }
        let (x, y, h) = loop {
            let x = *chain.last().unwrap();
            let prev = chain.len().checked_sub(2).map(|p| chain[p]);
            let (mut y, mut best) = match prev {
                Some(p) => (p, dist[condensed_index(d, x, p)]),
                None => (usize::MAX, f64::INFINITY),
            };
            for i in (0..d).filter(|&i| active[i] && i != x) {
                let v = dist[condensed_index(d, x, i)];
                if v < best || y == usize::MAX {
                    y = i;
                    best = v;
                }
            }
            if Some(y) == prev {
                chain.pop();
                chain.pop();
                break (x, y, best);
            }
            chain.push(y);
        };
        // Merged cluster lives in slot y.
        let (sx, sy) = (size[x] as f64, size[y] as f64);
        for k in (0..d).filter(|&k| active[k] && k != x && k != y) {
            let (ix, iy) = (condensed_index(d, x, k), condensed_index(d, y, k));
            dist[iy] = (sx * dist[ix] + sy * dist[iy]) / (sx + sy);
        }
        active[x] = false;
        size[y] += size[x];
        raw.push((x, y, h));
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].2.partial_cmp(&raw[b].2).unwrap().then(a.cmp(&b)));
    // Relabel: every slot id is a member point of its cluster, so union-find over points works.
    let mut parent: Vec<usize> = (0..d).collect();
    let mut label: Vec<usize> = (0..d).collect();
    let mut csize = vec![1usize; d];
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut merges = Vec::with_capacity(raw.len());
    for (s, &o) in order.iter().enumerate() {
        let (x, y, h) = raw[o];
        let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
        let (la, lb) = (label[rx].min(label[ry]), label[rx].max(label[ry]));
        let sz = csize[rx] + csize[ry];
        parent[rx] = ry;
        csize[ry] = sz;
        label[ry] = d + s;
        merges.push(Merge { a: la, b: lb, height: h, size: sz });
    }
    Ok(merges)
}

/// Cluster from the dendrogram whose size is closest to `m`, earliest merge on ties.
pub fn select_cluster(merges: &[Merge], d: usize, m: usize) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = (0..d).map(|i| vec![i]).collect();
    let mut best: Option<(usize, usize)> = None;
    for (s, mg) in merges.iter().enumerate() {
        let gap = mg.size.abs_diff(m);
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, s));
        }
    }
    let Some((_, target)) = best else {
        return Vec::new();
    };
    for (s, mg) in merges.iter().enumerate().take(target + 1) {
        let mut a = std::mem::take(&mut members[mg.a]);
        let b = std::mem::take(&mut members[mg.b]);
        a.extend(b);
        members.push(a);
        debug_assert_eq!(members.len(), d + s + 1);
    }
    let mut out = members.pop().unwrap();
    out.sort_unstable();
    out
}

/// Average-linkage clustering of the columns, cut to the cluster nearest size `m`.
pub fn baseline_cluster(ds: &BinaryDataset, kind: DistanceKind, m: usize) -> Result<Vec<usize>> {
    if ds.d() < 2 {
        return Err(Error::InvalidArgument("clustering needs at least two columns".into()));
    }
    let merges = average_linkage(&distance_matrix(ds, kind), ds.d())?;
    Ok(select_cluster(&merges, ds.d(), m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub fpr: f64,
    pub tdr: f64,
    pub selected: Vec<usize>,
    pub truth: Vec<usize>,
}

/// `FPR = |B \ A| / |B|` (0 for empty `B`), `TDR = |A ∩ B| / |A|`.
pub fn evaluate(selected: &[usize], truth: &[usize]) -> Result<EvalResult> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("truth set is empty".into()));
    }
    let t: HashSet<usize> = truth.iter().copied().collect();
    let b: HashSet<usize> = selected.iter().copied().collect();
    let hits = b.intersection(&t).count();
    let fpr = if b.is_empty() { 0.0 } else { (b.len() - hits) as f64 / b.len() as f64 };
    Ok(EvalResult {
        fpr,
        tdr: hits as f64 / t.len() as f64,
        selected: selected.to_vec(),
        truth: truth.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lamb,
    Baseline(DistanceKind),
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Lamb,
        Method::Baseline(DistanceKind::L1),
        Method::Baseline(DistanceKind::L2),
        Method::Baseline(DistanceKind::Binary),
        Method::Baseline(DistanceKind::Correlation),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lamb => "lamb",
            Method::Baseline(k) => k.as_str(),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lamb" => Ok(Method::Lamb),
            "l1" => Ok(Method::Baseline(DistanceKind::L1)),
            "l2" => Ok(Method::Baseline(DistanceKind::L2)),
            "binary" => Ok(Method::Baseline(DistanceKind::Binary)),
            "correlation" | "corr" => Ok(Method::Baseline(DistanceKind::Correlation)),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Settings for the search when it is scored in a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambSettings {
    pub q: f64,
    pub max_iter: usize,
}

impl Default for LambSettings {
    fn default() -> Self {
        Self { q: DEFAULT_FDR, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Mined set with the largest overlap with `truth` (first in output order on ties),
/// in original column indices. Empty when nothing is mined.
pub fn lamb_select(ds: &BinaryDataset, truth: &[usize], settings: &LambSettings) -> Result<Vec<usize>> {
    let (kept, idx, _) = ds.filter_degenerate_indexed();
    if kept.d() < 2 {
        return Ok(Vec::new());
    }
    let fit = fit_empirical::<f64>(&kept, &FitOptions::default())?;
    let theta = theta_matrix(&fit, default_eps_theta(kept.n()))?;
    let u = standardize(&kept, &theta)?;
    let seeds: Vec<usize> = (0..kept.d()).collect();
    let sets = mine_all(&u, &seeds, settings.q, settings.max_iter)?;
    let truth: HashSet<usize> = truth.iter().copied().collect();
    let mut best: Option<(usize, Vec<usize>)> = None;
    for s in sets {
        let mapped: Vec<usize> = s.members.iter().map(|&j| idx[j]).collect();
        let hits = mapped.iter().filter(|j| truth.contains(j)).count();
        if best.as_ref().is_none_or(|(h, _)| hits > *h) {
            best = Some((hits, mapped));
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or_default())
}

/// Selected set for one method on one dataset.
pub fn run_method(ds: &BinaryDataset, method: Method, spec: &SimulationSpec, settings: &LambSettings) -> Result<Vec<usize>> {
    let truth = spec.truth();
    match method {
        Method::Lamb => lamb_select(ds, &truth, settings),
        Method::Baseline(kind) => {
            let (kept, idx, _) = ds.filter_degenerate_indexed();
            if kept.d() < 2 {
                return Ok(Vec::new());
            }
            Ok(baseline_cluster(&kept, kind, spec.m)?.into_iter().map(|j| idx[j]).collect())
        }
    }
}

/// Generates one replicate's binary data.
pub fn simulate_dataset(spec: &SimulationSpec, spec_index: usize, rep: usize) -> Result<BinaryDataset> {
    spec.validate()?;
    let mut rng = spec.rng(spec_index, rep);
    let z = gen_latent(spec, &mut rng);
    let th = gen_thresholds(spec, &mut rng)?;
    threshold_data(&z, &th.theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: Method,
    pub rho: f64,
    pub tau_mode: TauMode,
    pub rep: usize,
    pub fpr: f64,
    pub tdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub rho: f64,
    pub tau_mode: TauMode,
    pub reps: usize,
    pub mean_fpr: f64,
    pub mean_tdr: f64,
    /// Mean TDR counting runs with `FPR >= 0.05` as zero.
    pub mean_gated_tdr: f64,
}

pub const FPR_GATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rho,tau_mode,rep,fpr,tdr\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.method.as_str(), r.rho, r.tau_mode.as_str(), r.rep, r.fpr, r.tdr);
        }
        out
    }

    /// One row per (spec, method) in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Method, u64, TauMode)> = Vec::new();
        for r in &self.rows {
            let k = (r.method, r.rho.to_bits(), r.tau_mode);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(method, rho_bits, tau_mode)| {
                let rs: Vec<&StudyRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.rho.to_bits() == rho_bits && r.tau_mode == tau_mode)
                    .collect();
                let k = rs.len() as f64;
                SummaryRow {
                    method,
                    rho: f64::from_bits(rho_bits),
                    tau_mode,
                    reps: rs.len(),
                    mean_fpr: rs.iter().map(|r| r.fpr).sum::<f64>() / k,
                    mean_tdr: rs.iter().map(|r| r.tdr).sum::<f64>() / k,
                    mean_gated_tdr: rs.iter().map(|r| if r.fpr < FPR_GATE { r.tdr } else { 0.0 }).sum::<f64>() / k,
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,rho,tau_mode,reps,mean_fpr,mean_tdr,mean_gated_tdr\n");
        for s in self.summary() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.method.as_str(),
                s.rho,
                s.tau_mode.as_str(),
                s.reps,
                s.mean_fpr,
                s.mean_tdr,
                s.mean_gated_tdr
            );
        }
        out
    }
}

/// Runs every method on `reps` replicates of each grid entry.
///
/// Replicates run in parallel; each draws from its own stream, so the table
/// does not depend on scheduling.
pub fn run_study(grid: &[SimulationSpec], methods: &[Method], reps: usize, settings: &LambSettings) -> Result<StudyTable> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    for spec in grid {
        spec.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let per_job = jobs
        .par_iter()
        .map(|&(si, rep)| {
            let spec = &grid[si];
            let ds = simulate_dataset(spec, si, rep)?;
            let truth = spec.truth();
            methods
                .iter()
                .map(|&method| {
                    let selected = run_method(&ds, method, spec, settings)?;
                    let ev = evaluate(&selected, &truth)?;
                    Ok(StudyRow { method, rho: spec.rho, tau_mode: spec.tau_mode, rep, fpr: ev.fpr, tdr: ev.tdr })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    // Group rows by spec then method then rep.
    let mut rows = Vec::with_capacity(per_job.len() * methods.len());
    for si in 0..grid.len() {
        for mi in 0..methods.len() {
            for rep in 0..reps {
                rows.push(per_job[si * reps + rep][mi].clone());
            }
        }
    }
    Ok(StudyTable { rows })
}

/// Study definition parsed from `key = value` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub rho: Vec<f64>,
    pub tau_mode: Vec<TauMode>,
    pub alpha_range: (f64, f64),
    pub rng_seed: u64,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub fdr: f64,
    pub max_iter: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let s = SimulationSpec::default();
        Self {
            n: s.n,
            d: s.d,
            m: s.m,
            rho: vec![0.0, 0.3, 0.5, 0.7, 0.9],
            tau_mode: vec![TauMode::RandomExpo1],
            alpha_range: s.alpha_range,
            rng_seed: s.rng_seed,
            reps: 10,
            methods: Method::ALL.to_vec(),
            fdr: DEFAULT_FDR,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::InvalidArgument(format!("bad value '{s}' for {key}"))))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("{key} is empty")));
    }
    Ok(items)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value '{}' for {key}", value.trim())))
}

impl StudyConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    ///
    /// Keys: `n`, `d`, `m`, `rho` (list), `tau_mode` (list of `random`/`fixed`),
    /// `alpha_range` (`lo,hi`), `rng_seed`, `reps`, `methods` (list), `fdr`, `max_iter`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let malformed = |reason: String| Error::Malformed { line: ln + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("expected key = value, got '{line}'")))?;
            let key = key.trim();
            let res = match key {
                "n" => parse_one(key, value).map(|v| cfg.n = v),
                "d" => parse_one(key, value).map(|v| cfg.d = v),
                "m" => parse_one(key, value).map(|v| cfg.m = v),
                "rho" => parse_list(key, value).map(|v| cfg.rho = v),
                "tau_mode" => parse_list(key, value).map(|v| cfg.tau_mode = v),
                "alpha_range" => parse_list::<f64>(key, value).and_then(|v| match v[..] {
                    [lo, hi] => {
                        cfg.alpha_range = (lo, hi);
                        Ok(())
                    }
                    _ => Err(Error::InvalidArgument("alpha_range needs two values".into())),
                }),
                "rng_seed" => parse_one(key, value).map(|v| cfg.rng_seed = v),
                "reps" => parse_one(key, value).map(|v| cfg.reps = v),
                "methods" => parse_list(key, value).map(|v| cfg.methods = v),
                "fdr" => parse_one(key, value).map(|v| cfg.fdr = v),
                "max_iter" => parse_one(key, value).map(|v| cfg.max_iter = v),
                other => Err(Error::InvalidArgument(format!("unknown key '{other}'"))),
            };
            res.map_err(|e| malformed(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if !(self.fdr > 0.0 && self.fdr < 1.0) {
            return Err(Error::InvalidArgument(format!("fdr {} must lie in (0, 1)", self.fdr)));
        }
        for s in self.grid() {
            s.validate()?;
        }
        Ok(())
    }

    /// Grid in `tau_mode`-major, `rho`-minor order.
    pub fn grid(&self) -> Vec<SimulationSpec> {
        self.tau_mode
            .iter()
            .flat_map(|&tau_mode| {
                self.rho.iter().map(move |&rho| SimulationSpec {
                    n: self.n,
                    d: self.d,
                    m: self.m,
                    rho,
                    tau_mode,
                    alpha_range: self.alpha_range,
                    rng_seed: self.rng_seed,
                })
            })
            .collect()
    }

    pub fn settings(&self) -> LambSettings {
        LambSettings { q: self.fdr, max_iter: self.max_iter }
    }

    pub fn run(&self) -> Result<StudyTable> {
        run_study(&self.grid(), &self.methods, self.reps, &self.settings())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_arithmetic() {
        let truth: Vec<usize> = (0..100).collect();
        let mut b: Vec<usize> = (0..50).collect();
        b.extend(200..210);
        let e = evaluate(&b, &truth).unwrap();
        assert!((e.fpr - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(e.tdr, 0.5);
        let e = evaluate(&truth, &truth).unwrap();
        assert_eq!((e.fpr, e.tdr), (0.0, 1.0));
        let e = evaluate(&[500], &truth).unwrap();
        assert_eq!((e.fpr, e.tdr), (1.0, 0.0));
        assert_eq!(evaluate(&[], &truth).unwrap().fpr, 0.0);
        assert!(evaluate(&[1], &[]).is_err());
    }

    #[test]
    fn identical_columns_distances() {
        let ds = BinaryDataset::from_dense(&[vec![1, 1], vec![1, 1], vec![0, 0], vec![1, 1]]).unwrap();
        assert_eq!(distance(&ds, DistanceKind::L1, 0, 1), 0.0);
        assert_eq!(distance(&ds, DistanceKind::L2, 0, 1), 0.0);
        assert_eq!(distance(&ds, DistanceKind::Binary, 0, 1), 3.0);
        assert_eq!(distance(&ds, DistanceKind::Correlation, 0, 1), 0.0);
    }

    #[test]
    fn binary_sentinel() {
        let ds = BinaryDataset::from_dense(&[vec![1, 0, 1], vec![0, 1, 1]]).unwrap();
        assert!(distance(&ds, DistanceKind::Binary, 0, 1).is_infinite());
        let m = distance_matrix(&ds, DistanceKind::Binary);
        assert_eq!(m, vec![21.0, 2.0, 2.0]);
    }

    #[test]
    fn linkage_two_points() {
        let merges = average_linkage(&[3.0], 2).unwrap();
        assert_eq!(merges, vec![Merge { a: 0, b: 1, height: 3.0, size: 2 }]);
        assert_eq!(select_cluster(&merges, 2, 100), vec![0, 1]);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(StudyConfig::parse("colour = red\n").is_err());
        assert!(StudyConfig::parse("rho = 0.1, 1.0\n").is_err());
        let cfg = StudyConfig::parse("# comment\nn = 50\nrho = 0.2,0.4\ntau_mode = fixed\nmethods = lamb, l1\n").unwrap();
        assert_eq!(cfg.n, 50);
        assert_eq!(cfg.grid().len(), 2);
        assert_eq!(cfg.methods, vec![Method::Lamb, Method::Baseline(DistanceKind::L1)]);
    }
}
