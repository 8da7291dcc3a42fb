//! Threshold estimation under `theta_ij = 1 - exp(-tau_i * alpha_j)`.
//!
//! The default estimator alternates two exact one-dimensional solves:
//! each sample's `tau_i` maximizes its row likelihood with `alpha` fixed,
//! then each `alpha_j` is set so the fitted column mean matches the
//! observed one. The model is invariant under `(tau, alpha) -> (c tau,
//! alpha / c)`; the scale is pinned by normalizing the mean of the
//! interior `tau_i` to one after every sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BinaryDataset, ColumnStats};
use crate::error::{Error, Result};
use crate::quadrature::integrate_half_line;
use crate::scalar::{reachable_tol, Real};

pub const DEFAULT_TAU_MIN: f64 = 1e-6;
pub const DEFAULT_TAU_MAX: f64 = 1e4;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

const TAU_SOLVE_TOL: f64 = 1e-10;
const ALPHA_SOLVE_TOL: f64 = 1e-12;
const MAX_SOLVER_STEPS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauBounds<T> {
    pub min: T,
    pub max: T,
}

impl<T: Real> Default for TauBounds<T> {
    fn default() -> Self {
        Self {
            min: T::lit(DEFAULT_TAU_MIN),
            max: T::lit(DEFAULT_TAU_MAX),
        }
    }
}

impl<T: Real> TauBounds<T> {
    pub fn clamp(&self, t: T) -> T {
        t.max(self.min).min(self.max)
    }

    fn is_interior(&self, t: T) -> bool {
        t > self.min && t < self.max
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions<T> {
    pub tol: f64,
    pub max_iter: usize,
    pub bounds: TauBounds<T>,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            bounds: TauBounds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FitMethod {
    Empirical,
    Gamma { zeta: f64, beta: f64 },
}

/// Fitted per-variable `alpha` and per-sample `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFit<T> {
    pub alpha: Vec<T>,
    pub tau: Vec<T>,
    pub method: FitMethod,
    /// Set by the empirical fit when the sup-norm parameter change fell below `tol`.
    pub converged: bool,
    pub iterations: usize,
    pub tol: f64,
    /// `max_j |xbar_j - mean_i(1 - exp(-tau_i alpha_j))|`.
    pub constraint_residual: T,
}

impl<T: Real> ThresholdFit<T> {
    /// Unclamped `1 - exp(-tau_i alpha_j)`.
    pub fn theta(&self, i: usize, j: usize) -> T {
        -(-(self.tau[i] * self.alpha[j])).exp_m1()
    }
}

/// Per-sweep diagnostics of the alternating fit.
#[derive(Debug, Clone, Copy)]
pub struct SweepStats<T> {
    /// Total row log-likelihood before and after the tau update (alpha fixed).
    pub loglik_before: T,
    pub loglik_after_tau: T,
    /// Moment-constraint residual after the alpha update.
    pub residual: T,
    pub change: T,
}

/// Gamma(shape `zeta`, rate `beta`) prior on `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior<T> {
    pub zeta: T,
    pub beta: T,
}

impl<T: Real> GammaPrior<T> {
    pub fn new(zeta: T, beta: T) -> Result<Self> {
        if !(zeta > T::zero() && zeta.is_finite() && beta > T::zero() && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma prior needs positive finite shape and rate, got ({zeta}, {beta})"
            )));
        }
        Ok(Self { zeta, beta })
    }

    pub fn mean(&self) -> T {
        self.zeta / self.beta
    }

    /// Advisory checks: the moment bounds used for the CLT hold when
    /// `zeta >= 3` and `beta > 6 max_j alpha_j`.
    pub fn warnings(&self, max_alpha: T) -> Vec<String> {
        let mut out = Vec::new();
        if self.zeta < T::lit(3.0) {
            out.push(format!(
                "gamma prior shape {} < 3: moment conditions for the normal approximation may fail",
                self.zeta
            ));
        }
        if self.beta <= T::lit(6.0) * max_alpha {
            out.push(format!(
                "gamma prior rate {} <= 6 * max alpha ({}): requires beta > 6M and zeta >= 3",
                self.beta,
                T::lit(6.0) * max_alpha
            ));
        }
        out
    }
}

/// Dense n x d threshold matrix, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Real> ThetaMatrix<T> {
    /// Wraps column-major values; every entry must lie strictly inside (0, 1).
    pub fn from_column_major(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values for a {n} x {d} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&t| !(t > T::zero() && t < T::one())) {
            return Err(Error::InvalidArgument(format!(
                "theta at ({}, {}) = {} is not inside (0, 1)",
                pos % n.max(1),
                pos / n.max(1),
                data[pos]
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_fn(n: usize, d: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(n * d);
        for j in 0..d {
            for i in 0..n {
                data.push(f(i, j));
            }
        }
        Self::from_column_major(n, d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[j * self.n + i]
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

/// Starting values: `alpha_j = -ln(1 - xbar_j)` (exact when all `tau_i = 1`)
/// and `tau_i` = row mean over grand mean, clamped.
pub fn init_params<T: Real>(
    stats: &ColumnStats<T>,
    ds: &BinaryDataset,
    bounds: TauBounds<T>,
) -> (Vec<T>, Vec<T>) {
    let alpha: Vec<T> = stats.xbar.iter().map(|&x| -(-x).ln_1p()).collect();
    let sums = ds.row_sums();
    let total: usize = sums.iter().sum();
    let tau = if total == 0 {
        vec![T::one(); ds.n()]
    } else {
        let grand = T::from_usize(total).unwrap() / T::from_usize(ds.n()).unwrap();
        sums.iter()
            .map(|&s| bounds.clamp(T::from_usize(s).unwrap() / grand))
            .collect()
    };
    (alpha, tau)
}

fn dense_row_to_ones(x_row: &[bool]) -> Vec<usize> {
    x_row
        .iter()
        .enumerate()
        .filter_map(|(j, &x)| x.then_some(j))
        .collect()
}

fn check_alpha<T: Real>(alpha: &[T]) -> Result<()> {
    match alpha.iter().position(|&a| !(a > T::zero() && a.is_finite())) {
        Some(j) => Err(Error::InvalidArgument(format!(
            "alpha[{j}] = {} is not positive",
            alpha[j]
        ))),
        None => Ok(()),
    }
}

/// Row log-likelihood `sum_j x_j ln(1 - e^{-tau a_j}) - (1 - x_j) tau a_j`.
pub fn row_loglik<T: Real>(alpha: &[T], ones: &[usize], alpha_total: T, tau: T) -> T {
    let mut ones_alpha = T::zero();
    let mut acc = T::zero();
    for &j in ones {
        ones_alpha = ones_alpha + alpha[j];
        acc = acc + (-(-(tau * alpha[j])).exp_m1()).ln();
    }
    acc - tau * (alpha_total - ones_alpha)
}

/// Sum of row log-likelihoods over the dataset.
pub fn total_loglik<T: Real>(ds: &BinaryDataset, alpha: &[T], tau: &[T]) -> T {
    let total: T = alpha.iter().copied().sum();
    ds.rows()
        .iter()
        .zip(tau)
        .map(|(ones, &t)| row_loglik(alpha, ones, total, t))
        .sum()
}

// d/dtau of the row log-likelihood, and its (negative) second derivative.
fn score<T: Real>(alpha: &[T], ones: &[usize], zeros_alpha: T, tau: T) -> (T, T) {
    let mut g = -zeros_alpha;
    let mut h = T::zero();
    for &j in ones {
        let a = alpha[j];
        let x = tau * a;
        let em = x.exp_m1();
        g = g + a / em;
        h = h + a * a / (em * -(-x).exp_m1());
    }
    (g, h)
}

/// Maximizes the row likelihood over `[bounds.min, bounds.max]`.
pub fn solve_tau<T: Real>(alpha: &[T], x_row: &[bool], bounds: TauBounds<T>) -> Result<T> {
    if x_row.len() != alpha.len() {
        return Err(Error::Shape(format!(
            "row of length {} against {} alphas",
            x_row.len(),
            alpha.len()
        )));
    }
    check_alpha(alpha)?;
    let total: T = alpha.iter().copied().sum();
    Ok(solve_tau_sparse(alpha, total, &dense_row_to_ones(x_row), bounds))
}

pub(crate) fn solve_tau_sparse<T: Real>(
    alpha: &[T],
    alpha_total: T,
    ones: &[usize],
    bounds: TauBounds<T>,
) -> T {
    let ones_alpha: T = ones.iter().map(|&j| alpha[j]).sum();
    let zeros_alpha = (alpha_total - ones_alpha).max(T::zero());
    let (g_hi, _) = score(alpha, ones, zeros_alpha, bounds.max);
    if g_hi >= T::zero() {
        return bounds.max;
    }
    let (g_lo, _) = score(alpha, ones, zeros_alpha, bounds.min);
    if g_lo <= T::zero() {
        return bounds.min;
    }
    let tol = reachable_tol::<T>(TAU_SOLVE_TOL);
    let (mut lo, mut hi) = (bounds.min, bounds.max);
    // Start from the closed form for a single effective item.
    let mut t = if ones.is_empty() || zeros_alpha <= T::zero() {
        (lo * hi).sqrt()
    } else {
        let mean_a = ones_alpha / T::from_usize(ones.len()).unwrap();
        let ratio = T::from_usize(ones.len()).unwrap() * mean_a / zeros_alpha;
        bounds.clamp(ratio.ln_1p() / mean_a)
    };
    for _ in 0..MAX_SOLVER_STEPS {
        let (g, h) = score(alpha, ones, zeros_alpha, t);
        if g > T::zero() {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t + g / h;
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            (lo * hi).sqrt()
        };
        let step = (next - t).abs();
        t = next;
        if step <= tol * t || (hi - lo) <= tol * lo {
            break;
        }
    }
    t
}

fn moment_gap<T: Real>(tau: &[T], xbar: T, alpha: T) -> (T, T) {
    let n = T::from_usize(tau.len()).unwrap();
    let mut h = T::zero();
    let mut dh = T::zero();
    for &t in tau {
        let e = -(-(t * alpha)).exp_m1();
        h = h + e;
        dh = dh + t * (T::one() - e);
    }
    (h / n - xbar, dh / n)
}

/// Solves `mean_i(1 - exp(-tau_i alpha)) = xbar` for `alpha`.
pub fn solve_alpha<T: Real>(tau: &[T], xbar: T) -> Result<T> {
    if !(xbar > T::zero() && xbar < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "column mean {xbar} is outside (0, 1)"
        )));
    }
    if tau.is_empty() || tau.iter().any(|&t| !(t > T::zero() && t.is_finite())) {
        return Err(Error::InvalidArgument("tau must be nonempty and positive".into()));
    }
    let tol = reachable_tol::<T>(ALPHA_SOLVE_TOL);
    let mean_tau = tau.iter().copied().sum::<T>() / T::from_usize(tau.len()).unwrap();
    let mut hi = (-(-xbar).ln_1p() / mean_tau).max(T::min_positive_value());
    let mut lo = T::zero();
    let mut doublings = 0;
    while moment_gap(tau, xbar, hi).0 < T::zero() {
        lo = hi;
        hi = hi + hi;
        doublings += 1;
        if doublings > 2000 || !hi.is_finite() {
            return Err(Error::Numerical(format!("cannot bracket alpha for mean {xbar}")));
        }
    }
    let mut a = T::lit(0.5) * (lo + hi);
    for _ in 0..MAX_SOLVER_STEPS {
        let (h, dh) = moment_gap(tau, xbar, a);
        if h == T::zero() {
            return Ok(a);
        }
        if h < T::zero() {
            lo = a;
        } else {
            hi = a;
        }
        let newton = a - h / dh;
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            T::lit(0.5) * (lo + hi)
        };
        let step = (next - a).abs();
        a = next;
        if step <= tol * a || (hi - lo) <= tol * a {
            break;
        }
    }
    Ok(a)
}

/// `max_j |xbar_j - mean_i(1 - exp(-tau_i alpha_j))|`.
pub fn constraint_residual<T: Real>(xbar: &[T], alpha: &[T], tau: &[T]) -> T {
    xbar.iter()
        .zip(alpha)
        .map(|(&x, &a)| moment_gap(tau, x, a).0.abs())
        .fold(T::zero(), T::max)
}

fn validate_for_fit(ds: &BinaryDataset) -> Result<()> {
    if ds.d() == 0 {
        return Err(Error::NoInformativeColumns);
    }
    if ds.n() < 2 || ds.d() < 2 {
        return Err(Error::InvalidArgument(format!(
            "threshold fit needs n >= 2 and d >= 2, got {} x {}",
            ds.n(),
            ds.d()
        )));
    }
    Ok(())
}

/// Alternating constrained maximum likelihood under the empirical prior.
pub fn fit_empirical<T: Real>(ds: &BinaryDataset, opts: &FitOptions<T>) -> Result<ThresholdFit<T>> {
    fit_empirical_traced(ds, opts).map(|(fit, _)| fit)
}

/// Like [`fit_empirical`], also returning per-sweep diagnostics.
pub fn fit_empirical_traced<T: Real>(
    ds: &BinaryDataset,
    opts: &FitOptions<T>,
) -> Result<(ThresholdFit<T>, Vec<SweepStats<T>>)> {
    validate_for_fit(ds)?;
    let stats = ds.column_means::<T>()?;
    let bounds = opts.bounds;
    let (mut alpha, mut tau) = init_params(&stats, ds, bounds);
    let rows = ds.rows();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let total: T = alpha.iter().copied().sum();
        let loglik_before = rows
            .iter()
            .zip(&tau)
            .map(|(r, &t)| row_loglik(&alpha, r, total, t))
            .sum();
        let mut next_tau: Vec<T> = rows
            .par_iter()
            .map(|ones| solve_tau_sparse(&alpha, total, ones, bounds))
            .collect();
        let loglik_after_tau = rows
            .iter()
            .zip(&next_tau)
            .map(|(r, &t)| row_loglik(&alpha, r, total, t))
            .sum();

        let interior: Vec<T> = next_tau
            .iter()
            .copied()
            .filter(|&t| bounds.is_interior(t))
            .collect();
        if !interior.is_empty() {
            let scale = interior.iter().copied().sum::<T>() / T::from_usize(interior.len()).unwrap();
            for t in next_tau.iter_mut().filter(|t| bounds.is_interior(**t)) {
                *t = bounds.clamp(*t / scale);
            }
        }

        let next_alpha = stats
            .xbar
            .par_iter()
            .map(|&x| solve_alpha(&next_tau, x))
            .collect::<Result<Vec<T>>>()?;

        let change = next_tau
            .iter()
            .zip(&tau)
            .chain(next_alpha.iter().zip(&alpha))
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max);
        tau = next_tau;
        alpha = next_alpha;
        trace.push(SweepStats {
            loglik_before,
            loglik_after_tau,
            residual: constraint_residual(&stats.xbar, &alpha, &tau),
            change,
        });
        if change < T::lit(opts.tol) {
            converged = true;
            break;
        }
    }
    let constraint_residual = constraint_residual(&stats.xbar, &alpha, &tau);
    Ok((
        ThresholdFit {
            alpha,
            tau,
            method: FitMethod::Empirical,
            converged,
            iterations,
            tol: opts.tol,
            constraint_residual,
        },
        trace,
    ))
}

/// Log of the unnormalized posterior density of `tau` under a gamma prior.
fn log_post<T: Real>(t: T, ones: &[usize], alpha: &[T], zeros_alpha: T, prior: &GammaPrior<T>) -> T {
    let mut lp = (prior.zeta - T::one()) * t.ln() - (prior.beta + zeros_alpha) * t;
    for &j in ones {
        lp = lp + (-(-(t * alpha[j])).exp_m1()).ln();
    }
    lp
}

/// Posterior mean of `tau` for one sample under a gamma prior, by quadrature.
pub fn posterior_mean_tau_gamma<T: Real>(
    x_row: &[bool],
    alpha: &[T],
    prior: &GammaPrior<T>,
) -> Result<T> {
    if x_row.len() != alpha.len() {
        return Err(Error::Shape(format!(
            "row of length {} against {} alphas",
            x_row.len(),
            alpha.len()
        )));
    }
    check_alpha(alpha)?;
    let total: T = alpha.iter().copied().sum();
    posterior_mean_sparse(&dense_row_to_ones(x_row), alpha, total, prior)
}

fn posterior_mean_sparse<T: Real>(
    ones: &[usize],
    alpha: &[T],
    alpha_total: T,
    prior: &GammaPrior<T>,
) -> Result<T> {
    let ones_alpha: T = ones.iter().map(|&j| alpha[j]).sum();
    let zeros_alpha = (alpha_total - ones_alpha).max(T::zero());
    // Scale and shift from the mode (or the conjugate mean when there is none).
    let rate = prior.beta + zeros_alpha;
    let mut scale = prior.zeta / rate;
    let shape_near_zero = prior.zeta - T::one() + T::from_usize(ones.len()).unwrap();
    if shape_near_zero > T::zero() {
        let dlp = |t: T| {
            let mut g = (prior.zeta - T::one()) / t - rate;
            for &j in ones {
                g = g + alpha[j] / (t * alpha[j]).exp_m1();
            }
            g
        };
        let (mut lo, mut hi) = (T::lit(1e-300), T::one());
        while dlp(hi) > T::zero() && hi < T::lit(1e300) {
            hi = hi * T::lit(2.0);
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if dlp(mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= T::lit(1e-12) * hi {
                break;
            }
        }
        scale = hi;
    }
    let shift = log_post(scale, ones, alpha, zeros_alpha, prior);
    let kernel = |u: T| {
        let t = u * scale;
        if t <= T::zero() {
            return T::zero();
        }
        (log_post(t, ones, alpha, zeros_alpha, prior) - shift).exp()
    };
    let rel = T::lit(1e-10).max(T::solver_floor());
    let abs = T::lit(1e-300).max(T::min_positive_value());
    let mass = integrate_half_line(kernel, abs, rel)?;
    let first = integrate_half_line(|u| u * kernel(u), abs, rel)?;
    if !(mass.value > T::zero()) {
        return Err(Error::Numerical("posterior mass vanished".into()));
    }
    Ok(scale * first.value / mass.value)
}

/// Expected threshold `E[theta] = 1 - (beta / (beta + alpha))^zeta` under a gamma prior.
pub fn gamma_mean_theta<T: Real>(alpha: T, prior: &GammaPrior<T>) -> T {
    T::one() - (prior.beta / (prior.beta + alpha)).powf(prior.zeta)
}

/// Inverse of [`gamma_mean_theta`] in `alpha`.
pub fn gamma_alpha_for_mean<T: Real>(xbar: T, prior: &GammaPrior<T>) -> T {
    prior.beta * (-(-xbar).ln_1p() / prior.zeta).exp_m1()
}

/// Gamma-prior estimator: alpha by inverting the prior-mean moment map,
/// tau by posterior means.
pub fn fit_gamma<T: Real>(ds: &BinaryDataset, prior: &GammaPrior<T>) -> Result<ThresholdFit<T>> {
    validate_for_fit(ds)?;
    let stats = ds.column_means::<T>()?;
    let alpha: Vec<T> = stats
        .xbar
        .iter()
        .map(|&x| gamma_alpha_for_mean(x, prior))
        .collect();
    let total: T = alpha.iter().copied().sum();
    let tau = ds
        .rows()
        .par_iter()
        .map(|ones| posterior_mean_sparse(ones, &alpha, total, prior))
        .collect::<Result<Vec<T>>>()?;
    let residual = constraint_residual(&stats.xbar, &alpha, &tau);
    Ok(ThresholdFit {
        alpha,
        tau,
        method: FitMethod::Gamma {
            zeta: prior.zeta.as_f64(),
            beta: prior.beta.as_f64(),
        },
        converged: true,
        iterations: 1,
        tol: 0.0,
        constraint_residual: residual,
    })
}

/// Default clamp `1 / (2n)`.
pub fn default_eps_theta<T: Real>(n: usize) -> T {
    T::one() / T::from_usize(2 * n.max(1)).unwrap()
}

/// Dense `theta_hat` clamped into `[eps, 1 - eps]`.
pub fn theta_matrix<T: Real>(fit: &ThresholdFit<T>, eps_theta: T) -> Result<ThetaMatrix<T>> {
    if !(eps_theta > T::zero() && eps_theta < T::lit(0.5) && T::one() - eps_theta < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "eps_theta {eps_theta} must lie in (0, 0.5) and be resolvable next to 1"
        )));
    }
    let n = fit.tau.len();
    let d = fit.alpha.len();
    let hi = T::one() - eps_theta;
    let mut data = Vec::with_capacity(n * d);
    for &a in &fit.alpha {
        for &t in &fit.tau {
            let th = -(-(t * a)).exp_m1();
            data.push(th.max(eps_theta).min(hi));
        }
    }
    ThetaMatrix::from_column_major(n, d, data)
}

/// JSON form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub alpha: Vec<f64>,
    pub tau: Vec<f64>,
    pub meta: FitMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub tol: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub method: FitMethod,
    /// Column labels the alphas belong to, in order.
    #[serde(default)]
    pub columns: Vec<String>,
}

impl FitDocument {
    pub fn from_fit<T: Real>(fit: &ThresholdFit<T>, columns: &[String]) -> Self {
        Self {
            alpha: fit.alpha.iter().map(|a| a.as_f64()).collect(),
            tau: fit.tau.iter().map(|t| t.as_f64()).collect(),
            meta: FitMeta {
                tol: fit.tol,
                iterations: fit.iterations,
                residual: fit.constraint_residual.as_f64(),
                converged: fit.converged,
                method: fit.method,
                columns: columns.to_vec(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }

    /// Rebuilds a fit for `ds`, checking dimensions and column labels.
    pub fn into_fit<T: Real>(self, ds: &BinaryDataset) -> Result<ThresholdFit<T>> {
        if self.alpha.len() != ds.d() || self.tau.len() != ds.n() {
            return Err(Error::Shape(format!(
                "fit has {} alphas and {} taus, data is {} x {}",
                self.alpha.len(),
                self.tau.len(),
                ds.n(),
                ds.d()
            )));
        }
        if !self.meta.columns.is_empty() && self.meta.columns != ds.col_labels() {
            return Err(Error::Document(
                "fit column labels do not match the input columns".into(),
            ));
        }
        let alpha: Vec<T> = self.alpha.iter().map(|&a| T::lit(a)).collect();
        check_alpha(&alpha)?;
        let tau: Vec<T> = self.tau.iter().map(|&t| T::lit(t)).collect();
        if tau.iter().any(|&t| !(t > T::zero() && t.is_finite())) {
            return Err(Error::Document("tau values must be positive".into()));
        }
        Ok(ThresholdFit {
            alpha,
            tau,
            method: self.meta.method,
            converged: self.meta.converged,
            iterations: self.meta.iterations,
            tol: self.meta.tol,
            constraint_residual: T::lit(self.meta.residual),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bounds() -> TauBounds<f64> {
        TauBounds::default()
    }

    #[test]
    fn init_inverts_mean_at_unit_tau() {
        let ds = BinaryDataset::from_dense(&[vec![1, 1], vec![0, 1], vec![1, 0], vec![0, 0]]).unwrap();
        let stats = ds.column_means::<f64>().unwrap();
        let (alpha, tau) = init_params(&stats, &ds, bounds());
        assert_relative_eq!(alpha[0], std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(tau[3], DEFAULT_TAU_MIN);
        assert_relative_eq!(tau[0], 2.0);
    }

    #[test]
    fn init_identical_rows_unit_tau() {
        let ds = BinaryDataset::from_dense(&[vec![1, 0, 1], vec![1, 0, 1]]).unwrap();
        let stats = ColumnStats { xbar: vec![1.0 - (-2.0f64).exp()] };
        let (alpha, tau) = init_params(&stats, &ds, bounds());
        assert_relative_eq!(alpha[0], 2.0, epsilon = 1e-14);
        assert!(tau.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn tau_single_pair_is_ln2() {
        let t = solve_tau(&[1.0, 1.0], &[true, false], bounds()).unwrap();
        assert_relative_eq!(t, std::f64::consts::LN_2, max_relative = 1e-10);
    }

    #[test]
    fn tau_degenerate_rows_hit_bounds() {
        assert_eq!(solve_tau(&[0.3, 0.7], &[false, false], bounds()).unwrap(), DEFAULT_TAU_MIN);
        assert_eq!(solve_tau(&[0.3, 0.7], &[true, true], bounds()).unwrap(), DEFAULT_TAU_MAX);
    }

    #[test]
    fn tau_rejects_bad_alpha() {
        assert!(solve_tau(&[0.3, 0.0], &[true, false], bounds()).is_err());
        assert!(solve_tau(&[0.3], &[true, false], bounds()).is_err());
    }

    #[test]
    fn alpha_closed_form_and_round_trip() {
        let a = solve_alpha(&[1.0; 5], 0.5).unwrap();
        assert_relative_eq!(a, std::f64::consts::LN_2, max_relative = 1e-12);
        let tau = [1.0, 2.0];
        let xbar = ((1.0 - (-0.3f64).exp()) + (1.0 - (-0.6f64).exp())) / 2.0;
        assert_relative_eq!(solve_alpha(&tau, xbar).unwrap(), 0.3, max_relative = 1e-12);
    }

    #[test]
    fn alpha_monotone_in_mean() {
        let tau = [0.2, 1.0, 3.0];
        let mut prev = 0.0;
        for k in 1..20 {
            let a = solve_alpha(&tau, k as f64 / 20.0).unwrap();
            assert!(a > prev);
            prev = a;
        }
        assert!(solve_alpha(&tau, 1.0).is_err());
        assert!(solve_alpha(&tau, 0.0).is_err());
    }

    #[test]
    fn theta_clamp_behaviour() {
        let fit = ThresholdFit {
            alpha: vec![std::f64::consts::LN_2, 50.0],
            tau: vec![1.0, DEFAULT_TAU_MAX],
            method: FitMethod::Empirical,
            converged: true,
            iterations: 1,
            tol: 1e-8,
            constraint_residual: 0.0,
        };
        let th = theta_matrix(&fit, 0.01).unwrap();
        assert_relative_eq!(th.get(0, 0), 0.5, epsilon = 1e-15);
        assert_eq!(th.get(1, 1), 0.99);
        let loose = theta_matrix(&fit, 1e-12).unwrap();
        assert_eq!(loose.get(0, 0), th.get(0, 0));
        assert!(theta_matrix(&fit, 1e-20).is_err());
        assert!(theta_matrix(&fit, 0.5).is_err());
    }

    #[test]
    fn gamma_posterior_empty_row_is_prior_mean() {
        let prior = GammaPrior::new(3.0, 7.0).unwrap();
        let t = posterior_mean_tau_gamma::<f64>(&[], &[], &prior).unwrap();
        assert_relative_eq!(t, 3.0 / 7.0, max_relative = 1e-9);
    }

    #[test]
    fn gamma_warnings() {
        let p = GammaPrior::new(2.0, 1.0).unwrap();
        assert_eq!(p.warnings(0.5).len(), 2);
        let p = GammaPrior::new(3.0, 10.0).unwrap();
        assert!(p.warnings(0.5).is_empty());
        assert!(GammaPrior::new(0.0, 1.0).is_err());
    }

    #[test]
    fn gamma_moment_map_inverts() {
        let p = GammaPrior::new(3.5, 4.0).unwrap();
        for &a in &[0.01, 0.3, 2.0] {
            let m = gamma_mean_theta(a, &p);
            assert_relative_eq!(gamma_alpha_for_mean(m, &p), a, max_relative = 1e-10);
        }
    }

    #[test]
    fn document_rejects_mismatch() {
        let ds = BinaryDataset::from_dense(&[vec![1, 0], vec![0, 1]]).unwrap();
        let doc = FitDocument {
            alpha: vec![0.5],
            tau: vec![1.0, 1.0],
            meta: FitMeta {
                tol: 1e-8,
                iterations: 3,
                residual: 0.0,
                converged: true,
                method: FitMethod::Empirical,
                columns: vec![],
            },
        };
        assert!(doc.into_fit::<f64>(&ds).is_err());
    }
}
