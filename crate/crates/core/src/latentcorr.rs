//! Standardized residuals and the averaged latent-correlation test.
//!
//! With `U_ij = (X_ij - theta_ij) / sqrt(theta_ij (1 - theta_ij))`, the
//! statistic for variable `j` against a set `A` is
//! `psi = mean_i U_ij * Ubar_i`, where `Ubar_i` averages `U_ik` over
//! `k in A \ {j}`. Under independence `sqrt(n) psi / sigma` is
//! asymptotically standard normal, with
//! `sigma^2 = mean_i U_ij^2 Ubar_i^2`.

use rayon::prelude::*;

use crate::dataset::BinaryDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::normal_sf;
use crate::threshold::ThetaMatrix;

/// Dense n x d matrix of standardized residuals, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Real> StandardizedMatrix<T> {
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

/// Builds `U` from data and thresholds; `theta` must be strictly inside (0, 1).
pub fn standardize<T: Real>(ds: &BinaryDataset, theta: &ThetaMatrix<T>) -> Result<StandardizedMatrix<T>> {
    if ds.n() != theta.n() || ds.d() != theta.d() {
        return Err(Error::Shape(format!(
            "data is {} x {}, thresholds are {} x {}",
            ds.n(),
            ds.d(),
            theta.n(),
            theta.d()
        )));
    }
    let n = ds.n();
    let mut data = Vec::with_capacity(n * ds.d());
    for j in 0..ds.d() {
        let th = theta.column(j);
        let start = data.len();
        data.extend(th.iter().map(|&t| -t / (t * (T::one() - t)).sqrt()));
        for &i in ds.column(j) {
            let t = th[i];
            data[start + i] = (T::one() - t) / (t * (T::one() - t)).sqrt();
        }
    }
    Ok(StandardizedMatrix { n, d: ds.d(), data })
}

/// `psi`, its standard error, the z-score and the one-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestStatistic<T> {
    pub psi: T,
    pub sigma: T,
    pub z: T,
    pub pvalue: T,
}

/// Upper-tail p-value of `sqrt(n) psi / sigma`.
///
/// A zero `sigma` gives 0 when `psi > 0` and 1 otherwise.
pub fn pvalue<T: Real>(psi: T, sigma: T, n: usize) -> (T, T) {
    if sigma <= T::zero() {
        let p = if psi > T::zero() { T::zero() } else { T::one() };
        let z = if psi > T::zero() { T::infinity() } else { T::neg_infinity() };
        return (z, p);
    }
    let z = T::from_usize(n).unwrap().sqrt() * psi / sigma;
    (z, normal_sf(z))
}

/// `mean_i U_ij U_ik`.
pub fn pairwise_psi<T: Real>(u: &StandardizedMatrix<T>, j: usize, k: usize) -> T {
    let s: T = u.column(j).iter().zip(u.column(k)).map(|(&a, &b)| a * b).sum();
    s / T::from_usize(u.n).unwrap()
}

/// All pairwise `psi` values as a d x d row-major matrix (diagonal = mean U^2).
pub fn psi_matrix<T: Real>(u: &StandardizedMatrix<T>) -> Vec<Vec<T>> {
    (0..u.d)
        .into_par_iter()
        .map(|j| (0..u.d).map(|k| pairwise_psi(u, j, k)).collect())
        .collect()
}

/// CSV with a header row of labels and a leading label column.
pub fn psi_matrix_csv<T: Real>(psi: &[Vec<T>], labels: &[String]) -> String {
    let mut out = String::from("label");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(psi) {
        out.push_str(l);
        for v in row {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

fn check_set(u_d: usize, set: &[usize]) -> Result<()> {
    match set.iter().find(|&&k| k >= u_d) {
        Some(k) => Err(Error::InvalidArgument(format!("column {k} out of range for {u_d} columns"))),
        None => Ok(()),
    }
}

/// Row sums `S_i = sum_{k in A} U_ik`.
fn row_sums<T: Real>(u: &StandardizedMatrix<T>, set: &[usize]) -> Vec<T> {
    let mut s = vec![T::zero(); u.n];
    for &k in set {
        for (acc, &v) in s.iter_mut().zip(u.column(k)) {
            *acc = *acc + v;
        }
    }
    s
}

fn statistic_from_sums<T: Real>(u: &StandardizedMatrix<T>, j: usize, sums: &[T], set_len: usize, in_set: bool) -> Option<TestStatistic<T>> {
    let m = if in_set { set_len - 1 } else { set_len };
    if m == 0 {
        return None;
    }
    let m = T::from_usize(m).unwrap();
    let col = u.column(j);
    let mut psi = T::zero();
    let mut var = T::zero();
    for (&uij, &s) in col.iter().zip(sums) {
        let rest = if in_set { s - uij } else { s };
        let prod = uij * rest / m;
        psi = psi + prod;
        var = var + prod * prod;
    }
    let nf = T::from_usize(u.n).unwrap();
    let psi = psi / nf;
    let sigma = (var / nf).sqrt();
    let (z, pvalue) = pvalue(psi, sigma, u.n);
    Some(TestStatistic { psi, sigma, z, pvalue })
}

/// `psi(j, A)` excluding `j` from `A`; `None` when `A \ {j}` is empty.
///
/// `set` must hold distinct column indices.
pub fn test_statistic<T: Real>(u: &StandardizedMatrix<T>, j: usize, set: &[usize]) -> Result<Option<TestStatistic<T>>> {
    check_set(u.d, set)?;
    check_set(u.d, &[j])?;
    let sums = row_sums(u, set);
    Ok(statistic_from_sums(u, j, &sums, set.len(), set.contains(&j)))
}

/// Convenience wrapper returning only `psi`.
pub fn avg_psi<T: Real>(u: &StandardizedMatrix<T>, j: usize, set: &[usize]) -> Result<Option<T>> {
    Ok(test_statistic(u, j, set)?.map(|s| s.psi))
}

/// Statistics for every column against `set`, in column order.
pub fn sweep<T: Real>(u: &StandardizedMatrix<T>, set: &[usize]) -> Result<Vec<Option<TestStatistic<T>>>> {
    check_set(u.d, set)?;
    let sums = row_sums(u, set);
    let mut member = vec![false; u.d];
    for &k in set {
        member[k] = true;
    }
    Ok((0..u.d)
        .into_par_iter()
        .map(|j| statistic_from_sums(u, j, &sums, set.len(), member[j]))
        .collect())
}
