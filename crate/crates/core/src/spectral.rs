//! Augmentation-invariant Laplacian eigenmaps and diffusion maps.
//!
//! Both methods reduce to a generalized symmetric problem `A v = nu B v`
//! with diagonal positive `B`:
//!
//! * Laplacian eigenmaps: `A = D - W`, `B = D`.
//! * Diffusion maps: `A = D_a - W_a`, `B = D_a` where
//!   `W_a = D^-alpha W D^-alpha` and `D_a` holds the row sums of `W_a`.
//!   The transition matrix `P = D_a^-1 W_a` then has eigenvalues
//!   `mu = 1 - nu` with the same right eigenvectors.
//!
//! The first pair (`nu = 0`, constant vector) is always skipped.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cross_weights, degree_vector, WeightMatrix};
use crate::manifold::MultiViewDataset;

/// Eigenvalue below which the leading pair counts as the trivial mode.
pub const TRIVIAL_EIGENVALUE_TOL: f64 = 1e-8;
/// Coefficient of variation below which an eigenvector counts as constant.
pub const CONSTANT_VECTOR_TOL: f64 = 1e-6;
/// Smallest transition eigenvalue the Nystrom formula will divide by.
pub const NYSTROM_MU_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Smallest `count` eigenpairs of `A v = lambda B v` for symmetric `A` and
/// diagonal positive `B` (given as its diagonal).
///
/// Solved by whitening: decompose `B^-1/2 A B^-1/2` and map back with
/// `v = B^-1/2 u`, so the returned vectors satisfy `v^T B v = 1`.
pub fn solve_generalized_symmetric_eigen(a: &DMatrix<f64>, b: &DVector<f64>, count: usize) -> Result<Vec<EigenPair>> {
    let m = a.nrows();
    if !a.is_square() || b.len() != m {
        return Err(Error::config(format!(
            "shape mismatch: A is {}x{}, B has {} entries",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if count > m {
        return Err(Error::config(format!("asked for {count} eigenpairs of a {m}x{m} problem")));
    }
    if let Some(i) = b.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::numerical(format!("B[{i}] = {} is not strictly positive", b[i])));
    }
    let inv_sqrt: DVector<f64> = b.map(|x| 1.0 / x.sqrt());
    let mut s = a.clone();
    for j in 0..m {
        for i in 0..m {
            s[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // Exact symmetry before the decomposition.
    for j in 0..m {
        for i in 0..j {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("non-finite entry in whitened matrix"));
    }
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    Ok(order
        .into_iter()
        .take(count)
        .map(|k| {
            let mut v = eig.eigenvectors.column(k).component_mul(&inv_sqrt);
            fix_sign(&mut v);
            EigenPair {
                value: eig.eigenvalues[k],
                vector: v,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    LaplacianEigenmaps,
    DiffusionMaps { alpha: f64, diffusion_time: f64 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::LaplacianEigenmaps => "laplacian_eigenmaps".into(),
            Method::DiffusionMaps { alpha, diffusion_time } => {
                format!("diffusion_maps(alpha={alpha},l={diffusion_time})")
            }
        }
    }
}

/// Spectral coordinates of the `m` training samples.
///
/// `eigenvalues` are Laplacian-scale and ascending; `transition_eigenvalues`
/// are the matching eigenvalues `mu` of the random-walk operator. For
/// diffusion maps `coords` column `k` equals `eigenvectors` column `k`
/// scaled by `exp(-l * lambda_k)`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub coords: DMatrix<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub transition_eigenvalues: Vec<f64>,
    pub method: Method,
    pub bandwidth_t: f64,
    pub skipped_trivial: bool,
    pub warnings: Vec<String>,
    /// Degrees of `W`, needed to normalize out-of-sample queries.
    pub degrees: DVector<f64>,
}

impl Embedding {
    pub fn m(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.coords.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    /// Rows as owned vectors, the layout the kNN code consumes.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m()).map(|i| self.row(i)).collect()
    }
}

fn check_components(m: usize, n_components: usize) -> Result<()> {
    if n_components < 1 {
        return Err(Error::config("need at least one embedding component"));
    }
    if n_components + 1 > m {
        return Err(Error::config(format!(
            "N={n_components} components need at least N+1={} samples, have m={m}",
            n_components + 1
        )));
    }
    Ok(())
}

fn coefficient_of_variation(v: &DVector<f64>) -> f64 {
    let mean = v.mean();
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    if mean == 0.0 {
        f64::INFINITY
    } else {
        var.sqrt() / mean.abs()
    }
}

struct SpectrumSplit {
    skipped_trivial: bool,
    warnings: Vec<String>,
    kept: Vec<EigenPair>,
}

/// Drops the leading pair and records whether it looked trivial.
fn split_trivial(mut pairs: Vec<EigenPair>) -> SpectrumSplit {
    let first = pairs.remove(0);
    let skipped_trivial =
        first.value.abs() < TRIVIAL_EIGENVALUE_TOL && coefficient_of_variation(&first.vector) < CONSTANT_VECTOR_TOL;
    let mut warnings = Vec::new();
    if !skipped_trivial {
        warnings.push(format!(
            "leading eigenpair is not the constant mode (eigenvalue {:.3e}); skipped anyway",
            first.value
        ));
    }
    if let Some(next) = pairs.first() {
        if next.value.abs() < TRIVIAL_EIGENVALUE_TOL {
            warnings.push(format!(
                "multiple near-zero eigenvalues ({:.3e}); the graph looks disconnected",
                next.value
            ));
        }
    }
    if !warnings.is_empty() {
        log::warn!("{}", warnings.join("; "));
    }
    SpectrumSplit {
        skipped_trivial,
        warnings,
        kept: pairs,
    }
}

fn vectors_to_matrix(m: usize, pairs: &[EigenPair]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, pairs.len());
    for (k, p) in pairs.iter().enumerate() {
        out.set_column(k, &p.vector);
    }
    out
}

/// Graph Laplacian `L = D - W`.
pub fn laplacian(w: &WeightMatrix) -> DMatrix<f64> {
    let d = degree_vector(w);
    let mut l = -w.values().clone();
    for i in 0..l.nrows() {
        l[(i, i)] += d[i];
    }
    l
}

/// Solves `L eta = lambda D eta` and keeps the `n_components` smallest
/// non-trivial eigenpairs.
pub fn laplacian_eigenmaps(w: &WeightMatrix, n_components: usize) -> Result<Embedding> {
    let m = w.m();
    check_components(m, n_components)?;
    let d = degree_vector(w);
    let pairs = solve_generalized_symmetric_eigen(&laplacian(w), &d, n_components + 1)?;
    let split = split_trivial(pairs);
    let vectors = vectors_to_matrix(m, &split.kept);
    let eigenvalues: Vec<f64> = split.kept.iter().map(|p| p.value).collect();
    Ok(Embedding {
        coords: vectors.clone(),
        eigenvectors: vectors,
        transition_eigenvalues: eigenvalues.iter().map(|l| 1.0 - l).collect(),
        eigenvalues,
        method: Method::LaplacianEigenmaps,
        bandwidth_t: w.bandwidth_t(),
        skipped_trivial: split.skipped_trivial,
        warnings: split.warnings,
        degrees: d,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// `W_a = D^-alpha W D^-alpha` and its row sums.
pub fn alpha_normalize(w: &WeightMatrix, alpha: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_alpha(alpha)?;
    let d = degree_vector(w);
    let scale = d.map(|x| x.powf(-alpha));
    let m = w.m();
    let mut wa = w.values().clone();
    for j in 0..m {
        for i in 0..m {
            wa[(i, j)] *= scale[i] * scale[j];
        }
    }
    let da = DVector::from_iterator(m, (0..m).map(|i| wa.row(i).iter().sum()));
    Ok((wa, da))
}

/// Row-stochastic `P = D_a^-1 W_a`.
pub fn transition_matrix(w: &WeightMatrix, alpha: f64) -> Result<DMatrix<f64>> {
    let (mut wa, da) = alpha_normalize(w, alpha)?;
    for i in 0..wa.nrows() {
        let inv = 1.0 / da[i];
        wa.row_mut(i).scale_mut(inv);
    }
    Ok(wa)
}

/// Diffusion-map embedding with density normalization `alpha` and
/// diffusion time `diffusion_time` (`l`).
///
/// Transition eigenvalues `mu` are mapped to the Laplacian scale
/// `lambda = (1 - mu) / t`; coordinate `k` is `exp(-l lambda_k) eta_k`.
pub fn diffusion_maps(w: &WeightMatrix, n_components: usize, alpha: f64, diffusion_time: f64) -> Result<Embedding> {
    let m = w.m();
    check_components(m, n_components)?;
    check_alpha(alpha)?;
    if !(diffusion_time >= 0.0 && diffusion_time.is_finite()) {
        return Err(Error::config(format!("diffusion time l must be >= 0, got {diffusion_time}")));
    }
    let (wa, da) = alpha_normalize(w, alpha)?;
    let mut a = -wa;
    for i in 0..m {
        a[(i, i)] += da[i];
    }
    let pairs = solve_generalized_symmetric_eigen(&a, &da, n_components + 1)?;
    let split = split_trivial(pairs);
    let t = w.bandwidth_t();
    let vectors = vectors_to_matrix(m, &split.kept);
    let mu: Vec<f64> = split.kept.iter().map(|p| 1.0 - p.value).collect();
    let eigenvalues: Vec<f64> = mu.iter().map(|u| (1.0 - u) / t).collect();
    let mut coords = vectors.clone();
    for (k, lambda) in eigenvalues.iter().enumerate() {
        coords.column_mut(k).scale_mut((-diffusion_time * lambda).exp());
    }
    Ok(Embedding {
        coords,
        eigenvectors: vectors,
        eigenvalues,
        transition_eigenvalues: mu,
        method: Method::DiffusionMaps { alpha, diffusion_time },
        bandwidth_t: t,
        skipped_trivial: split.skipped_trivial,
        warnings: split.warnings,
        degrees: degree_vector(w),
    })
}

/// Extends an embedding to a point outside the training set, given the
/// integrated weights `k_i` between the query and each training sample.
///
/// For Laplacian eigenmaps
///
/// ```text
/// eta_k(x) = sum_i k_i eta_k[i] / (mu_k * sum_i k_i),    mu_k = 1 - lambda_k
/// ```
///
/// which is one application of the random-walk operator divided by its
/// eigenvalue. Diffusion maps first apply the same alpha normalization the
/// training graph received, `k_i <- k_i / (d_x^alpha D_i^alpha)` with
/// `d_x = sum_i k_i`, and scale the result by `exp(-l lambda_k)`. A query
/// carrying exactly the views of training sample `i` reproduces row `i`.
pub fn extend_from_weights(embedding: &Embedding, weights: &[f64]) -> Result<Vec<f64>> {
    let m = embedding.m();
    if m < 2 {
        return Err(Error::config("Nystrom extension needs at least 2 training samples"));
    }
    if weights.len() != m {
        return Err(Error::Data(format!("expected {m} query weights, got {}", weights.len())));
    }
    let dx: f64 = weights.iter().sum();
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::numerical(format!(
            "query has total kernel weight {dx}; it is too far from the training data for bandwidth t={}",
            embedding.bandwidth_t
        )));
    }
    let normalized: Vec<f64> = match embedding.method {
        Method::LaplacianEigenmaps => weights.to_vec(),
        Method::DiffusionMaps { alpha, .. } => weights
            .iter()
            .zip(embedding.degrees.iter())
            .map(|(k, d)| k / (dx.powf(alpha) * d.powf(alpha)))
            .collect(),
    };
    let total: f64 = normalized.iter().sum();
    let mut out = Vec::with_capacity(embedding.n_components());
    for k in 0..embedding.n_components() {
        let mu = embedding.transition_eigenvalues[k];
        if mu < NYSTROM_MU_FLOOR {
            return Err(Error::numerical(format!(
                "component {k} has transition eigenvalue {mu:.3e}; Nystrom extension is unstable"
            )));
        }
        let avg: f64 = normalized
            .iter()
            .zip(embedding.eigenvectors.column(k).iter())
            .map(|(w, e)| w * e)
            .sum::<f64>()
            / total;
        let scale = match embedding.method {
            Method::LaplacianEigenmaps => 1.0,
            Method::DiffusionMaps { diffusion_time, .. } => (-diffusion_time * embedding.eigenvalues[k]).exp(),
        };
        out.push(scale * avg / mu);
    }
    Ok(out)
}

/// Nystrom extension of `embedding` (built from `w` over `train`) to a query
/// given as one or more views, flattened.
pub fn nystrom_extend(
    embedding: &Embedding,
    w: &WeightMatrix,
    train: &MultiViewDataset,
    query_views: &[f64],
) -> Result<Vec<f64>> {
    if embedding.m() != train.m() || w.m() != train.m() {
        return Err(Error::config(format!(
            "embedding ({}), weights ({}) and training set ({}) disagree on m",
            embedding.m(),
            w.m(),
            train.m()
        )));
    }
    let weights = cross_weights(train, query_views, w.bandwidth_t())?;
    extend_from_weights(embedding, &weights)
}
