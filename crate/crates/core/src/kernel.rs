//! Integrated augmentation kernel.
//!
//! The weight between two samples is the Gaussian kernel averaged over every
//! pair of their views:
//!
//! ```text
//! W[a, b] = 1/(n_a n_b) * sum_{j1, j2} exp(-|X[a, j1] - X[b, j2]|^2 / t)
//! ```
//!
//! Each entry sums its terms in ascending order of value, so the result
//! does not depend on thread count, argument order or view order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::MultiViewDataset;
use crate::rng::{self, Domain};

/// Dense symmetric `m x m` integrated kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: DMatrix<f64>,
    bandwidth_t: f64,
    n_views: usize,
}

impl WeightMatrix {
    /// Wraps an explicit symmetric matrix; used by tests and the graph
    /// examples that are not built from a dataset.
    pub fn from_matrix(values: DMatrix<f64>, bandwidth_t: f64, n_views: usize) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Data(format!(
                "weight matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data("weights must be finite and non-negative".into()));
        }
        let m = values.nrows();
        for i in 0..m {
            for j in 0..i {
                if values[(i, j)] != values[(j, i)] {
                    return Err(Error::Data(format!("weight matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(WeightMatrix {
            values,
            bandwidth_t,
            n_views,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn bandwidth_t(&self) -> f64 {
        self.bandwidth_t
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }
}

fn check_bandwidth(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("bandwidth t must be positive, got {t}")))
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean Gaussian kernel over all view pairs of two view blocks.
///
/// `a` and `b` hold `n_a` and `n_b` contiguous vectors of length `dim`. The
/// terms are summed in ascending order of value, which makes the result
/// bit-identical under swapping `a` and `b` or permuting views.
pub fn view_block_weight(a: &[f64], b: &[f64], dim: usize, t: f64) -> f64 {
    let mut terms = Vec::with_capacity((a.len() / dim) * (b.len() / dim));
    for va in a.chunks_exact(dim) {
        for vb in b.chunks_exact(dim) {
            terms.push((-squared_distance(va, vb) / t).exp());
        }
    }
    let count = terms.len() as f64;
    terms.sort_unstable_by(|x, y| x.total_cmp(y));
    terms.iter().sum::<f64>() / count
}

/// Computes the integrated weight matrix, diagonal included.
pub fn integrated_weights(dataset: &MultiViewDataset, t: f64) -> Result<WeightMatrix> {
    check_bandwidth(t)?;
    if let Some(pos) = dataset.points().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite coordinate at flat index {pos}")));
    }
    let m = dataset.m();
    let dim = dataset.dim();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|a| {
            let va = dataset.sample_views(a);
            (a..m)
                .map(|b| view_block_weight(va, dataset.sample_views(b), dim, t))
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(m, m);
    for (a, row) in rows.iter().enumerate() {
        for (offset, &w) in row.iter().enumerate() {
            let b = a + offset;
            values[(a, b)] = w;
            values[(b, a)] = w;
        }
    }
    Ok(WeightMatrix {
        values,
        bandwidth_t: t,
        n_views: dataset.n(),
    })
}

/// Integrated weights between a query (one or more views, flattened) and
/// every sample of `dataset`.
pub fn cross_weights(dataset: &MultiViewDataset, query_views: &[f64], t: f64) -> Result<Vec<f64>> {
    check_bandwidth(t)?;
    let dim = dataset.dim();
    if query_views.is_empty() || !query_views.len().is_multiple_of(dim) {
        return Err(Error::Data(format!(
            "query must hold a positive multiple of {dim} coordinates, got {}",
            query_views.len()
        )));
    }
    if query_views.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite query coordinate".into()));
    }
    Ok((0..dataset.m())
        .map(|i| view_block_weight(query_views, dataset.sample_views(i), dim, t))
        .collect())
}

/// Bandwidth selection rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    /// `m^(-1/(d+4))`
    TheoryRate { d: usize },
    /// `(log m / m)^(2/(4d+13))`
    LogRate { d: usize },
    /// Median squared distance over cross-sample view pairs.
    MedianHeuristic,
    Fixed(f64),
}

impl std::fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandwidthRule::TheoryRate { d } => write!(f, "theory_rate({d})"),
            BandwidthRule::LogRate { d } => write!(f, "log_rate({d})"),
            BandwidthRule::MedianHeuristic => write!(f, "median"),
            BandwidthRule::Fixed(t) => write!(f, "fixed({t})"),
        }
    }
}

impl std::str::FromStr for BandwidthRule {
    type Err = Error;

    /// Accepts `median`, `fixed:<t>`, `theory:<d>` and `log:<d>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s, None),
        };
        let dim = |a: Option<&str>| -> Result<usize> {
            a.ok_or_else(|| Error::config(format!("bandwidth rule `{s}` needs a dimension")))?
                .parse()
                .map_err(|_| Error::config(format!("bad dimension in bandwidth rule `{s}`")))
        };
        match head {
            "median" => Ok(BandwidthRule::MedianHeuristic),
            "theory" => Ok(BandwidthRule::TheoryRate { d: dim(arg)? }),
            "log" => Ok(BandwidthRule::LogRate { d: dim(arg)? }),
            "fixed" => {
                let t: f64 = arg
                    .ok_or_else(|| Error::config("fixed bandwidth needs a value"))?
                    .parse()
                    .map_err(|_| Error::config(format!("bad bandwidth `{s}`")))?;
                check_bandwidth(t)?;
                Ok(BandwidthRule::Fixed(t))
            }
            _ => Err(Error::config(format!("unknown bandwidth rule `{s}`"))),
        }
    }
}

pub const MEDIAN_PAIR_BUDGET: usize = 10_000;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Picks a bandwidth `t` for `dataset`.
///
/// The median rule enumerates all cross-sample view pairs when there are at
/// most [`MEDIAN_PAIR_BUDGET`] of them and otherwise draws that many pairs
/// from a stream keyed by the dataset seed.
pub fn bandwidth_heuristic(dataset: &MultiViewDataset, rule: BandwidthRule) -> Result<f64> {
    let m = dataset.m();
    if m < 2 {
        return Err(Error::config("bandwidth needs m >= 2"));
    }
    let mf = m as f64;
    let t = match rule {
        BandwidthRule::TheoryRate { d } | BandwidthRule::LogRate { d } if d < 1 => {
            return Err(Error::config("rate rules need intrinsic dimension d >= 1"));
        }
        BandwidthRule::TheoryRate { d } => mf.powf(-1.0 / (d as f64 + 4.0)),
        BandwidthRule::LogRate { d } => (mf.ln() / mf).powf(2.0 / (4.0 * d as f64 + 13.0)),
        BandwidthRule::Fixed(t) => t,
        BandwidthRule::MedianHeuristic => {
            let n = dataset.n();
            let total = m * (m - 1) / 2 * n * n;
            let mut d2 = Vec::with_capacity(total.min(MEDIAN_PAIR_BUDGET));
            if total <= MEDIAN_PAIR_BUDGET {
                for a in 0..m {
                    for b in a + 1..m {
                        for ja in 0..n {
                            for jb in 0..n {
                                d2.push(squared_distance(dataset.view(a, ja), dataset.view(b, jb)));
                            }
                        }
                    }
                }
            } else {
                let mut rng = rng::stream(dataset.seed(), Domain::Bandwidth, 0);
                while d2.len() < MEDIAN_PAIR_BUDGET {
                    let a = rng.gen_range(0..m);
                    let b = rng.gen_range(0..m);
                    if a == b {
                        continue;
                    }
                    let (ja, jb) = (rng.gen_range(0..n), rng.gen_range(0..n));
                    d2.push(squared_distance(dataset.view(a, ja), dataset.view(b, jb)));
                }
            }
            median(&mut d2)
        }
    };
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::numerical(format!("bandwidth rule {rule} produced t={t}")));
    }
    Ok(t)
}

/// Row sums of `W`.
pub fn degree_vector(w: &WeightMatrix) -> DVector<f64> {
    let v = w.values();
    DVector::from_iterator(v.nrows(), (0..v.nrows()).map(|i| v.row(i).iter().sum()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{generate_dataset, ManifoldSpec};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ds(m: usize, n: usize, dim: usize, pts: Vec<f64>) -> MultiViewDataset {
        MultiViewDataset::from_points(m, n, dim, pts, 0).unwrap()
    }

    fn gaussian_points(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Box-Muller, good enough for test fixtures.
        (0..len)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn identical_single_views_weigh_one() {
        let w = integrated_weights(&ds(2, 1, 2, vec![0.3, 0.4, 0.3, 0.4]), 1.0).unwrap();
        assert_eq!(w.values()[(0, 1)], 1.0);
    }

    #[test]
    fn coincident_views_reduce_to_single_kernel() {
        // Sample 0 at the origin twice, sample 1 at distance 2 twice.
        let w = integrated_weights(&ds(2, 2, 1, vec![0.0, 0.0, 2.0, 2.0]), 3.0).unwrap();
        assert!((w.values()[(0, 1)] - (-4.0f64 / 3.0).exp()).abs() < 1e-15);
        assert_eq!(w.values()[(0, 0)], 1.0);
    }

    #[test]
    fn matches_direct_double_sum() {
        let pts = gaussian_points(3 * 2 * 3, 42);
        let data = ds(3, 2, 3, pts.clone());
        let w = integrated_weights(&data, 1.0).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for ja in 0..2 {
                    for jb in 0..2 {
                        let pa = &pts[(a * 2 + ja) * 3..(a * 2 + ja) * 3 + 3];
                        let pb = &pts[(b * 2 + jb) * 3..(b * 2 + jb) * 3 + 3];
                        let d2: f64 = (0..3).map(|k| (pa[k] - pb[k]).powi(2)).sum();
                        s += (-d2).exp();
                    }
                }
                assert!((w.values()[(a, b)] - s / 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_bandwidth_and_data() {
        let data = ds(2, 1, 1, vec![0.0, 1.0]);
        assert!(matches!(integrated_weights(&data, 0.0), Err(Error::Config(_))));
        assert!(matches!(integrated_weights(&data, -1.0), Err(Error::Config(_))));
        let bad = ds(2, 1, 1, vec![0.0, f64::NAN]);
        assert!(matches!(integrated_weights(&bad, 1.0), Err(Error::Data(_))));
    }

    #[test]
    fn single_view_is_classical_gaussian_kernel() {
        let pts = gaussian_points(6 * 2, 3);
        let w = integrated_weights(&ds(6, 1, 2, pts.clone()), 0.7).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let d2 = (pts[2 * a] - pts[2 * b]).powi(2) + (pts[2 * a + 1] - pts[2 * b + 1]).powi(2);
                assert_eq!(w.values()[(a, b)], (-d2 / 0.7).exp());
            }
        }
    }

    #[test]
    fn diagonal_below_one_unless_views_coincide() {
        let data = generate_dataset(&ManifoldSpec::torus(), 20, 3, 1).unwrap();
        let w = integrated_weights(&data, 10.0).unwrap();
        for i in 0..20 {
            assert!(w.values()[(i, i)] < 1.0 && w.values()[(i, i)] > 0.0);
        }
    }

    #[test]
    fn scale_coupling_is_bit_exact() {
        let data = generate_dataset(&ManifoldSpec::torus(), 30, 2, 5).unwrap();
        let scaled: Vec<f64> = data.points().iter().map(|x| 4.0 * x).collect();
        let sdata = ds(30, 2, 3, scaled);
        let w1 = integrated_weights(&data, 7.0).unwrap();
        let w2 = integrated_weights(&sdata, 7.0 * 16.0).unwrap();
        assert_eq!(w1.values(), w2.values());
    }

    #[test]
    fn cross_weights_reproduce_rows() {
        let data = generate_dataset(&ManifoldSpec::torus(), 15, 3, 8).unwrap();
        let w = integrated_weights(&data, 20.0).unwrap();
        let row = cross_weights(&data, data.sample_views(4), 20.0).unwrap();
        for (i, r) in row.iter().enumerate() {
            assert_eq!(*r, w.values()[(4, i)]);
        }
        assert!(cross_weights(&data, &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn rate_rules() {
        let data = generate_dataset(&ManifoldSpec::torus(), 400, 1, 0).unwrap();
        let t = bandwidth_heuristic(&data, BandwidthRule::TheoryRate { d: 2 }).unwrap();
        assert!((t - 400f64.powf(-1.0 / 6.0)).abs() < 1e-15);
        assert!((t - 0.3684).abs() < 1e-4);
        let t = bandwidth_heuristic(&data, BandwidthRule::LogRate { d: 2 }).unwrap();
        assert!((t - (400f64.ln() / 400.0).powf(2.0 / 21.0)).abs() < 1e-15);
        assert!((t - 0.6703).abs() < 1e-4);
        assert!(matches!(
            bandwidth_heuristic(&data, BandwidthRule::TheoryRate { d: 0 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn median_of_three_collinear_points() {
        let data = ds(3, 1, 1, vec![0.0, 1.0, 3.0]);
        // squared distances 1, 9, 4
        assert_eq!(bandwidth_heuristic(&data, BandwidthRule::MedianHeuristic).unwrap(), 4.0);
    }

    #[test]
    fn median_subsample_is_seeded() {
        let data = generate_dataset(&ManifoldSpec::torus(), 300, 3, 2).unwrap();
        let a = bandwidth_heuristic(&data, BandwidthRule::MedianHeuristic).unwrap();
        let b = bandwidth_heuristic(&data, BandwidthRule::MedianHeuristic).unwrap();
        assert_eq!(a, b);
        assert!(a > 10.0 && a < 1000.0);
    }

    #[test]
    fn bandwidth_rule_parsing() {
        assert_eq!("median".parse::<BandwidthRule>().unwrap(), BandwidthRule::MedianHeuristic);
        assert_eq!("theory:2".parse::<BandwidthRule>().unwrap(), BandwidthRule::TheoryRate { d: 2 });
        assert_eq!("log:1".parse::<BandwidthRule>().unwrap(), BandwidthRule::LogRate { d: 1 });
        assert_eq!("fixed:2.5".parse::<BandwidthRule>().unwrap(), BandwidthRule::Fixed(2.5));
        assert!("fixed:-1".parse::<BandwidthRule>().is_err());
        assert!("bogus".parse::<BandwidthRule>().is_err());
    }

    #[test]
    fn degrees() {
        let ones = WeightMatrix::from_matrix(DMatrix::from_element(3, 3, 1.0), 1.0, 1).unwrap();
        assert_eq!(degree_vector(&ones).as_slice(), &[3.0, 3.0, 3.0]);
        let eye = WeightMatrix::from_matrix(DMatrix::identity(3, 3), 1.0, 1).unwrap();
        assert_eq!(degree_vector(&eye).as_slice(), &[1.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = DMatrix::<f64>::zeros(4, 4);
        for i in 0..4 {
            for j in i..4 {
                let v = rng.gen::<f64>();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let w = WeightMatrix::from_matrix(a.clone(), 1.0, 1).unwrap();
        let d = degree_vector(&w);
        for i in 0..4 {
            let oracle = a[(i, 0)] + a[(i, 1)] + a[(i, 2)] + a[(i, 3)];
            assert!((d[i] - oracle).abs() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn symmetric_and_monotone_in_t(seed in 0u64..1000, t in 0.1f64..10.0) {
            let data = ds(5, 2, 2, gaussian_points(20, seed));
            let w = integrated_weights(&data, t).unwrap();
            let wider = integrated_weights(&data, 1.5 * t).unwrap();
            for a in 0..5 {
                for b in 0..5 {
                    prop_assert_eq!(w.values()[(a, b)], w.values()[(b, a)]);
                    prop_assert!(w.values()[(a, b)] > 0.0 && w.values()[(a, b)] <= 1.0);
                    if a != b {
                        prop_assert!(wider.values()[(a, b)] >= w.values()[(a, b)]);
                    }
                }
            }
        }

        #[test]
        fn sample_permutation_is_equivariant(seed in 0u64..1000, shift in 1usize..5) {
            let pts = gaussian_points(5 * 2 * 2, seed);
            let data = ds(5, 2, 2, pts);
            let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
            let permuted = data.select(&perm).unwrap();
            let w = integrated_weights(&data, 1.3).unwrap();
            let wp = integrated_weights(&permuted, 1.3).unwrap();
            for a in 0..5 {
                for b in 0..5 {
                    prop_assert_eq!(wp.values()[(a, b)], w.values()[(perm[a], perm[b])]);
                }
            }
        }

        #[test]
        fn view_order_does_not_matter(seed in 0u64..1000) {
            let pts = gaussian_points(4 * 3 * 2, seed);
            let mut swapped = pts.clone();
            // Reverse the views of every sample.
            for i in 0..4 {
                for j in 0..3 {
                    let src = (i * 3 + j) * 2;
                    let dst = (i * 3 + (2 - j)) * 2;
                    swapped[dst..dst + 2].copy_from_slice(&pts[src..src + 2]);
                }
            }
            let w = integrated_weights(&ds(4, 3, 2, pts), 0.9).unwrap();
            let ws = integrated_weights(&ds(4, 3, 2, swapped), 0.9).unwrap();
            prop_assert_eq!(w.values(), ws.values());
        }
    }
}
