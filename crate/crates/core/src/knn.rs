//! k-nearest-neighbor classification over interchangeable representations.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::kernel::WeightMatrix;
use crate::manifold::{LabeledDataset, MultiViewDataset};
use crate::spectral::{nystrom_extend, Embedding};

/// How `k` is chosen for a training set of size `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KRule {
    Fixed(usize),
    /// `k = round(s^(2a / (2a + dim)))` with Holder exponent `a`.
    RateRule { holder_alpha: f64, dim: usize },
}

impl KRule {
    /// Resolves `k` for `s` training points, clamped to `[1, s]`.
    pub fn resolve(&self, s: usize) -> Result<usize> {
        if s == 0 {
            return Err(Error::config("kNN needs a non-empty training set"));
        }
        let k = match *self {
            KRule::Fixed(k) => k,
            KRule::RateRule { holder_alpha, dim } => {
                if holder_alpha.is_nan() || holder_alpha <= 0.0 || dim == 0 {
                    return Err(Error::config(format!(
                        "rate rule needs holder_alpha > 0 and dim >= 1 (got {holder_alpha}, {dim})"
                    )));
                }
                let a2 = 2.0 * holder_alpha;
                (s as f64).powf(a2 / (a2 + dim as f64)).round() as usize
            }
        };
        Ok(k.clamp(1, s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k_rule: KRule,
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` training rows nearest to `query`; distance ties go to
/// the lower training index.
pub fn nearest_indices(train: &[Vec<f64>], query: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, x)| (squared_distance(x, query), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    order.into_iter().map(|(_, i)| i).collect()
}

fn check_training(train_features: &[Vec<f64>], labels_len: usize, k: usize) -> Result<()> {
    if train_features.is_empty() {
        return Err(Error::config("kNN needs a non-empty training set"));
    }
    if train_features.len() != labels_len {
        return Err(Error::Data(format!(
            "{} training features but {labels_len} labels",
            train_features.len()
        )));
    }
    if k < 1 || k > train_features.len() {
        return Err(Error::config(format!(
            "k={k} outside [1, {}]",
            train_features.len()
        )));
    }
    Ok(())
}

/// Binary majority vote: `+1` iff strictly more than `k/2` of the `k`
/// nearest labels are `+1`. An even split therefore yields `-1`.
pub fn knn_classify(train_features: &[Vec<f64>], train_labels: &[i8], query: &[f64], k: usize) -> Result<i8> {
    check_training(train_features, train_labels.len(), k)?;
    let positives = nearest_indices(train_features, query, k)
        .into_iter()
        .filter(|&i| train_labels[i] == 1)
        .count();
    Ok(if 2 * positives > k { 1 } else { -1 })
}

/// Multi-class plurality vote; ties go to the smallest label.
pub fn knn_classify_multiclass(
    train_features: &[Vec<f64>],
    train_labels: &[u8],
    query: &[f64],
    k: usize,
) -> Result<u8> {
    check_training(train_features, train_labels.len(), k)?;
    let mut votes = [0usize; 256];
    for i in nearest_indices(train_features, query, k) {
        votes[train_labels[i] as usize] += 1;
    }
    let mut best = 0usize;
    for (label, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = label;
        }
    }
    Ok(best as u8)
}

/// Fraction of test points misclassified by binary kNN on precomputed
/// features.
pub fn error_rate(
    train_features: &[Vec<f64>],
    train_labels: &[i8],
    test_features: &[Vec<f64>],
    test_labels: &[i8],
    k: usize,
) -> Result<f64> {
    if test_features.is_empty() || test_features.len() != test_labels.len() {
        return Err(Error::Data("test set must be non-empty with one label per feature".into()));
    }
    let mut wrong = 0usize;
    for (x, &y) in test_features.iter().zip(test_labels) {
        if knn_classify(train_features, train_labels, x, k)? != y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / test_features.len() as f64)
}

/// Multi-class counterpart of [`error_rate`].
pub fn error_rate_multiclass(
    train_features: &[Vec<f64>],
    train_labels: &[u8],
    test_features: &[Vec<f64>],
    test_labels: &[u8],
    k: usize,
) -> Result<f64> {
    if test_features.is_empty() || test_features.len() != test_labels.len() {
        return Err(Error::Data("test set must be non-empty with one label per feature".into()));
    }
    let mut wrong = 0usize;
    for (x, &y) in test_features.iter().zip(test_labels) {
        if knn_classify_multiclass(train_features, train_labels, x, k)? != y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / test_features.len() as f64)
}

/// Everything needed to place a new point into a spectral embedding.
#[derive(Debug, Clone)]
pub struct SpectralContext {
    pub embedding: Embedding,
    pub weights: WeightMatrix,
    pub train: MultiViewDataset,
}

/// A data representation `Theta` that kNN operates on.
#[derive(Debug, Clone)]
pub enum RepresentationMap {
    RawX { dim: usize },
    Spectral(Box<SpectralContext>),
    Encoder(EncoderParams),
}

impl RepresentationMap {
    pub fn output_dim(&self) -> usize {
        match self {
            RepresentationMap::RawX { dim } => *dim,
            RepresentationMap::Spectral(ctx) => ctx.embedding.n_components(),
            RepresentationMap::Encoder(p) => p.output_dim(),
        }
    }

    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = match self {
            RepresentationMap::RawX { dim } => {
                if x.len() != *dim {
                    return Err(Error::Data(format!("expected a {dim}-vector, got {}", x.len())));
                }
                x.to_vec()
            }
            RepresentationMap::Spectral(ctx) => nystrom_extend(&ctx.embedding, &ctx.weights, &ctx.train, x)?,
            RepresentationMap::Encoder(p) => p.encode(x)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("representation produced a non-finite coordinate"));
        }
        Ok(out)
    }

    pub fn map_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.map(x)).collect()
    }
}

/// Maps train and test features through `rep` and measures the kNN test
/// error with `k` resolved from the training size.
pub fn misclassification_error(
    rep: &RepresentationMap,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &KnnConfig,
) -> Result<f64> {
    let k = cfg.k_rule.resolve(train.len())?;
    let train_x = rep.map_all(&train.features)?;
    let test_x = rep.map_all(&test.features)?;
    error_rate(&train_x, &train.labels, &test_x, &test.labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn exact_match_with_k1() {
        let train = line(&[0.0, 1.0, 2.0]);
        assert_eq!(knn_classify(&train, &[1, -1, 1], &[1.0], 1).unwrap(), -1);
        assert_eq!(knn_classify(&train, &[1, -1, 1], &[2.0], 1).unwrap(), 1);
    }

    #[test]
    fn majority_and_even_split() {
        let train = line(&[0.0, 0.1, 0.2, 5.0]);
        assert_eq!(knn_classify(&train, &[1, 1, -1, -1], &[0.0], 3).unwrap(), 1);
        assert_eq!(knn_classify(&train, &[1, -1, 1, 1], &[0.0], 2).unwrap(), -1);
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let train = line(&[-1.0, 1.0]);
        assert_eq!(nearest_indices(&train, &[0.0], 1), vec![0]);
        assert_eq!(knn_classify(&train, &[1, -1], &[0.0], 1).unwrap(), 1);
        assert_eq!(knn_classify(&train, &[-1, 1], &[0.0], 1).unwrap(), -1);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(knn_classify(&[], &[], &[0.0], 1), Err(Error::Config(_))));
        assert!(matches!(knn_classify(&line(&[0.0]), &[1], &[0.0], 2), Err(Error::Config(_))));
    }

    #[test]
    fn multiclass_plurality() {
        let train = line(&[0.0, 0.1, 0.2, 0.3, 9.0]);
        assert_eq!(knn_classify_multiclass(&train, &[3, 7, 7, 3, 1], &[0.0], 3).unwrap(), 7);
        // 2-2 tie between 3 and 7 goes to 3.
        assert_eq!(knn_classify_multiclass(&train, &[7, 3, 7, 3, 1], &[0.0], 4).unwrap(), 3);
    }

    #[test]
    fn k_rules() {
        assert_eq!(KRule::Fixed(5).resolve(3).unwrap(), 3);
        assert_eq!(KRule::Fixed(0).resolve(3).unwrap(), 1);
        let spectral = KRule::RateRule { holder_alpha: 1.0, dim: 1 };
        assert_eq!(spectral.resolve(300).unwrap(), 45);
        let raw = KRule::RateRule { holder_alpha: 1.0, dim: 2 };
        assert_eq!(raw.resolve(300).unwrap(), 17);
        assert!(KRule::RateRule { holder_alpha: 0.0, dim: 1 }.resolve(10).is_err());
    }

    #[test]
    fn training_set_as_test_set_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let y: Vec<i8> = x.iter().map(|p| if p[0] > 0.5 { 1 } else { -1 }).collect();
        let ds = LabeledDataset::new(x, y, "threshold").unwrap();
        let cfg = KnnConfig { k_rule: KRule::Fixed(1) };
        let err = misclassification_error(&RepresentationMap::RawX { dim: 2 }, &ds, &ds, &cfg).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn independent_labels_give_marginal_mismatch() {
        // With P(Y=1)=p independent of X, any prediction rule errs with
        // probability p(1-q) + (1-p)q where q is the rate of +1 predictions;
        // k=1 predicts +1 at rate p, so the error is 2p(1-p).
        let p = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sample = |s: usize| {
            let x: Vec<Vec<f64>> = (0..s).map(|_| vec![rng.gen(), rng.gen()]).collect();
            let y: Vec<i8> = (0..s).map(|_| if rng.gen::<f64>() < p { 1 } else { -1 }).collect();
            (x, y)
        };
        let (tx, ty) = sample(2000);
        let (qx, qy) = sample(4000);
        let err = error_rate(&tx, &ty, &qx, &qy, 1).unwrap();
        let expected = 2.0 * p * (1.0 - p);
        let sigma = (expected * (1.0 - expected) / 4000.0).sqrt();
        assert!((err - expected).abs() < 4.0 * sigma + 0.02, "err {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn positive_scaling_preserves_predictions(seed in 0u64..10_000, scale in 0.01f64..100.0, k in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen(), rng.gen(), rng.gen()]).collect();
            let y: Vec<i8> = (0..20).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            let q: Vec<f64> = vec![rng.gen(), rng.gen(), rng.gen()];
            let xs: Vec<Vec<f64>> = x.iter().map(|p| p.iter().map(|v| v * scale).collect()).collect();
            let qs: Vec<f64> = q.iter().map(|v| v * scale).collect();
            prop_assert_eq!(knn_classify(&x, &y, &q, k).unwrap(), knn_classify(&xs, &y, &qs, k).unwrap());
        }

        #[test]
        fn training_permutation_preserves_predictions(seed in 0u64..10_000, k in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen(), rng.gen()]).collect();
            let y: Vec<i8> = (0..20).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            let q: Vec<f64> = vec![rng.gen(), rng.gen()];
            let perm: Vec<usize> = (0..20).rev().collect();
            let xp: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
            let yp: Vec<i8> = perm.iter().map(|&i| y[i]).collect();
            prop_assert_eq!(knn_classify(&x, &y, &q, k).unwrap(), knn_classify(&xp, &yp, &q, k).unwrap());
        }
    }
}
