//! Synthetic product manifolds and multi-view sampling.
//!
//! Every manifold here is parameterized by a signal coordinate `phi` and a
//! nuisance coordinate `psi`. A sample draws one `phi` and then `n`
//! independent `psi` values; its views are the embedded points
//! `T(phi, psi_j)`. All views of one sample therefore lie on the same fiber.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Closed-form product manifolds used by the simulations.
///
/// `CliffordTorus` is the flat torus `S^1 x S^1` in R^4; unlike the ring
/// torus in R^3 its nuisance circle has the same length for every `phi`,
/// which makes its spectrum known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ManifoldSpec {
    Torus { major: f64, minor: f64 },
    SwissRoll1 { phi: (f64, f64), psi: (f64, f64) },
    SwissRoll2 { phi: (f64, f64), psi: (f64, f64) },
    CliffordTorus { r_s: f64, r_v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldKind {
    Torus,
    SwissRoll1,
    SwissRoll2,
    CliffordTorus,
}

impl ManifoldKind {
    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Torus => "torus",
            ManifoldKind::SwissRoll1 => "swiss_roll_1",
            ManifoldKind::SwissRoll2 => "swiss_roll_2",
            ManifoldKind::CliffordTorus => "clifford_torus",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ManifoldKind::Torus => 1,
            ManifoldKind::SwissRoll1 => 2,
            ManifoldKind::SwissRoll2 => 3,
            ManifoldKind::CliffordTorus => 4,
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "torus" => Ok(ManifoldKind::Torus),
            "swiss_roll_1" | "swissroll1" | "swiss_roll1" => Ok(ManifoldKind::SwissRoll1),
            "swiss_roll_2" | "swissroll2" | "swiss_roll2" => Ok(ManifoldKind::SwissRoll2),
            "clifford_torus" | "clifford" | "cliffordtorus" => Ok(ManifoldKind::CliffordTorus),
            other => Err(Error::config(format!("unknown manifold `{other}`"))),
        }
    }
}

const TWO_PI: f64 = 2.0 * PI;

impl ManifoldSpec {
    /// Ring torus with major radius 10 and minor radius 5.
    pub fn torus() -> Self {
        ManifoldSpec::Torus {
            major: 10.0,
            minor: 5.0,
        }
    }

    pub fn swiss_roll_1() -> Self {
        ManifoldSpec::SwissRoll1 {
            phi: (1.5 * PI, 4.5 * PI),
            psi: (0.0, 10.0),
        }
    }

    pub fn swiss_roll_2() -> Self {
        ManifoldSpec::SwissRoll2 {
            phi: (0.0, 10.0),
            psi: (1.5 * PI, 4.5 * PI),
        }
    }

    pub fn clifford(r_s: f64, r_v: f64) -> Self {
        ManifoldSpec::CliffordTorus { r_s, r_v }
    }

    /// Default-parameter spec for a kind (Clifford radii default to 1).
    pub fn default_for(kind: ManifoldKind) -> Self {
        match kind {
            ManifoldKind::Torus => Self::torus(),
            ManifoldKind::SwissRoll1 => Self::swiss_roll_1(),
            ManifoldKind::SwissRoll2 => Self::swiss_roll_2(),
            ManifoldKind::CliffordTorus => Self::clifford(1.0, 1.0),
        }
    }

    pub fn kind(&self) -> ManifoldKind {
        match self {
            ManifoldSpec::Torus { .. } => ManifoldKind::Torus,
            ManifoldSpec::SwissRoll1 { .. } => ManifoldKind::SwissRoll1,
            ManifoldSpec::SwissRoll2 { .. } => ManifoldKind::SwissRoll2,
            ManifoldSpec::CliffordTorus { .. } => ManifoldKind::CliffordTorus,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    /// Four shape parameters in a fixed order, used by the binary format.
    pub fn params(&self) -> [f64; 4] {
        match *self {
            ManifoldSpec::Torus { major, minor } => [major, minor, 0.0, 0.0],
            ManifoldSpec::SwissRoll1 { phi, psi } | ManifoldSpec::SwissRoll2 { phi, psi } => {
                [phi.0, phi.1, psi.0, psi.1]
            }
            ManifoldSpec::CliffordTorus { r_s, r_v } => [r_s, r_v, 0.0, 0.0],
        }
    }

    pub fn from_params(kind: ManifoldKind, p: [f64; 4]) -> Result<Self> {
        let spec = match kind {
            ManifoldKind::Torus => ManifoldSpec::Torus {
                major: p[0],
                minor: p[1],
            },
            ManifoldKind::SwissRoll1 => ManifoldSpec::SwissRoll1 {
                phi: (p[0], p[1]),
                psi: (p[2], p[3]),
            },
            ManifoldKind::SwissRoll2 => ManifoldSpec::SwissRoll2 {
                phi: (p[0], p[1]),
                psi: (p[2], p[3]),
            },
            ManifoldKind::CliffordTorus => ManifoldSpec::CliffordTorus { r_s: p[0], r_v: p[1] },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Sampling range of the signal coordinate, half-open `[lo, hi)`.
    pub fn phi_range(&self) -> (f64, f64) {
        match *self {
            ManifoldSpec::Torus { .. } | ManifoldSpec::CliffordTorus { .. } => (0.0, TWO_PI),
            ManifoldSpec::SwissRoll1 { phi, .. } | ManifoldSpec::SwissRoll2 { phi, .. } => phi,
        }
    }

    /// Sampling range of the nuisance coordinate, half-open `[lo, hi)`.
    pub fn psi_range(&self) -> (f64, f64) {
        match *self {
            ManifoldSpec::Torus { .. } | ManifoldSpec::CliffordTorus { .. } => (0.0, TWO_PI),
            ManifoldSpec::SwissRoll1 { psi, .. } | ManifoldSpec::SwissRoll2 { psi, .. } => psi,
        }
    }

    /// Dimension of the signal factor `N_s`.
    pub fn signal_dim(&self) -> usize {
        1
    }

    /// Dimension of the nuisance factor `N_v`.
    pub fn nuisance_dim(&self) -> usize {
        1
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.signal_dim() + self.nuisance_dim()
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldSpec::CliffordTorus { .. } => 4,
            _ => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{} radius `{name}` must be positive, got {v}", self.name())))
            }
        };
        let range = |name: &str, r: (f64, f64)| {
            if r.0.is_finite() && r.1.is_finite() && r.0 < r.1 {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{} range `{name}` must be non-empty, got ({}, {})",
                    self.name(),
                    r.0,
                    r.1
                )))
            }
        };
        match *self {
            ManifoldSpec::Torus { major, minor } => {
                positive("major", major)?;
                positive("minor", minor)
            }
            ManifoldSpec::SwissRoll1 { phi, psi } | ManifoldSpec::SwissRoll2 { phi, psi } => {
                range("phi", phi)?;
                range("psi", psi)
            }
            ManifoldSpec::CliffordTorus { r_s, r_v } => {
                positive("r_s", r_s)?;
                positive("r_v", r_v)
            }
        }
    }
}

/// Draws `phi_i` and `psi_{i,j}` uniformly over the manifold's latent ranges.
///
/// Sample `i` owns its own stream, so latents do not depend on `m` or on the
/// order in which samples are generated. Returns `(phi, psi)` with `psi`
/// stored row-major as `m x n`.
pub fn sample_latents(spec: &ManifoldSpec, m: usize, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if m < 2 {
        return Err(Error::config(format!("need at least 2 samples, got m={m}")));
    }
    if n < 1 {
        return Err(Error::config("need at least 1 view per sample"));
    }
    let (plo, phi_hi) = spec.phi_range();
    let (qlo, qhi) = spec.psi_range();
    let mut phi = Vec::with_capacity(m);
    let mut psi = Vec::with_capacity(m * n);
    for i in 0..m {
        let mut rng = rng::stream(seed, Domain::Latent, i as u64);
        phi.push(rng.gen_range(plo..phi_hi));
        for _ in 0..n {
            psi.push(rng.gen_range(qlo..qhi));
        }
    }
    Ok((phi, psi))
}

fn in_range(v: f64, r: (f64, f64)) -> bool {
    v.is_finite() && v >= r.0 && v <= r.1
}

/// Evaluates the closed-form embedding `T(phi, psi)` into `out`.
pub fn embed_point_into(spec: &ManifoldSpec, phi: f64, psi: f64, out: &mut [f64]) -> Result<()> {
    if !in_range(phi, spec.phi_range()) {
        return Err(Error::domain(format!(
            "phi={phi} outside {:?} for {}",
            spec.phi_range(),
            spec.name()
        )));
    }
    if !in_range(psi, spec.psi_range()) {
        return Err(Error::domain(format!(
            "psi={psi} outside {:?} for {}",
            spec.psi_range(),
            spec.name()
        )));
    }
    debug_assert_eq!(out.len(), spec.ambient_dim());
    match *spec {
        ManifoldSpec::Torus { major, minor } => {
            let ring = major + minor * phi.cos();
            out[0] = ring * psi.cos();
            out[1] = ring * psi.sin();
            out[2] = minor * phi.sin();
        }
        ManifoldSpec::SwissRoll1 { .. } => {
            out[0] = phi * phi.cos();
            out[1] = phi * phi.sin();
            out[2] = psi;
        }
        ManifoldSpec::SwissRoll2 { .. } => {
            out[0] = psi * psi.cos();
            out[1] = psi * psi.sin();
            out[2] = phi;
        }
        ManifoldSpec::CliffordTorus { r_s, r_v } => {
            out[0] = r_s * phi.cos();
            out[1] = r_s * phi.sin();
            out[2] = r_v * psi.cos();
            out[3] = r_v * psi.sin();
        }
    }
    Ok(())
}

pub fn embed_point(spec: &ManifoldSpec, phi: f64, psi: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.ambient_dim()];
    embed_point_into(spec, phi, psi, &mut out)?;
    Ok(out)
}

/// `m` samples of `n` views each, stored row-major as `m x n x dim`.
///
/// Latents are kept for synthetic data so tests can check fiber structure;
/// image datasets carry neither latents nor a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    m: usize,
    n: usize,
    dim: usize,
    points: Vec<f64>,
    latent_phi: Option<Vec<f64>>,
    latent_psi: Option<Vec<f64>>,
    spec: Option<ManifoldSpec>,
    seed: u64,
}

impl MultiViewDataset {
    /// Wraps raw points (e.g. augmented images). No latents, no spec.
    pub fn from_points(m: usize, n: usize, dim: usize, points: Vec<f64>, seed: u64) -> Result<Self> {
        Self::from_parts(m, n, dim, points, None, None, None, seed)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        m: usize,
        n: usize,
        dim: usize,
        points: Vec<f64>,
        latent_phi: Option<Vec<f64>>,
        latent_psi: Option<Vec<f64>>,
        spec: Option<ManifoldSpec>,
        seed: u64,
    ) -> Result<Self> {
        if m < 2 || n < 1 || dim < 1 {
            return Err(Error::config(format!(
                "dataset needs m >= 2, n >= 1, dim >= 1 (got m={m}, n={n}, dim={dim})"
            )));
        }
        if points.len() != m * n * dim {
            return Err(Error::Data(format!(
                "expected {} coordinates for {m}x{n}x{dim}, got {}",
                m * n * dim,
                points.len()
            )));
        }
        if latent_phi.as_ref().is_some_and(|p| p.len() != m) || latent_psi.as_ref().is_some_and(|p| p.len() != m * n) {
            return Err(Error::Data("latent arrays do not match dataset shape".into()));
        }
        if let Some(spec) = &spec {
            spec.validate()?;
            if spec.ambient_dim() != dim {
                return Err(Error::Data(format!(
                    "{} lives in R^{}, dataset has dim {dim}",
                    spec.name(),
                    spec.ambient_dim()
                )));
            }
        }
        Ok(MultiViewDataset {
            m,
            n,
            dim,
            points,
            latent_phi,
            latent_psi,
            spec,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Ambient dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> Option<&ManifoldSpec> {
        self.spec.as_ref()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn latent_phi(&self) -> Option<&[f64]> {
        self.latent_phi.as_deref()
    }

    pub fn latent_psi(&self) -> Option<&[f64]> {
        self.latent_psi.as_deref()
    }

    /// View `j` of sample `i`.
    pub fn view(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.n + j) * self.dim;
        &self.points[start..start + self.dim]
    }

    /// All `n` views of sample `i`, contiguous (`n * dim` values).
    pub fn sample_views(&self, i: usize) -> &[f64] {
        let start = i * self.n * self.dim;
        &self.points[start..start + self.n * self.dim]
    }

    /// Keeps only the listed samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut points = Vec::with_capacity(indices.len() * self.n * self.dim);
        for &i in indices {
            if i >= self.m {
                return Err(Error::config(format!("sample index {i} out of range (m={})", self.m)));
            }
            points.extend_from_slice(self.sample_views(i));
        }
        let phi = self.latent_phi.as_ref().map(|p| indices.iter().map(|&i| p[i]).collect());
        let psi = self.latent_psi.as_ref().map(|p| {
            indices
                .iter()
                .flat_map(|&i| p[i * self.n..(i + 1) * self.n].iter().copied())
                .collect()
        });
        Self::from_parts(indices.len(), self.n, self.dim, points, phi, psi, self.spec, self.seed)
    }
}

/// Samples latents and embeds every view.
pub fn generate_dataset(spec: &ManifoldSpec, m: usize, n: usize, seed: u64) -> Result<MultiViewDataset> {
    let (phi, psi) = sample_latents(spec, m, n, seed)?;
    let dim = spec.ambient_dim();
    let mut points = vec![0.0; m * n * dim];
    for i in 0..m {
        for j in 0..n {
            let at = (i * n + j) * dim;
            embed_point_into(spec, phi[i], psi[i * n + j], &mut points[at..at + dim])?;
        }
    }
    MultiViewDataset::from_parts(m, n, dim, points, Some(phi), Some(psi), Some(*spec), seed)
}

/// Regression function `P(Y = 1 | phi)`, constant on fibers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regression {
    Constant(f64),
    /// `|sin(delta * phi)|`
    Sine { delta: u32 },
}

impl Regression {
    pub fn eval(&self, phi: f64) -> f64 {
        match *self {
            Regression::Constant(p) => p,
            Regression::Sine { delta } => (delta as f64 * phi).sin().abs(),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Regression::Constant(p) => format!("constant({p})"),
            Regression::Sine { delta } => format!("abs_sin({delta}*phi)"),
        }
    }
}

pub fn sine_regression(delta: u32) -> Result<Regression> {
    if delta < 1 {
        return Err(Error::config("sine regression needs delta >= 1"));
    }
    Ok(Regression::Sine { delta })
}

/// Labeled representatives of samples for the downstream task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
    pub regression_tag: String,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<i8>, regression_tag: impl Into<String>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Data(format!(
                "labeled set needs s >= 1 features matching labels (got {} features, {} labels)",
                features.len(),
                labels.len()
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            regression_tag: regression_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.regression_tag.clone(),
        )
    }
}

/// Draws `Y_i = +1` with probability `regression(phi_i)`.
///
/// The feature of sample `i` is its first view; labels belong to samples,
/// not to views.
pub fn assign_labels(dataset: &MultiViewDataset, regression: &Regression, seed: u64) -> Result<LabeledDataset> {
    let phi = dataset
        .latent_phi()
        .ok_or_else(|| Error::Data("labels need latent phi; dataset has none".into()))?;
    let mut labels = Vec::with_capacity(phi.len());
    for (i, &p) in phi.iter().enumerate() {
        let prob = regression.eval(p);
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::domain(format!("regression {} gave {prob} at phi={p}", regression.tag())));
        }
        let u: f64 = rng::stream(seed, Domain::Label, i as u64).gen();
        labels.push(if u < prob { 1 } else { -1 });
    }
    let features = (0..dataset.m()).map(|i| dataset.view(i, 0).to_vec()).collect();
    LabeledDataset::new(features, labels, regression.tag())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn torus_latent_ranges() {
        let (phi, psi) = sample_latents(&ManifoldSpec::torus(), 400, 3, 7).unwrap();
        assert_eq!(phi.len(), 400);
        assert_eq!(psi.len(), 1200);
        assert!(phi.iter().chain(&psi).all(|&v| (0.0..TWO_PI).contains(&v)));
    }

    #[test]
    fn smallest_dataset_in_range() {
        for spec in [
            ManifoldSpec::torus(),
            ManifoldSpec::swiss_roll_1(),
            ManifoldSpec::swiss_roll_2(),
            ManifoldSpec::clifford(1.0, 2.0),
        ] {
            let (phi, psi) = sample_latents(&spec, 2, 1, 0).unwrap();
            assert_eq!((phi.len(), psi.len()), (2, 2));
            let (a, b) = spec.phi_range();
            assert!(phi.iter().all(|&v| v >= a && v < b));
            let (a, b) = spec.psi_range();
            assert!(psi.iter().all(|&v| v >= a && v < b));
        }
    }

    #[test]
    fn uniform_phi_has_centered_cosine() {
        let m = 10_000;
        let (phi, _) = sample_latents(&ManifoldSpec::torus(), m, 1, 1).unwrap();
        let mean = phi.iter().map(|p| p.cos()).sum::<f64>() / m as f64;
        let sigma = 1.0 / (2.0 * m as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean cos = {mean}");
    }

    #[test]
    fn rejects_degenerate_sizes_and_specs() {
        assert!(matches!(sample_latents(&ManifoldSpec::torus(), 1, 3, 0), Err(Error::Config(_))));
        assert!(matches!(sample_latents(&ManifoldSpec::torus(), 3, 0, 0), Err(Error::Config(_))));
        let bad = ManifoldSpec::Torus { major: -1.0, minor: 5.0 };
        assert!(matches!(sample_latents(&bad, 3, 1, 0), Err(Error::Config(_))));
        let empty = ManifoldSpec::SwissRoll1 {
            phi: (2.0, 2.0),
            psi: (0.0, 1.0),
        };
        assert!(matches!(empty.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn closed_form_embeddings() {
        let t = ManifoldSpec::torus();
        assert!(close(&embed_point(&t, 0.0, 0.0).unwrap(), &[15.0, 0.0, 0.0], 1e-12));
        assert!(close(&embed_point(&t, PI, PI / 2.0).unwrap(), &[0.0, 5.0, 0.0], 1e-12));
        let s1 = ManifoldSpec::swiss_roll_1();
        assert!(close(&embed_point(&s1, TWO_PI, 5.0).unwrap(), &[TWO_PI, 0.0, 5.0], 1e-12));
        let c = ManifoldSpec::clifford(2.0, 3.0);
        assert!(close(&embed_point(&c, 0.0, PI / 2.0).unwrap(), &[2.0, 0.0, 0.0, 3.0], 1e-12));
    }

    #[test]
    fn out_of_range_latent_is_domain_error() {
        assert!(matches!(
            embed_point(&ManifoldSpec::swiss_roll_1(), 1.0, 5.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(embed_point(&ManifoldSpec::torus(), 0.0, 7.0), Err(Error::Domain(_))));
        assert!(matches!(embed_point(&ManifoldSpec::torus(), f64::NAN, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn torus_dataset_shape_and_fibers() {
        let ds = generate_dataset(&ManifoldSpec::torus(), 400, 3, 11).unwrap();
        assert_eq!((ds.m(), ds.n(), ds.dim()), (400, 3, 3));
        assert_eq!(ds.points().len(), 400 * 3 * 3);
        for i in 0..ds.m() {
            let z = ds.view(i, 0)[2];
            for j in 1..ds.n() {
                assert_eq!(ds.view(i, j)[2], z);
            }
        }
    }

    #[test]
    fn clifford_points_lie_on_sphere() {
        let ds = generate_dataset(&ManifoldSpec::clifford(1.0, 1.0), 100, 2, 3).unwrap();
        for chunk in ds.points().chunks(4) {
            let norm = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn swiss_roll_2_height_is_phi() {
        let ds = generate_dataset(&ManifoldSpec::swiss_roll_2(), 300, 3, 5).unwrap();
        assert!(ds.points().chunks(3).all(|p| p[2] > 0.0 && p[2] < 10.0));
    }

    #[test]
    fn stored_latents_reembed_exactly() {
        let spec = ManifoldSpec::swiss_roll_1();
        let ds = generate_dataset(&spec, 50, 4, 9).unwrap();
        let phi = ds.latent_phi().unwrap();
        let psi = ds.latent_psi().unwrap();
        for i in 0..50 {
            for j in 0..4 {
                assert_eq!(embed_point(&spec, phi[i], psi[i * 4 + j]).unwrap(), ds.view(i, j));
            }
        }
    }

    #[test]
    fn degenerate_regressions() {
        let ds = generate_dataset(&ManifoldSpec::torus(), 200, 1, 2).unwrap();
        let ones = assign_labels(&ds, &Regression::Constant(1.0), 3).unwrap();
        assert!(ones.labels.iter().all(|&y| y == 1));
        let minus = assign_labels(&ds, &Regression::Constant(0.0), 3).unwrap();
        assert!(minus.labels.iter().all(|&y| y == -1));
        assert!(matches!(
            assign_labels(&ds, &Regression::Constant(1.5), 3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sine_label_marginal() {
        // E|sin phi| over uniform phi is 2/pi.
        let m = 10_000;
        let ds = generate_dataset(&ManifoldSpec::torus(), m, 1, 4).unwrap();
        let labeled = assign_labels(&ds, &sine_regression(1).unwrap(), 5).unwrap();
        let frac = labeled.labels.iter().filter(|&&y| y == 1).count() as f64 / m as f64;
        let p = 2.0 / PI;
        let sigma = (p * (1.0 - p) / m as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * sigma, "fraction {frac}");
    }

    #[test]
    fn labels_attach_to_first_view() {
        let ds = generate_dataset(&ManifoldSpec::torus(), 10, 3, 4).unwrap();
        let labeled = assign_labels(&ds, &sine_regression(2).unwrap(), 1).unwrap();
        for i in 0..10 {
            assert_eq!(labeled.features[i], ds.view(i, 0));
        }
    }

    #[test]
    fn sine_regression_values() {
        assert!((sine_regression(1).unwrap().eval(PI / 2.0) - 1.0).abs() < 1e-12);
        assert!(sine_regression(2).unwrap().eval(PI / 2.0).abs() < 1e-12);
        assert!((sine_regression(4).unwrap().eval(PI / 8.0) - 1.0).abs() < 1e-12);
        assert!(sine_regression(0).is_err());
    }

    #[test]
    fn select_keeps_views_and_latents() {
        let ds = generate_dataset(&ManifoldSpec::torus(), 10, 2, 4).unwrap();
        let sub = ds.select(&[3, 7]).unwrap();
        assert_eq!(sub.m(), 2);
        assert_eq!(sub.view(1, 1), ds.view(7, 1));
        assert_eq!(sub.latent_phi().unwrap(), &[ds.latent_phi().unwrap()[3], ds.latent_phi().unwrap()[7]]);
    }
}
