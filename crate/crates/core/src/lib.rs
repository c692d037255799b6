//! Augmentation-invariant manifold learning.
//!
//! Samples come with several augmented views. Instead of building a graph
//! over individual views, the integrated kernel averages the Gaussian kernel
//! over every pair of views of two samples, so the resulting Laplacian
//! eigenmaps and diffusion maps vary only along the signal factor of the
//! data and not along the augmentation.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`manifold`] | product manifolds, multi-view sampling, labels |
//! | [`kernel`] | integrated weights, bandwidth rules, degrees |
//! | [`spectral`] | eigenmaps, diffusion maps, Nystrom extension |
//! | [`knn`] | kNN classifier and representation maps |
//! | [`experiment`] | seeded comparison harness and result tables |
//! | [`encoder`] | feed-forward encoder |
//! | [`objective`] | triplet objective, gradients, SGD training |
//! | [`image`] | IDX parsing and image augmentations |
//! | [`mnist`] | handwritten-digit comparison pipeline |
//! | [`io`] | on-disk formats |

pub mod encoder;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod kernel;
pub mod knn;
pub mod manifold;
pub mod mnist;
pub mod objective;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
