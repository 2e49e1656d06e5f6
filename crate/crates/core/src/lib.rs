//! Curation and analysis toolkit for binary lesion-segmentation ground truths.
//!
//! The crate is organized around the stages of a dataset-quality pipeline:
//!
//! 1. [`mask`] and [`manifest`]: binary masks on disk, dataset manifests,
//!    mask-count statistics and seeded train/validation splits.
//! 2. [`conditioning`]: detail-removing transforms (morphological opening and
//!    opening followed by a rasterized convex hull).
//! 3. [`agreement`]: pixelwise Cohen's kappa between annotations, per-sample
//!    average pairwise scores, threshold selection and score distributions.
//! 4. [`metrics`]: Jaccard index, the soft-Jaccard + BCE training loss and
//!    best-of-annotations evaluation of prediction directories.
//! 5. [`anova`]: full factorial designs and balanced factorial ANOVA with
//!    F-test p-values and eta-squared effect sizes.
//!
//! Per-sample stages run through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.

pub mod agreement;
pub mod anova;
pub mod conditioning;
pub mod error;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod par;

pub use agreement::{AgreementRecord, ConfusionMatrix};
pub use conditioning::{ConditioningKind, StructuringElement};
pub use error::{Error, Result};
pub use manifest::{DatasetManifest, SampleRecord};
pub use mask::BinaryMask;
