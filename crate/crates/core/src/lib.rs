//! Laban movement features from 2D skeleton sequences, and quality-controlled
//! consensus labels from crowdsourced affect annotations.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`skeleton`]: keypoint data model, JSON-lines parsing and ingestion filters.
//! - [`lma`]: pose normalization and the body / effort / shape feature families.
//! - [`annotations`]: annotation records, Dawid-Skene and reliability-weighted aggregation.
//! - [`quality`]: sanity rules, relaxed gold standards, reliability scoring and participant policy.
//! - [`metrics`]: AP, ROC AUC, R², F1, ERS, Fleiss' kappa, retrieval metrics, χ² and ANOVA.
//! - [`forest`]: random forests with missing-value imputation and feature significance scans.
//! - [`simkit`]: planted-truth generators for annotator populations and skeleton motions.
//!
//! Data-parallel loops (per-instance extraction, per-tree training, per-category
//! aggregation) go through [`par`], which uses rayon when the `parallel` feature is
//! enabled and plain iterators otherwise. Results are identical either way.

pub mod annotations;
pub mod forest;
pub mod lma;
pub mod metrics;
pub mod par;
pub mod quality;
pub mod simkit;
pub mod skeleton;
pub mod special;

pub use annotations::{AggregatedLabel, AnnotationRecord, Category, ParticipantProfile};
pub use lma::{KinematicParams, LmaFeatureVector, LMA_DIM};
pub use skeleton::{JointId, LimbGraph, Pose, SkeletonSequence};
