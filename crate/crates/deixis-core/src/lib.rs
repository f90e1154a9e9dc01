//! Core algorithms for resolving in-vehicle deictic references.
//!
//! A driver points at something, a control element in the cockpit or a
//! landmark outside the windscreen, and says "what is that?". This crate
//! contains everything needed to turn tracked eye-gaze, head-pose and
//! finger-pointing streams into an answer, without touching the filesystem:
//!
//! - [`geometry`]: vector math, spherical angles, WGS84 geodetic/ECEF and
//!   vehicle coordinate frames.
//! - [`scene`]: catalogs of referenceable targets (cockpit areas and outside
//!   landmarks), ground-truth directions, angular extents and hit testing.
//! - [`event`]: the 36-frame referencing-event data model, windowing, gap
//!   interpolation, tensor conversion and subject-based dataset splits.
//! - [`sim`]: a seeded generator of synthetic referencing events with
//!   calibrated per-modality error statistics, hand choice and dropout.
//! - [`tensor`]: a dense f64 tensor type with reverse-mode differentiation
//!   covering exactly the operations the models need.
//! - [`model`]: the inside/outside case classifier and the per-use-case
//!   fusion regressor, training loop included.
//! - [`metrics`] and [`eval`]: angular metrics, leave-one-subject-out
//!   cross-validation, ablations and measurement analysis.
//!
//! The crate is `no_std` (with `alloc`) so the full pipeline can run inside
//! an ECU-style environment; file formats and the CLI live in the companion
//! `deixis` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod eval;
pub mod event;
pub mod geometry;
pub mod math;
pub mod metrics;
pub mod model;
pub mod scene;
pub mod sim;
pub mod tensor;

pub use event::{Dataset, Frame, Modality, ModalitySet, ReferencingEvent, UseCase};
pub use geometry::{AffineTransform, EulerAngles, GeodeticCoord, SphericalDir, Vec3};
pub use metrics::MetricsReport;
pub use scene::{AngularExtent, CarPose, Scene, TargetKind, TargetObject};
