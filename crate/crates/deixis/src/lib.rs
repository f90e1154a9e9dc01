//! File formats, experiment orchestration and CLI glue for the deixis
//! driver-referencing pipeline. The algorithms live in `deixis-core`; this
//! crate adds scene/dataset/weight persistence, parallel experiment runs
//! with CSV/JSON reporting, and the `deixis` binary.

pub mod cli;
pub mod datafile;
pub mod error;
pub mod report;
pub mod runner;
pub mod scenefile;
pub mod weightstore;
