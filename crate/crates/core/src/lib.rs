//! Road-graph inference from fleet sensor data.
//!
//! The pipeline rasterizes GNSS traces and semantic points into density
//! tiles, segments road centerlines, thins and vectorizes the merged mask,
//! and refines the resulting graph with map-matching driven gap pruning and
//! stacked-road disambiguation. Evaluation metrics (GEO, iTOPO, soft F1)
//! live in [`metrics`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod exec;
pub mod extract;
pub mod geom;
pub mod io;
pub mod mapmatch;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod refine;
pub mod render;
pub mod routing;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    EdgeId, FleetDataset, GnssTrace, LocalFrame, LocalPoint, NodeId, Provenance, RoadGraph, SemanticClass,
    SemanticPoint, TraceId,
};
