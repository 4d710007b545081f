//! Retinal identification from Harris corners and bifurcations.
//!
//! The pipeline runs an intensity map through [`harris::detect_corners`],
//! anchors the corners on the optic-disc centre from [`optic_disc`], encodes
//! them as three 360-slot pulse vectors ([`encoder::encode`]) and compares
//! templates with the modified circular correlation in [`matcher`].
//! [`store`] persists templates, [`eval`] runs rotation experiments.
//!
//! Data-parallel loops go through [`exec::Exec`]; with the default
//! `parallel` feature they run on rayon, otherwise sequentially. Both modes
//! produce identical results.

pub mod encoder;
pub mod eval;
pub mod exec;
pub mod harris;
pub mod imaging;
pub mod matcher;
pub mod optic_disc;
pub mod pipeline;
pub mod store;

pub use encoder::{ClassId, FeatureTemplate, PolarCorner};
pub use exec::Exec;
pub use harris::{Corner, HarrisParams};
pub use imaging::{IntensityMap, Point, RasterImage};
pub use matcher::{MatchScore, Weights};
pub use optic_disc::{OdCenter, OdParams, OdSource};
pub use store::{Gallery, GalleryRecord};
