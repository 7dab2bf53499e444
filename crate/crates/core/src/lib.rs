//! Building blocks for melt-track cross-section analysis.
//!
//! The crate covers everything except the neural network itself:
//!
//! * [`raster`]: images, binary masks and their on-disk encodings
//! * [`imageops`]: blur, Sobel gradients, edge-stopping energy, flood fill,
//!   connected components and hole filling
//! * [`annotate`]: seed-driven morphological active contours and the
//!   brush-and-tolerance wand used to produce training masks
//! * [`augment`]: paired image/mask augmentation
//! * [`metrics`]: confusion counts, accuracy, F1 and IoU
//! * [`metrology`]: baseline, width/height/depth and wetting/wall angles
//! * [`dataset`]: JSON-lines manifests and a synthetic melt-pool generator

pub mod annotate;
pub mod augment;
pub mod dataset;
pub mod error;
pub mod imageops;
pub mod metrics;
pub mod metrology;
pub mod raster;

pub use error::{Error, Result};
pub use raster::{BinaryMask, Raster};
