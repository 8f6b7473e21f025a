//! Semi-weakly-supervised deformable registration at desk scale.
//!
//! Dense displacement field algebra, the WarpDDF/RegCut commutative
//! augmentations, mean-teacher training of a compact registrar, atlas
//! construction and population statistics on synthetic 3D phantoms.

pub mod affine;
pub mod atlas;
pub mod augment;
pub mod checks;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod train;
pub mod warp;

pub use affine::{affine_to_ddf, AffineMap};
pub use error::{Error, Result};
pub use grid::{AffineParams, Ddf, Dims, ImagePair, MaskMode, MaskSet, Volume};
pub use model::{ArchConfig, ModelParams, Registrar};
pub use phantom::{PhantomConfig, Subject};
pub use train::{TrainConfig, TrainMode};
pub use warp::{
    compose_ddf, identity_ddf, resample_ddf, resample_masks, resample_volume, trilinear_sample,
};
