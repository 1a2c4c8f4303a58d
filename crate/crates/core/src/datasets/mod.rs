//! Ground-truth factor datasets and image ingestion.

mod cache;
mod dots;
mod natural;
mod pgm;
mod source;

pub use cache::{DatasetCache, CACHE_MAGIC, CACHE_VERSION};
pub use dots::ThreeDots;
pub use natural::{crop_natural, tile_2x2};
pub use pgm::{read_pgm, write_pgm, GrayImage};
pub use source::{Batch, FactorRenderer, FactorSchema, ImageSource};
