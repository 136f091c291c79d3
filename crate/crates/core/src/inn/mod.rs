//! Invertible hiding network: wavelet-domain affine coupling blocks that
//! embed a location map into a cover image and reveal it again, plus the
//! posterior estimator that stands in for the stream lost in transmission.

mod checkpoint;
mod map;
mod model;
mod posterior;
mod subnet;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use map::{realize_location_map, LocationMap, MapPattern};
pub use model::{InnConfig, InnModel, Posterior, Revealed};
