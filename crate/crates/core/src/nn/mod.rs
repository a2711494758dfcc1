//! Parameters, layers and the optimizer shared by both networks.

mod adam;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use layers::{lrelu, pixel_norm, Conv2d, Dense, ModConv, ModConvSpec, LRELU_SLOPE};
pub use params::{Bound, Group, ParamBuilder, ParamId, ParamStore, ToBits};
