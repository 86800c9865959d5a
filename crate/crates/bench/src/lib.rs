//! Fixtures shared by the benchmarks.

use pixsim_core::bnn::{BinaryTensor, FirstLayer, HardwareModel, Image, LayerSpec};
use pixsim_core::reference::reference_layer;
use pixsim_core::rng::stream;
use pixsim_core::Result;

/// Seeded random RGB frame.
pub fn frame(height: usize, width: usize) -> Image {
    Image::random(3, height, width, &mut stream(0xBE7C, 0))
}

/// Shipped reference layer with its shipped hardware model.
pub fn reference_setup() -> Result<(FirstLayer, HardwareModel)> {
    Ok((reference_layer(&LayerSpec::default())?, HardwareModel::builtin()?))
}

/// I.i.d. output map of the reference geometry at the given density.
pub fn output_map(density: f64) -> BinaryTensor {
    BinaryTensor::random((32, 112, 112), density, &mut stream(0xBE7C, 1))
}
