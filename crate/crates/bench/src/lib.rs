//! Shared fixtures for the kernel benchmarks.

use leap_core::data::synth_blobs;
use leap_core::models::init_params;
use leap_core::{Batch, MlpSpec, RngStream};

/// MLP-3 parameters and one 128-example batch of 784-dimensional blobs.
pub fn mlp3_fixture() -> (MlpSpec, Vec<f64>, Batch) {
    let spec = MlpSpec::named("mlp-3").expect("mlp-3 is a known architecture");
    let theta = init_params(&spec, &mut RngStream::new(1, 0)).expect("valid spec").values;
    let data = synth_blobs(13, 10, 784, 4.0, 2).expect("valid blobs");
    let idx: Vec<usize> = (0..128).collect();
    let batch = data.subset(&idx, "bench").as_batch().expect("non-empty batch");
    (spec, theta, batch)
}
