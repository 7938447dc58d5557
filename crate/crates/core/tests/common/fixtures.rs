//! Tiny models behind the golden format files.

use std::path::{Path, PathBuf};

use lwdd_core::bundle::Provenance;
use lwdd_core::fixed::QFormat;
use lwdd_core::nn::{LayerSpec, ModelConfig, Shape, WeightSet};
use lwdd_core::quant::{quantize, worst_case_ranges, QuantizedModel};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn tiny_model() -> (ModelConfig, WeightSet) {
    let model = ModelConfig::new(
        Shape::Map {
            channels: 1,
            height: 4,
            width: 4,
        },
        vec![
            LayerSpec::conv(1, 2),
            LayerSpec::MaxPool2,
            LayerSpec::conv(2, 2),
            LayerSpec::GlobalMaxPool,
            LayerSpec::Dense { n_in: 2, n_out: 3 },
        ],
    )
    .unwrap();
    let ramp = |n: usize, k: i32| -> Vec<f64> { (0..n as i32).map(|i| ((i * k) % 17 - 8) as f64 / 16.0).collect() };
    let weights = WeightSet {
        layers: vec![ramp(18, 5), vec![], ramp(36, 7), vec![], ramp(6, 3)],
    };
    (model, weights)
}

pub fn tiny_quantized() -> QuantizedModel {
    let (model, w) = tiny_model();
    quantize(&model, &w, &worst_case_ranges(&model, &w).unwrap(), QFormat::new(6).unwrap()).unwrap()
}

pub fn prov() -> Provenance {
    Provenance {
        seed: 42,
        source: "golden".into(),
    }
}

/// Two 28x28 ramp images labelled 3 and 7.
pub fn tiny_images() -> (Vec<Vec<u8>>, Vec<u8>) {
    let pattern = |k: usize| (0..784).map(|i| ((i * k) % 256) as u8).collect::<Vec<u8>>();
    (vec![pattern(7), pattern(255)], vec![3, 7])
}
