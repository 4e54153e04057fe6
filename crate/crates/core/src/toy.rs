//! Synthetic datasets for desk-scale experiments.
//!
//! The pretraining corpus is a handful of distortion families at all five
//! levels over procedural scenes. The quality set applies the same families
//! to different scenes and scores each image as
//! `0.95 − 0.2·(level − 1) + N(0, σ²)`, clamped to [0, 1].

use std::sync::Arc;

use crate::distort::{apply, DistortionSpec};
use crate::ensemble::{ClassImage, LabeledImage};
use crate::rng::RngStream;
use crate::synth;

/// Gaussian blur, block DCT, white noise, contrast compression, pixelation.
pub const TOY_FAMILIES: [usize; 5] = [1, 9, 11, 20, 22];
pub const MOS_NOISE: f64 = 0.02;

pub fn toy_specs(families: &[usize]) -> Vec<DistortionSpec> {
    families
        .iter()
        .flat_map(|t| (1..=5).map(move |l| DistortionSpec::new(*t as i64, l).expect("valid toy family")))
        .collect()
}

/// `sources × families × 5` labelled images; class = dense index in spec order.
pub fn pretrain_corpus(sources: usize, size: usize, families: &[usize], seed: u64) -> Vec<ClassImage> {
    let specs = toy_specs(families);
    let mut out = Vec::with_capacity(sources * specs.len());
    for s in 0..sources {
        let scene = synth::scene(RngStream::derive_seed(seed, &[0x50C, s as u64]), size, size);
        for (class, spec) in specs.iter().enumerate() {
            let mut rng = RngStream::new(RngStream::derive_seed(seed, &[s as u64, spec.class_index() as u64]), 0);
            let img = apply(&scene, *spec, &mut rng).expect("toy scenes are large enough");
            out.push(ClassImage { id: format!("pre{s}_{}", spec.label()), raster: Arc::new(img), class });
        }
    }
    out
}

pub fn level_mos(level: usize) -> f64 {
    0.95 - 0.2 * (level as f64 - 1.0)
}

/// `sources × families × 5` images scored by distortion level plus noise.
pub fn quality_set(sources: usize, size: usize, families: &[usize], seed: u64) -> Vec<LabeledImage> {
    let specs = toy_specs(families);
    let mut noise = RngStream::new(seed, 0x3055);
    let mut out = Vec::with_capacity(sources * specs.len());
    for s in 0..sources {
        let scene = synth::scene(RngStream::derive_seed(seed, &[0x9A1, s as u64]), size, size);
        for spec in &specs {
            let mut rng = RngStream::new(RngStream::derive_seed(seed, &[0x9A1, s as u64, spec.class_index() as u64]), 0);
            let img = apply(&scene, *spec, &mut rng).expect("toy scenes are large enough");
            let target = (level_mos(spec.level()) + MOS_NOISE * noise.normal()).clamp(0.0, 1.0);
            out.push(LabeledImage { id: format!("q{s}_{}", spec.label()), raster: Arc::new(img), target });
        }
    }
    out
}
