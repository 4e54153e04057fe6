//! Procedural RGB scenes used as pristine sources when no photo collection
//! is at hand: a colour gradient, smooth value noise, a sinusoidal grating
//! and a handful of flat shapes with soft edges.

use crate::raster::Raster;
use crate::rng::RngStream;

pub const REFERENCE_SEED: u64 = 0x5EED_0F_1A6E;
pub const REFERENCE_SIZE: usize = 64;

/// The fixed 64×64 image that distortion monotonicity is checked against.
pub fn reference_image() -> Raster {
    scene(REFERENCE_SEED, REFERENCE_SIZE, REFERENCE_SIZE)
}

pub fn scene(seed: u64, width: usize, height: usize) -> Raster {
    let mut rng = RngStream::new(seed, 0x5CE7E);
    let n = width * height;
    let mut data = vec![0.0f32; 3 * n];

    let c0: [f64; 3] = [rng.uniform(), rng.uniform(), rng.uniform()];
    let c1: [f64; 3] = [rng.uniform(), rng.uniform(), rng.uniform()];
    let angle = rng.uniform() * std::f64::consts::TAU;
    let (ga, gb) = (angle.cos(), angle.sin());

    let grid = 5;
    let lattice: Vec<f64> = (0..(grid + 1) * (grid + 1)).map(|_| rng.uniform() - 0.5).collect();
    let noise_amp = 0.15 + 0.2 * rng.uniform();

    let freq = 2.0 + 6.0 * rng.uniform();
    let theta = rng.uniform() * std::f64::consts::PI;
    let grating_amp = 0.05 + 0.15 * rng.uniform();
    let grating_tint: [f64; 3] = [rng.uniform(), rng.uniform(), rng.uniform()];

    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let t = (0.5 + 0.5 * ((u - 0.5) * ga + (v - 0.5) * gb) * 1.4).clamp(0.0, 1.0);
            let noise = value_noise(&lattice, grid, u, v) * noise_amp;
            let phase = (u * theta.cos() + v * theta.sin()) * freq * std::f64::consts::TAU;
            let grating = phase.sin() * grating_amp;
            for c in 0..3 {
                let base = c0[c] * (1.0 - t) + c1[c] * t;
                data[c * n + y * width + x] = (base + noise + grating * grating_tint[c]) as f32;
            }
        }
    }

    let shapes = 3 + rng.below(4) as usize;
    for _ in 0..shapes {
        let color: [f64; 3] = [rng.uniform(), rng.uniform(), rng.uniform()];
        let (cx, cy) = (rng.uniform() * width as f64, rng.uniform() * height as f64);
        let size = (0.08 + 0.22 * rng.uniform()) * width.min(height) as f64;
        let round = rng.bernoulli(0.5);
        let alpha = 0.6 + 0.4 * rng.uniform();
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let dist = if round { (dx * dx + dy * dy).sqrt() - size } else { dx.abs().max(dy.abs()) - size };
                let cover = (0.5 - dist).clamp(0.0, 1.0) * alpha;
                if cover > 0.0 {
                    for (c, col) in color.iter().enumerate() {
                        let px = &mut data[c * n + y * width + x];
                        *px = (*px as f64 * (1.0 - cover) + col * cover) as f32;
                    }
                }
            }
        }
    }
    Raster::from_clamped(width, height, 3, data)
}

fn value_noise(lattice: &[f64], grid: usize, u: f64, v: f64) -> f64 {
    let (gx, gy) = (u * grid as f64, v * grid as f64);
    let (ix, iy) = ((gx.floor() as usize).min(grid - 1), (gy.floor() as usize).min(grid - 1));
    let (fx, fy) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
    let at = |x: usize, y: usize| lattice[y * (grid + 1) + x];
    let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
    let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = scene(9, 40, 30);
        assert_eq!(a, scene(9, 40, 30));
        assert_ne!(a, scene(10, 40, 30));
        assert_eq!((a.width(), a.height(), a.channels()), (40, 30, 3));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn reference_has_texture() {
        let r = reference_image();
        let mean = r.data().iter().map(|v| *v as f64).sum::<f64>() / r.data().len() as f64;
        let var = r.data().iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / r.data().len() as f64;
        assert!(var.sqrt() > 0.05, "std {}", var.sqrt());
    }
}
