//! Crop-averaged inference: the image score is the plain mean of the
//! per-crop scores.

use super::{EnsembleError, EnsembleModel, Task, INPUT_CHANNELS};
use crate::net::{Mode, Tensor};
use crate::raster::{random_crop, Raster};
use crate::rng::RngStream;

pub const DEFAULT_CROPS: usize = 10;

/// Anything that maps a fixed-size crop to a scalar score.
pub trait CropScorer {
    fn input_size(&self) -> usize;
    fn score_crop(&self, crop: &Raster) -> Result<f64, EnsembleError>;
}

/// `(1/N) Σ qᵢ`, summed left to right in f64.
/// Mean of the crop scores, kept inside their range so that identical
/// scores average to exactly that score.
pub fn crop_average(scores: &[f64]) -> f64 {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (scores.iter().sum::<f64>() / scores.len() as f64).clamp(lo, hi)
}

pub fn predict_image<S: CropScorer + ?Sized>(
    scorer: &S,
    r: &Raster,
    n_crops: usize,
    rng: &mut RngStream,
) -> Result<f64, EnsembleError> {
    let size = scorer.input_size();
    if r.width() < size || r.height() < size {
        return Err(EnsembleError::TooSmall { width: r.width(), height: r.height(), size });
    }
    if n_crops == 0 {
        return Err(EnsembleError::NoCrops);
    }
    let scores = (0..n_crops)
        .map(|_| {
            let crop = random_crop(r, size, size, rng).expect("size checked");
            scorer.score_crop(&crop)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(crop_average(&scores))
}

/// Network input for a crop: `[3, H, W]`, centred on zero. Grey rasters are
/// replicated across channels.
pub fn to_input(r: &Raster) -> Tensor<f32> {
    let (w, h) = (r.width(), r.height());
    let data: Vec<f32> = if r.channels() == INPUT_CHANNELS {
        r.data().iter().map(|v| v - 0.5).collect()
    } else {
        r.data().iter().map(|v| v - 0.5).cycle().take(INPUT_CHANNELS * w * h).collect()
    };
    Tensor::new(vec![INPUT_CHANNELS, h, w], data)
}

impl CropScorer for EnsembleModel {
    fn input_size(&self) -> usize {
        self.config.input_size
    }

    fn score_crop(&self, crop: &Raster) -> Result<f64, EnsembleError> {
        if self.task != Task::Regressor {
            return Err(EnsembleError::WrongTask("regression"));
        }
        // Eval mode never draws from the stream.
        let (y, _) = self.net.forward(&to_input(crop), Mode::Eval, &mut RngStream::new(0, 0))?;
        let q = f64::from(y.data()[0]);
        if !q.is_finite() {
            return Err(EnsembleError::NonFinite("prediction".into()));
        }
        Ok(q)
    }
}
