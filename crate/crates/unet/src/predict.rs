use meltpool_core::annotate::finalize_mask;
use meltpool_core::imageops::ScalarField;
use meltpool_core::raster::{resize_raster, BinaryMask, Raster};

use crate::error::{Result, UnetError};
use crate::model::UNet;
use crate::tensor::Tensor;
use crate::train::prepare_input;

/// Decision threshold on probabilities; ties go to the melt pool.
pub const THRESHOLD: f32 = 0.5;

/// Anything that maps a batch of `N x 1 x side x side` inputs to
/// probabilities of the same shape.
pub trait SegmentationModel {
    fn input_side(&self) -> usize;
    fn probabilities(&self, input: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl SegmentationModel for UNet<f32> {
    fn input_side(&self) -> usize {
        self.config().input_side
    }

    fn probabilities(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.predict(input)
    }
}

/// Returns the same probability everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel {
    pub side: usize,
    pub probability: f32,
}

impl SegmentationModel for ConstantModel {
    fn input_side(&self) -> usize {
        self.side
    }

    fn probabilities(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut out = Tensor::zeros(input.n, 1, input.h, input.w);
        out.data.fill(self.probability);
        Ok(out)
    }
}

/// Probability map at the model's input side.
pub fn predict_probabilities(model: &impl SegmentationModel, image: &Raster) -> Result<ScalarField> {
    let side = model.input_side();
    let x = Tensor::from_vec(1, 1, side, side, prepare_input(image, side)?);
    let p = model.probabilities(&x)?;
    if p.shape() != [1, 1, side, side] {
        return Err(UnetError::Shape(format!("model returned {:?}", p.shape())));
    }
    Ok(ScalarField::new(side, side, p.data)?)
}

/// Prediction at the image's own size: probabilities are resized bilinearly,
/// thresholded, then reduced to the largest component with holes filled. An
/// empty prediction stays empty.
pub fn predict_mask(model: &impl SegmentationModel, image: &Raster) -> Result<BinaryMask> {
    let probs = predict_probabilities(model, image)?;
    let side = model.input_side();
    let probs = resize_raster(&Raster::new(side, side, 1, probs.data().to_vec())?, image.width(), image.height())?;
    let mask = BinaryMask::new(
        image.width(),
        image.height(),
        probs.data().iter().map(|&p| p >= THRESHOLD).collect(),
    )?;
    if mask.is_empty() {
        log::warn!("prediction is empty");
        return Ok(mask);
    }
    Ok(finalize_mask(&mask)?)
}
