use std::path::Path;

use crate::error::{shape_err, Result};
use crate::label::LabelMap;
use crate::metrics::{dice_per_class, DiceReport};
use crate::network::{forward, load_checkpoint, ParameterSet};
use crate::phantom::{read_dataset, Dataset, LabelSource, Split};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 16;

/// Per-pixel argmax over the class axis of `[N, K, H, W]` logits.
///
/// Softmax is monotone, so this matches the argmax of the probabilities. Ties
/// go to the lowest class index.
pub fn predict(logits: &Tensor) -> Result<Vec<LabelMap>> {
    let (n, k, h, w) = logits.dims4()?;
    if k == 0 || k > u8::MAX as usize + 1 {
        return shape_err(format!("cannot take argmax over {k} classes"));
    }
    let plane = h * w;
    let data = logits.data();
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        let base = s * k * plane;
        let mut map = LabelMap::filled(h, w, 0);
        let mut best = data[base..base + plane].to_vec();
        for c in 1..k {
            let channel = &data[base + c * plane..base + (c + 1) * plane];
            for ((b, &v), label) in best.iter_mut().zip(channel).zip(map.data_mut()) {
                if v > *b {
                    *b = v;
                    *label = c as u8;
                }
            }
        }
        out.push(map);
    }
    Ok(out)
}

pub(crate) fn check_compatible(params: &ParameterSet, dataset: &Dataset) -> Result<()> {
    let spec = params.spec();
    if spec.in_channels != 1 {
        return shape_err(format!("dataset images have 1 channel, network expects {}", spec.in_channels));
    }
    if spec.num_classes != dataset.classes {
        return shape_err(format!(
            "network predicts {} classes, dataset has {}",
            spec.num_classes, dataset.classes
        ));
    }
    spec.check_resolution(dataset.height, dataset.width)
}

/// Predictions for the given samples, computed in fixed-size batches.
pub(crate) fn predict_indices(params: &ParameterSet, dataset: &Dataset, indices: &[usize]) -> Result<Vec<LabelMap>> {
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let logits = forward(params, &dataset.batch_images(chunk)?)?;
        preds.extend(predict(&logits)?);
    }
    Ok(preds)
}

/// Dice of the predictions on `indices` against the clean labels.
pub(crate) fn evaluate_indices(params: &ParameterSet, dataset: &Dataset, indices: &[usize]) -> Result<DiceReport> {
    let preds = predict_indices(params, dataset, indices)?;
    dice_per_class(&preds, &dataset.batch_labels(LabelSource::Clean, indices), dataset.classes)
}

/// Scores `params` on one split against the clean labels.
pub fn evaluate(params: &ParameterSet, dataset: &Dataset, split: Split) -> Result<DiceReport> {
    check_compatible(params, dataset)?;
    evaluate_indices(params, dataset, &dataset.indices(split))
}

pub fn evaluate_checkpoint(
    checkpoint: impl AsRef<Path>,
    data_dir: impl AsRef<Path>,
    split: Split,
) -> Result<DiceReport> {
    let params = load_checkpoint(checkpoint)?;
    let dataset = read_dataset(data_dir)?;
    evaluate(&params, &dataset, split)
}
