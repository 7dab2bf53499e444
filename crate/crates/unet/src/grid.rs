use serde::{Deserialize, Serialize};

use crate::error::{Result, UnetError};
use crate::model::{UNet, UNetConfig};
use crate::train::{train, Dataset, TrainConfig};

pub const GRID_BATCH_SIZES: [usize; 3] = [8, 16, 32];
pub const GRID_LEARNING_RATES: [f64; 3] = [1e-5, 1e-4, 1e-3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub unet: UNetConfig,
    /// Per-cell initialization gains, overriding `unet.init_gain`.
    #[serde(default)]
    pub init_gains: Vec<CellGain>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGain {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_gain: f64,
}

impl GridSpec {
    pub fn new(unet: UNetConfig, epochs: usize, seed: u64) -> Self {
        Self {
            batch_sizes: GRID_BATCH_SIZES.to_vec(),
            learning_rates: GRID_LEARNING_RATES.to_vec(),
            epochs,
            seed,
            unet,
            init_gains: Vec::new(),
        }
    }

    /// Every (batch size, learning rate) pair, batch-major.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        self.batch_sizes
            .iter()
            .flat_map(|&b| self.learning_rates.iter().map(move |&lr| (b, lr)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub val_iou: f64,
    pub diverged: bool,
    /// Why the cell scored zero, if it failed.
    pub error: Option<String>,
}

fn run_cell(spec: &GridSpec, index: usize, batch_size: usize, lr: f64, train_set: &Dataset, val: &Dataset) -> Result<GridRow> {
    let mut unet = spec.unet.clone();
    if let Some(g) = spec
        .init_gains
        .iter()
        .find(|g| g.batch_size == batch_size && g.learning_rate == lr)
    {
        unet.init_gain = g.init_gain;
    }
    let seed = spec.seed.wrapping_add(index as u64);
    let model = UNet::new(unet, seed)?;
    let config = TrainConfig {
        batch_size,
        learning_rate: lr,
        epochs: spec.epochs,
        seed,
    };
    let out = train(model, train_set, val, &config, |_| {})?;
    let best = out.history.best();
    let last = out.history.epochs.last();
    Ok(GridRow {
        batch_size,
        learning_rate: lr,
        train_accuracy: last.map_or(0.0, |e| e.train_accuracy),
        val_accuracy: best.map_or(0.0, |e| e.val_accuracy),
        val_f1: best.map_or(0.0, |e| e.val_f1),
        val_iou: best.map_or(0.0, |e| e.val_iou),
        diverged: false,
        error: None,
    })
}

/// Trains one fresh network per cell and returns rows sorted by validation
/// F1, best first. A failing cell scores zero instead of stopping the grid.
pub fn grid_search(
    train_set: &Dataset,
    val: &Dataset,
    spec: &GridSpec,
    mut on_cell: impl FnMut(&GridRow),
) -> Vec<GridRow> {
    let mut rows: Vec<GridRow> = spec
        .cells()
        .into_iter()
        .enumerate()
        .map(|(i, (b, lr))| {
            let row = run_cell(spec, i, b, lr, train_set, val).unwrap_or_else(|e| {
                log::warn!("grid cell batch {b} lr {lr}: {e}");
                GridRow {
                    batch_size: b,
                    learning_rate: lr,
                    train_accuracy: 0.0,
                    val_accuracy: 0.0,
                    val_f1: 0.0,
                    val_iou: 0.0,
                    diverged: matches!(e, UnetError::Diverged { .. }),
                    error: Some(e.to_string()),
                }
            });
            on_cell(&row);
            row
        })
        .collect();
    rows.sort_by(|a, b| b.val_f1.total_cmp(&a.val_f1));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use meltpool_core::raster::{BinaryMask, Raster};

    fn toy(n: usize) -> Dataset {
        let pairs: Vec<_> = (0..n)
            .map(|i| {
                let mask = BinaryMask::from_fn(16, 16, |x, y| (x + i) % 16 < 8 && y > 4);
                let img = Raster::from_fn_gray(16, 16, |x, y| if mask.get(x, y) { 0.7 } else { 0.1 }).unwrap();
                (img, mask)
            })
            .collect();
        Dataset::from_pairs(&pairs, 16).unwrap()
    }

    #[test]
    fn nine_cells_with_one_forced_failure() {
        let unet = UNetConfig {
            input_side: 16,
            base_channels: 2,
            levels: 2,
            ..Default::default()
        };
        let mut spec = GridSpec::new(unet, 1, 3);
        spec.batch_sizes = vec![1, 2, 4];
        spec.init_gains.push(CellGain {
            batch_size: 4,
            learning_rate: 1e-3,
            init_gain: 1e4,
        });
        let mut seen = 0;
        let rows = grid_search(&toy(4), &toy(2), &spec, |_| seen += 1);
        assert_eq!((rows.len(), seen), (9, 9));
        let bad: Vec<_> = rows.iter().filter(|r| r.diverged).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!((bad[0].batch_size, bad[0].val_f1, bad[0].val_accuracy), (4, 0.0, 0.0));
        assert!(rows.windows(2).all(|w| w[0].val_f1 >= w[1].val_f1));
    }

    #[test]
    fn identical_data_scores_match_train_accuracy() {
        let unet = UNetConfig {
            input_side: 16,
            base_channels: 2,
            levels: 1,
            ..Default::default()
        };
        let mut spec = GridSpec::new(unet, 1, 0);
        spec.batch_sizes = vec![4];
        spec.learning_rates = vec![1e-12];
        let data = toy(4);
        let rows = grid_search(&data, &data, &spec, |_| {});
        // With a negligible step the weights barely move, so the
        // pre-update training accuracy equals the validation accuracy.
        assert!((rows[0].train_accuracy - rows[0].val_accuracy).abs() < 1e-6, "{rows:?}");
    }
}
