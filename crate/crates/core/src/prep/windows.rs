use std::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::grid::GridConfig;
use super::table::StandardizedGrid;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Chronological whole-week split of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_weeks: usize,
    pub validation_weeks: usize,
    /// `None` takes every remaining step.
    pub test_weeks: Option<usize>,
    /// Produce `steps − U − K` windows per split instead of `steps − U − K + 1`.
    #[serde(default)]
    pub drop_last_window: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_weeks: 13,
            validation_weeks: 2,
            test_weeks: Some(2),
            drop_last_window: false,
        }
    }
}

impl SplitSpec {
    pub fn step_ranges(&self, grid: &GridConfig) -> Result<[Range<usize>; 3]> {
        let week = grid.steps_per_week();
        let n = grid.n_steps();
        let train_end = self.train_weeks * week;
        let val_end = train_end + self.validation_weeks * week;
        let test_end = match self.test_weeks {
            Some(w) => val_end + w * week,
            None => n,
        };
        if test_end > n || val_end > n {
            return Err(Error::invalid(format!(
                "split of {}+{}+{:?} weeks needs {test_end} steps but the grid has {n}",
                self.train_weeks, self.validation_weeks, self.test_weeks
            )));
        }
        Ok([0..train_end, train_end..val_end, val_end..test_end])
    }
}

/// Windowed model inputs `x: N×U×L` and targets `y: N×K×L` with masks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSeriesTensor {
    pub x: Tensor,
    pub y: Tensor,
    pub mask_x: Tensor,
    pub mask_y: Tensor,
    pub grid: GridConfig,
    /// Grid step of `x[0, 0, ·]`.
    pub first_step: usize,
}

impl LinkSeriesTensor {
    pub fn n_samples(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn n_links(&self) -> usize {
        self.grid.n_links
    }

    /// Grid step of input position `u` in sample `i`.
    pub fn x_step(&self, i: usize, u: usize) -> usize {
        self.first_step + i + u
    }

    /// Grid step of horizon `k` (0-based) in sample `i`.
    pub fn y_step(&self, i: usize, k: usize) -> usize {
        self.first_step + i + self.grid.window_u + k
    }

    pub fn timestamp(&self, step: usize) -> DateTime<Utc> {
        self.grid.step_start(step)
    }

    pub fn sample_x(&self, i: usize) -> &[f64] {
        let n = self.grid.window_u * self.n_links();
        &self.x.data()[i * n..(i + 1) * n]
    }

    pub fn sample_y(&self, i: usize) -> &[f64] {
        let n = self.grid.horizon_k * self.n_links();
        &self.y.data()[i * n..(i + 1) * n]
    }

    pub fn sample_mask_y(&self, i: usize) -> &[f64] {
        let n = self.grid.horizon_k * self.n_links();
        &self.mask_y.data()[i * n..(i + 1) * n]
    }

    /// Gathers samples into batch tensors `(x, y, mask_y)`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor, Tensor) {
        let (u, k, l) = (self.grid.window_u, self.grid.horizon_k, self.n_links());
        let b = indices.len();
        let mut x = Vec::with_capacity(b * u * l);
        let mut y = Vec::with_capacity(b * k * l);
        let mut m = Vec::with_capacity(b * k * l);
        for &i in indices {
            x.extend_from_slice(self.sample_x(i));
            y.extend_from_slice(self.sample_y(i));
            m.extend_from_slice(self.sample_mask_y(i));
        }
        (
            Tensor::new(vec![b, u, l], x).expect("batch x shape"),
            Tensor::new(vec![b, k, l], y).expect("batch y shape"),
            Tensor::new(vec![b, k, l], m).expect("batch mask shape"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitTensors {
    pub train: LinkSeriesTensor,
    pub validation: LinkSeriesTensor,
    pub test: LinkSeriesTensor,
}

/// Slides a `U + K` window over one contiguous step range.
pub fn fold_range(
    std: &StandardizedGrid,
    grid: &GridConfig,
    steps: Range<usize>,
    drop_last_window: bool,
) -> Result<LinkSeriesTensor> {
    let (u, k, l) = (grid.window_u, grid.horizon_k, std.n_links);
    if steps.end > std.n_steps {
        return Err(Error::invalid(format!("step range {steps:?} exceeds grid of {} steps", std.n_steps)));
    }
    let span = u + k;
    let len = steps.len();
    if len < span + usize::from(drop_last_window) {
        return Err(Error::invalid(format!(
            "split {steps:?} has {len} steps, fewer than one window of U + K = {span}"
        )));
    }
    let n = len - span + 1 - usize::from(drop_last_window);
    let mut x = Vec::with_capacity(n * u * l);
    let mut mx = Vec::with_capacity(n * u * l);
    let mut y = Vec::with_capacity(n * k * l);
    let mut my = Vec::with_capacity(n * k * l);
    for i in 0..n {
        let s0 = steps.start + i;
        let xs = s0 * l..(s0 + u) * l;
        let ys = (s0 + u) * l..(s0 + span) * l;
        x.extend_from_slice(&std.values[xs.clone()]);
        mx.extend_from_slice(&std.mask[xs]);
        y.extend_from_slice(&std.values[ys.clone()]);
        my.extend_from_slice(&std.mask[ys]);
    }
    Ok(LinkSeriesTensor {
        x: Tensor::new(vec![n, u, l], x)?,
        y: Tensor::new(vec![n, k, l], y)?,
        mask_x: Tensor::new(vec![n, u, l], mx)?,
        mask_y: Tensor::new(vec![n, k, l], my)?,
        grid: grid.clone(),
        first_step: steps.start,
    })
}

/// Windows each split independently so no sample straddles a boundary.
pub fn fold_windows(std: &StandardizedGrid, grid: &GridConfig, split: &SplitSpec) -> Result<SplitTensors> {
    let [train, validation, test] = split.step_ranges(grid)?;
    let out = SplitTensors {
        train: fold_range(std, grid, train, split.drop_last_window)?,
        validation: fold_range(std, grid, validation, split.drop_last_window)?,
        test: fold_range(std, grid, test, split.drop_last_window)?,
    };
    log::info!(
        "windows: train {}, validation {}, test {}",
        out.train.n_samples(),
        out.validation.n_samples(),
        out.test.n_samples()
    );
    Ok(out)
}
