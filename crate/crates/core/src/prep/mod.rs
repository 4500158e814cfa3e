//! Irregular link observations → aligned, imputed, standardized, windowed tensors.
//!
//! Pipeline: [`snap_to_grid`] → [`build_conditional_means`] (training rows
//! only) → [`impute_and_standardize`] → [`fold_windows`].

mod grid;
mod store;
mod table;
mod windows;

pub use grid::{snap_to_grid, GridConfig, LinkIndex, Observation, RawGrid};
pub use store::{read_observations_csv, write_observations_csv, PreparedDataset, PreparedMeta, Split};
pub use table::{build_conditional_means, impute_and_standardize, BinStats, ConditionalMeanTable, StandardizedGrid, TableConfig};
pub use windows::{fold_range, fold_windows, LinkSeriesTensor, SplitSpec, SplitTensors};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const DAYS_PER_WEEK: i64 = 7;
