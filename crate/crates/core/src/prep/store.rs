use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::grid::{snap_to_grid, GridConfig, LinkIndex, Observation};
use super::table::{build_conditional_means, impute_and_standardize, ConditionalMeanTable, StandardizedGrid, TableConfig};
use super::windows::{fold_windows, LinkSeriesTensor, SplitSpec, SplitTensors};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, read_f32_le, read_json, write_f32_le, write_json};
use crate::nn::Tensor;

pub const PREPARED_FORMAT: &str = "holdwise-prepared/1";
const META_FILE: &str = "meta.json";

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    link_id: String,
    observed_at: String,
    travel_time_s: f64,
}

/// Reads `link_id,observed_at,travel_time_s` rows with RFC 3339 timestamps.
pub fn read_observations_csv(path: &Path) -> Result<Vec<Observation>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Parse { line, detail: e.to_string() })?;
        let observed_at = DateTime::parse_from_rfc3339(row.observed_at.trim())
            .map_err(|e| Error::Parse { line, detail: format!("timestamp `{}`: {e}", row.observed_at) })?
            .with_timezone(&Utc);
        if !(row.travel_time_s > 0.0 && row.travel_time_s.is_finite()) {
            return Err(Error::Parse { line, detail: format!("travel time {} must be positive", row.travel_time_s) });
        }
        out.push(Observation { link_id: row.link_id, observed_at, travel_time: row.travel_time_s });
    }
    Ok(out)
}

pub fn write_observations_csv(path: &Path, observations: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for o in observations {
        w.serialize(CsvRow {
            link_id: o.link_id.clone(),
            observed_at: o.observed_at.to_rfc3339_opts(SecondsFormat::Secs, true),
            travel_time_s: o.travel_time,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedMeta {
    pub format: String,
    pub grid: GridConfig,
    pub links: LinkIndex,
    pub split: SplitSpec,
    /// Half-open grid step ranges `[start, end)` per split.
    pub split_steps: BTreeMap<String, [usize; 2]>,
    pub observation_count: usize,
    pub observed_cells: usize,
    pub table: ConditionalMeanTable,
    /// File name → shape.
    pub arrays: BTreeMap<String, Vec<usize>>,
}

/// Everything downstream stages need: tensors, calendar, and the inverse transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub meta: PreparedMeta,
    pub grid_values: StandardizedGrid,
    pub tensors: SplitTensors,
}

fn range_pair(r: &Range<usize>) -> [usize; 2] {
    [r.start, r.end]
}

impl PreparedDataset {
    pub fn build(
        observations: &[Observation],
        grid: GridConfig,
        links: LinkIndex,
        split: SplitSpec,
        table_config: TableConfig,
    ) -> Result<Self> {
        let raw = snap_to_grid(observations, &grid, &links)?;
        let ranges = split.step_ranges(&grid)?;
        let table = build_conditional_means(&raw, &grid, ranges[0].clone(), table_config)?;
        let grid_values = impute_and_standardize(&raw, &grid, &table);
        let tensors = fold_windows(&grid_values, &grid, &split)?;
        let split_steps = Split::ALL
            .iter()
            .zip(&ranges)
            .map(|(s, r)| (s.name().to_string(), range_pair(r)))
            .collect();
        let mut meta = PreparedMeta {
            format: PREPARED_FORMAT.into(),
            grid,
            links,
            split,
            split_steps,
            observation_count: observations.len(),
            observed_cells: raw.observed_cells(),
            table,
            arrays: BTreeMap::new(),
        };
        meta.arrays = Self::manifest(&grid_values, &tensors);
        Ok(Self { meta, grid_values, tensors })
    }

    fn manifest(grid_values: &StandardizedGrid, tensors: &SplitTensors) -> BTreeMap<String, Vec<usize>> {
        let mut arrays = BTreeMap::new();
        let gshape = vec![grid_values.n_steps, grid_values.n_links];
        arrays.insert("grid_values.f32".into(), gshape.clone());
        arrays.insert("grid_mask.f32".into(), gshape);
        for s in Split::ALL {
            let t = tensors_of(tensors, s);
            for (suffix, tensor) in [("x", &t.x), ("y", &t.y), ("mask_x", &t.mask_x), ("mask_y", &t.mask_y)] {
                arrays.insert(format!("{}_{suffix}.f32", s.name()), tensor.shape().to_vec());
            }
        }
        arrays
    }

    pub fn split(&self, split: Split) -> &LinkSeriesTensor {
        tensors_of(&self.tensors, split)
    }

    /// Grid steps `[start, end)` covered by `split`.
    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        let r = self.meta.split_steps.get(split.name()).copied().unwrap_or([0, 0]);
        r[0]..r[1]
    }

    pub fn grid(&self) -> &GridConfig {
        &self.meta.grid
    }

    pub fn n_links(&self) -> usize {
        self.meta.grid.n_links
    }

    pub fn table(&self) -> &ConditionalMeanTable {
        &self.meta.table
    }

    /// Seconds for a standardized value at (link, grid step).
    pub fn destandardize(&self, value: f64, link: usize, step: usize) -> f64 {
        self.meta.table.destandardize(&self.meta.grid, value, link, step)
    }

    /// Standard deviation (s) used to scale cell (link, step).
    pub fn scale(&self, link: usize, step: usize) -> f64 {
        self.meta.table.scale(&self.meta.grid, link, step)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        write_json(&dir.join(META_FILE), &self.meta)?;
        write_f32_le(&dir.join("grid_values.f32"), &self.grid_values.values)?;
        write_f32_le(&dir.join("grid_mask.f32"), &self.grid_values.mask)?;
        for s in Split::ALL {
            let t = self.split(s);
            for (suffix, tensor) in [("x", &t.x), ("y", &t.y), ("mask_x", &t.mask_x), ("mask_y", &t.mask_y)] {
                write_f32_le(&dir.join(format!("{}_{suffix}.f32", s.name())), tensor.data())?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: PreparedMeta = read_json(&dir.join(META_FILE))?;
        if meta.format != PREPARED_FORMAT {
            return Err(Error::invalid(format!("unsupported prepared format `{}`", meta.format)));
        }
        let array = |name: &str| -> Result<Tensor> {
            let shape = meta
                .arrays
                .get(name)
                .ok_or_else(|| Error::invalid(format!("manifest lacks `{name}`")))?
                .clone();
            let data = read_f32_le(&dir.join(name))?;
            Tensor::new(shape, data).map_err(|e| Error::invalid(format!("{name}: {e}")))
        };
        let gv = array("grid_values.f32")?;
        let gm = array("grid_mask.f32")?;
        let grid_values = StandardizedGrid {
            n_steps: gv.shape()[0],
            n_links: gv.shape()[1],
            values: gv.into_data(),
            mask: gm.into_data(),
        };
        let mut parts = Vec::with_capacity(3);
        for s in Split::ALL {
            let first_step = meta.split_steps.get(s.name()).map(|r| r[0]).unwrap_or(0);
            parts.push(LinkSeriesTensor {
                x: array(&format!("{}_x.f32", s.name()))?,
                y: array(&format!("{}_y.f32", s.name()))?,
                mask_x: array(&format!("{}_mask_x.f32", s.name()))?,
                mask_y: array(&format!("{}_mask_y.f32", s.name()))?,
                grid: meta.grid.clone(),
                first_step,
            });
        }
        let test = parts.pop().unwrap();
        let validation = parts.pop().unwrap();
        let train = parts.pop().unwrap();
        Ok(Self { meta, grid_values, tensors: SplitTensors { train, validation, test } })
    }
}

fn tensors_of(t: &SplitTensors, s: Split) -> &LinkSeriesTensor {
    match s {
        Split::Train => &t.train,
        Split::Validation => &t.validation,
        Split::Test => &t.test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "link_id,observed_at,travel_time_s").unwrap();
        writeln!(f, "a,2020-08-03T12:07:30Z,50.5").unwrap();
        writeln!(f, "b,2020-08-03T14:07:30+02:00,12").unwrap();
        drop(f);
        let obs = read_observations_csv(&path).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].travel_time, 50.5);
        assert_eq!(obs[0].observed_at, obs[1].observed_at);

        let out = dir.path().join("out.csv");
        write_observations_csv(&out, &obs).unwrap();
        assert_eq!(read_observations_csv(&out).unwrap(), obs);

        std::fs::write(&path, "link_id,observed_at,travel_time_s\na,yesterday,3\n").unwrap();
        match read_observations_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "link_id,observed_at,travel_time_s\na,2020-08-03T12:00:00Z,-3\n").unwrap();
        assert!(read_observations_csv(&path).is_err());
    }
}
