use std::path::{Path, PathBuf};

use anyhow::Result;
use fome::preprocess::PatchGrid;
use fome::signal::{read_recording_from, Recording, RecordingFormat};
use fome::train::{split_ranges, Sample};
use fome::Error;
use serde::Deserialize;

use crate::run::Run;

/// One row of a labeled-dataset manifest: `path,label,split`.
#[derive(Clone, Debug, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub split: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl ManifestRow {
    pub fn label(&self) -> Result<usize> {
        let raw = self.label.as_deref().unwrap_or("");
        raw.trim()
            .parse()
            .map_err(|_| Error::InvalidData(format!("{}: label `{raw}` is not a class index", self.path)).into())
    }

    fn split(&self) -> Result<Option<Split>> {
        match self.split.as_deref().map(str::trim) {
            None | Some("") => Ok(None),
            Some("train") => Ok(Some(Split::Train)),
            Some("val") => Ok(Some(Split::Val)),
            Some("test") => Ok(Some(Split::Test)),
            Some(other) => Err(Error::InvalidData(format!("{}: unknown split `{other}`", self.path)).into()),
        }
    }
}

pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    dir: PathBuf,
}

impl Manifest {
    pub fn load(run: &mut Run, path: &Path) -> Result<Self> {
        let bytes = run.read_path(path)?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&bytes[..]);
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<ManifestRow>, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if rows.is_empty() {
            return Err(Error::Empty(format!("{} lists no files", path.display())).into());
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { rows, dir })
    }

    /// Paths are taken relative to the manifest's directory.
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.dir.join(&row.path)
    }

    /// Explicit splits, or `None` when no row names one.
    pub fn splits(&self) -> Result<Option<Vec<Split>>> {
        let given = self.rows.iter().map(ManifestRow::split).collect::<Result<Vec<_>>>()?;
        if given.iter().all(Option::is_none) {
            return Ok(None);
        }
        given
            .into_iter()
            .zip(&self.rows)
            .map(|(s, r)| s.ok_or_else(|| Error::InvalidData(format!("{}: split missing", r.path)).into()))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Items grouped into train, validation and test.
pub struct Grouped<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Grouped<T> {
    /// Uses the manifest's splits when given, else contiguous 6:2:2 blocks
    /// over the items in manifest order.
    pub fn from_rows(per_row: Vec<Vec<T>>, splits: Option<Vec<Split>>) -> Self {
        let mut g = Self {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        match splits {
            Some(splits) => {
                for (items, s) in per_row.into_iter().zip(splits) {
                    match s {
                        Split::Train => g.train.extend(items),
                        Split::Val => g.val.extend(items),
                        Split::Test => g.test.extend(items),
                    }
                }
            }
            None => {
                let mut all: Vec<T> = per_row.into_iter().flatten().collect();
                let [_, va, te] = split_ranges(all.len());
                g.test = all.split_off(te.start);
                g.val = all.split_off(va.start);
                g.train = all;
            }
        }
        g
    }

    pub fn splits(&self) -> fome::train::Splits<'_, T> {
        fome::train::Splits {
            train: &self.train,
            val: &self.val,
            test: &self.test,
        }
    }
}

/// Decodes a recording, telling FEEG binary from CSV by the magic bytes.
pub fn decode_recording(bytes: &[u8], id: &str) -> Result<Recording> {
    let format = if bytes.starts_with(b"FEEG") {
        RecordingFormat::Binary
    } else {
        RecordingFormat::Csv
    };
    Ok(read_recording_from(bytes, format, id)?)
}

/// One or more patch grids written back to back.
pub fn decode_grids(bytes: &[u8]) -> Result<Vec<PatchGrid>> {
    let mut rest = bytes;
    let mut grids = Vec::new();
    while !rest.is_empty() {
        grids.push(PatchGrid::read_from(&mut rest)?);
    }
    if grids.is_empty() {
        return Err(Error::Empty("no patch grid in input".into()).into());
    }
    Ok(grids)
}

/// Samples of `patches` patches; a shorter grid becomes a single sample.
pub fn samples_of(grid: &PatchGrid, patches: usize) -> Result<Vec<Sample>> {
    if grid.patches() < patches {
        return Ok(vec![Sample::new(grid.clone())?]);
    }
    Ok(Sample::chunk(grid, patches)?)
}

/// Non-overlapping windows of `len` patches; a shorter grid becomes one window.
pub fn windows_of(grid: &PatchGrid, len: usize) -> Result<Vec<PatchGrid>> {
    if grid.patches() < len {
        return Ok(vec![grid.clone()]);
    }
    (0..grid.patches() / len)
        .map(|i| grid.slice_patches(i * len, len).map_err(Into::into))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguous_grouping_ignores_row_boundaries() {
        let g = Grouped::from_rows(vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7, 8, 9]], None);
        assert_eq!((g.train, g.val, g.test), (vec![0, 1, 2, 3, 4, 5], vec![6, 7], vec![8, 9]));
    }

    #[test]
    fn explicit_splits_keep_rows_whole() {
        let splits = vec![Split::Test, Split::Train, Split::Val, Split::Train];
        let g = Grouped::from_rows(vec![vec![0, 1], vec![2], vec![3], vec![4, 5]], Some(splits));
        assert_eq!((g.train, g.val, g.test), (vec![2, 4, 5], vec![3], vec![0, 1]));
    }

    #[test]
    fn split_column_must_be_all_or_nothing() {
        let row = |split: Option<&str>| ManifestRow {
            path: "x".into(),
            label: Some("0".into()),
            split: split.map(Into::into),
        };
        let m = Manifest {
            rows: vec![row(Some("train")), row(None)],
            dir: PathBuf::new(),
        };
        assert_eq!(m.splits().unwrap_err().downcast_ref::<Error>().unwrap().kind(), "DataError");
        let m = Manifest {
            rows: vec![row(None), row(Some(""))],
            dir: PathBuf::new(),
        };
        assert!(m.splits().unwrap().is_none());
    }

    #[test]
    fn short_grid_is_one_sample() {
        let g = PatchGrid::zeros(2, 3, 8, 250.0).unwrap();
        assert_eq!(samples_of(&g, 15).unwrap().len(), 1);
        assert_eq!(samples_of(&g, 1).unwrap().len(), 3);
        assert_eq!(windows_of(&g, 2).unwrap().len(), 1);
    }
}
