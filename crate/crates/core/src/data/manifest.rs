//! Case manifests: one CSV row per subject with both volume paths, the label,
//! and the split. Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::{read_volume, zscore, Volume};
use crate::error::{HvanError, Result};
use crate::planes::View;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path_t: PathBuf,
    pub path_s: PathBuf,
    pub label: u8,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            rows,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.id.as_str()) {
                return Err(HvanError::Data(format!("duplicate case id `{}`", r.id)));
            }
            if r.label > 1 {
                return Err(HvanError::Data(format!("case `{}`: label {} is not 0 or 1", r.id, r.label)));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(err) => HvanError::io(path, err),
            other => HvanError::Data(format!("{}: {other:?}", path.display())),
        })?;
        let rows = reader.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::new(root, rows)?;
        for r in &m.rows {
            for p in [&r.path_t, &r.path_s] {
                let full = m.resolve(p);
                if !full.is_file() {
                    return Err(HvanError::Data(format!(
                        "case `{}`: missing volume {}",
                        r.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(err) => HvanError::io(path, err),
            other => HvanError::Data(format!("{}: {other:?}", path.display())),
        })?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| HvanError::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    /// Fraction of label-0 rows in `split`, or `None` if the split is empty.
    pub fn negative_fraction(&self, split: Split) -> Option<f64> {
        let rows = self.split(split);
        (!rows.is_empty())
            .then(|| rows.iter().filter(|r| r.label == 0).count() as f64 / rows.len() as f64)
    }

    pub fn load(&self, row: &ManifestRow) -> Result<CasePair> {
        load_case(row, &self.root)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<CasePair>> {
        self.split(split).into_iter().map(|r| self.load(r)).collect()
    }
}

/// One subject: both views z-scored, plus the label.
#[derive(Clone, Debug, PartialEq)]
pub struct CasePair {
    pub id: String,
    pub vol_t: Volume,
    pub vol_s: Volume,
    pub label: u8,
}

/// Read both volumes of `row` (paths relative to `root`) and z-score them.
pub fn load_case(row: &ManifestRow, root: &Path) -> Result<CasePair> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
    let (t, mt) = read_volume(&resolve(&row.path_t))?;
    let (s, ms) = read_volume(&resolve(&row.path_s))?;
    if mt.view != View::Transverse || ms.view != View::Sagittal {
        return Err(HvanError::Data(format!(
            "case `{}`: volumes tagged {} and {}, expected transverse and sagittal",
            row.id, mt.view, ms.view
        )));
    }
    if mt.shape != ms.shape {
        return Err(HvanError::Data(format!(
            "case `{}`: view shapes {:?} and {:?} differ",
            row.id, mt.shape, ms.shape
        )));
    }
    Ok(CasePair {
        id: row.id.clone(),
        vol_t: zscore(&t),
        vol_s: zscore(&s),
        label: row.label,
    })
}
