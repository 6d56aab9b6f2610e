use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AudioError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub device: Option<String>,
    pub fold: Option<u32>,
    pub split: Split,
}

impl ManifestEntry {
    /// Identifier used for feature files and probability rows.
    pub fn file_id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.clone())
    }
}

/// Sorted distinct category names; a category's index is its rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySet {
    names: Vec<String>,
}

impl CategorySet {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        CategorySet { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(label)).ok()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    path: String,
    label: String,
    device: Option<String>,
    fold: Option<u32>,
    split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub categories: CategorySet,
    /// Directory relative entry paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self, AudioError> {
        if entries.is_empty() {
            return Err(AudioError::Manifest("no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(AudioError::Manifest(format!("duplicate path `{}`", e.path)));
            }
        }
        let categories = CategorySet::new(entries.iter().map(|e| e.label.clone()));
        Ok(Manifest {
            entries,
            categories,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, AudioError> {
        let file = std::fs::File::open(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_reader(file, base)
    }

    pub fn from_reader<R: Read>(r: R, base_dir: impl Into<PathBuf>) -> Result<Self, AudioError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(|e| AudioError::Manifest(e.to_string()))?;
        if headers != vec!["path", "label", "device", "fold", "split"] {
            return Err(AudioError::Manifest(format!(
                "header must be `path,label,device,fold,split`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| AudioError::Manifest(format!("row {line}: {e}")))?;
            let split = row
                .split
                .parse()
                .map_err(|e| AudioError::Manifest(format!("row {line} ({}): {e}", row.path)))?;
            entries.push(ManifestEntry {
                path: row.path,
                label: row.label,
                device: row.device.filter(|d| !d.is_empty()),
                fold: row.fold,
                split,
            });
        }
        Self::new(entries, base_dir)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), AudioError> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| AudioError::Manifest(e.to_string());
        wtr.write_record(["path", "label", "device", "fold", "split"]).map_err(err)?;
        for e in &self.entries {
            let fold = e.fold.map(|f| f.to_string()).unwrap_or_default();
            wtr.write_record([
                e.path.as_str(),
                e.label.as_str(),
                e.device.as_deref().unwrap_or(""),
                fold.as_str(),
                &e.split.to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), AudioError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn label_index(&self, entry: &ManifestEntry) -> usize {
        self.categories.index(&entry.label).expect("labels come from the manifest")
    }

    /// Converts a DCASE `meta.txt` (tab-separated `filename, scene_label,
    /// identifier, source_label`) into a manifest. Files listed in
    /// `test_files` go to the test split, everything else to train.
    pub fn from_dcase_meta<R: Read>(
        meta: R,
        test_files: &HashSet<String>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self, AudioError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .flexible(true)
            .from_reader(meta);
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| AudioError::Manifest(format!("meta line {}: {e}", i + 1)))?;
            if rec.len() < 2 {
                return Err(AudioError::Manifest(format!("meta line {} has {} fields", i + 1, rec.len())));
            }
            if i == 0 && &rec[0] == "filename" {
                continue;
            }
            let path = rec[0].to_string();
            entries.push(ManifestEntry {
                split: if test_files.contains(&path) { Split::Test } else { Split::Train },
                label: rec[1].to_string(),
                device: rec.get(3).filter(|d| !d.is_empty()).map(str::to_ascii_uppercase),
                fold: None,
                path,
            });
        }
        Manifest::new(entries, base_dir)
    }
}
