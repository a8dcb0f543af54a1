use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["ppm", "pgm", "sotn"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// Folder / display names indexed by label.
    pub class_names: [String; 2],
    pub entries: Vec<ManifestEntry>,
}

/// How a dataset directory is organized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `<root>/<class_name>/*.{ppm,pgm,sotn}`.
    ClassFolders,
    /// A `path,label` CSV with header; relative paths resolve against `root`.
    Manifest(PathBuf),
}

impl DatasetManifest {
    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Dataset(format!("duplicate path {}", e.path.display())));
            }
        }
        Ok(())
    }
}

fn default_class_names() -> [String; 2] {
    ["healthy".to_string(), "glaucoma".to_string()]
}

/// Builds a manifest. Class folders are listed in label order with sorted
/// paths inside each class; manifest entries are sorted by path.
pub fn scan_dataset(root: &Path, layout: &Layout) -> Result<DatasetManifest> {
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut manifest = DatasetManifest {
        name,
        class_names: default_class_names(),
        entries: Vec::new(),
    };
    match layout {
        Layout::ClassFolders => {
            for (i, class) in default_class_names().iter().enumerate() {
                let dir = root.join(class);
                let rd = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
                let mut files = Vec::new();
                for entry in rd {
                    let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                    if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                        files.push(path);
                    }
                }
                if files.is_empty() {
                    return Err(Error::Dataset(format!("class folder {} has no images", dir.display())));
                }
                files.sort();
                let label = Label::from_index(i).unwrap();
                manifest
                    .entries
                    .extend(files.into_iter().map(|path| ManifestEntry { path, label }));
            }
        }
        Layout::Manifest(csv_path) => {
            let csv_path = if csv_path.is_absolute() { csv_path.clone() } else { root.join(csv_path) };
            manifest.entries = read_manifest_csv(&csv_path)?
                .into_iter()
                .map(|e| ManifestEntry {
                    path: if e.path.is_absolute() { e.path } else { root.join(e.path) },
                    label: e.label,
                })
                .collect();
            manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
            for (i, class) in manifest.class_names.iter().enumerate() {
                if manifest.count(Label::from_index(i).unwrap()) == 0 {
                    return Err(Error::Dataset(format!("manifest has no '{class}' entries")));
                }
            }
        }
    }
    manifest.check_unique()?;
    for e in &manifest.entries {
        std::fs::File::open(&e.path).map_err(|err| Error::io(&e.path, err))?;
    }
    Ok(manifest)
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    path: PathBuf,
    label: u8,
}

pub fn read_manifest_csv(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let label = Label::try_from(row.label)
            .map_err(|m| Error::parse(0, format!("{} row {}: {m}", path.display(), i + 1)))?;
        out.push(ManifestEntry { path: row.path, label });
    }
    let mut seen = HashSet::new();
    for e in &out {
        if !seen.insert(&e.path) {
            return Err(Error::Dataset(format!("duplicate path {} in {}", e.path.display(), path.display())));
        }
    }
    Ok(out)
}

pub fn write_manifest_csv(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    for e in entries {
        w.serialize(CsvRow {
            path: e.path.clone(),
            label: e.label.into(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, b"P5\n1 1\n255\n\x00").unwrap();
    }

    #[test]
    fn class_folders_are_sorted_and_labelled() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["healthy/b.ppm", "healthy/a.ppm", "glaucoma/z.pgm", "glaucoma/c.ppm", "glaucoma/m.ppm"] {
            touch(&dir.path().join(f));
        }
        std::fs::write(dir.path().join("healthy/notes.txt"), "x").unwrap();
        let m = scan_dataset(dir.path(), &Layout::ClassFolders).unwrap();
        let labels: Vec<u8> = m.entries.iter().map(|e| e.label.into()).collect();
        assert_eq!(labels, vec![0, 0, 1, 1, 1]);
        assert!(m.entries[0].path.ends_with("healthy/a.ppm"));
        assert!(m.entries[4].path.ends_with("glaucoma/z.pgm"));
        assert_eq!(m, scan_dataset(dir.path(), &Layout::ClassFolders).unwrap());
    }

    #[test]
    fn empty_class_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("healthy/a.ppm"));
        std::fs::create_dir_all(dir.path().join("glaucoma")).unwrap();
        assert!(matches!(scan_dataset(dir.path(), &Layout::ClassFolders), Err(Error::Dataset(_))));
    }

    #[test]
    fn manifest_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a.ppm"));
        touch(&dir.path().join("b.ppm"));
        std::fs::write(dir.path().join("m.csv"), "path,label\na.ppm,0\nb.ppm,1\na.ppm,1\n").unwrap();
        let err = scan_dataset(dir.path(), &Layout::Manifest("m.csv".into())).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        std::fs::write(dir.path().join("ok.csv"), "path,label\nb.ppm,1\na.ppm,0\n").unwrap();
        let m = scan_dataset(dir.path(), &Layout::Manifest("ok.csv".into())).unwrap();
        assert_eq!(m.labels(), vec![Label::Healthy, Label::Glaucoma]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a.ppm"));
        std::fs::write(dir.path().join("m.csv"), "path,label\na.ppm,0\ngone.ppm,1\n").unwrap();
        let err = scan_dataset(dir.path(), &Layout::Manifest("m.csv".into())).unwrap_err();
        assert!(err.is_io_or_parse());
    }
}
