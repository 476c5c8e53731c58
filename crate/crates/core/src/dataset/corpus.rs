//! On-disk corpus: one subdirectory of binvox files per class plus a JSON
//! manifest holding the class table, seeds and the per-file split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{augment, class_seed, generate_class, split_indices, ClassTable, DatasetError, LabeledShape, Source};
use crate::voxcore::{parse_off, read_binvox, voxelize_with, write_binvox, QuarterTurn, VoxelizeOptions};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldOut,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub shape: LabeledShape,
    pub split: Split,
    /// Index of the unrotated shape within its class.
    pub base_index: usize,
    /// Quarter turns applied to the base shape.
    pub rotation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dim: usize,
    pub seed: u64,
    pub train_fraction: Option<f64>,
    pub classes: ClassTable,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    seed: u64,
    train_fraction: Option<f64>,
    classes: ClassTable,
    files: Vec<ManifestFile>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    file: String,
    class_label: String,
    source: Source,
    split: Split,
    base_index: usize,
    rotation: usize,
}

impl Corpus {
    /// `samples_per_class` procedural shapes for every class with a
    /// generator, split, then augmented with quarter turns.
    pub fn procedural(
        classes: ClassTable,
        dim: usize,
        samples_per_class: usize,
        seed: u64,
        train_fraction: Option<f64>,
        rotate: bool,
    ) -> Result<Corpus, DatasetError> {
        classes.validate(dim)?;
        let mut base = Vec::new();
        for c in classes.0.iter().filter(|c| c.generator.is_some()) {
            base.extend(generate_class(c, dim, samples_per_class, class_seed(seed, &c.class_label))?);
        }
        Corpus::assemble(classes, dim, base, seed, train_fraction, rotate)
    }

    /// Splits `base` (when `train_fraction` is given, otherwise everything is
    /// training data) and optionally expands each shape into its four turns.
    /// The split happens first so no rotation of a held-out shape is trained on.
    pub fn assemble(
        classes: ClassTable,
        dim: usize,
        base: Vec<LabeledShape>,
        seed: u64,
        train_fraction: Option<f64>,
        rotate: bool,
    ) -> Result<Corpus, DatasetError> {
        for s in &base {
            if classes.get(&s.class_label).is_none() {
                return Err(DatasetError::UnknownClass(s.class_label.clone()));
            }
            if s.grid.dim() != dim {
                return Err(DatasetError::OutOfBounds {
                    dim,
                    what: format!("a '{}' grid of edge {}", s.class_label, s.grid.dim()),
                });
            }
        }
        let mut split = vec![Split::Train; base.len()];
        if let Some(f) = train_fraction {
            for i in split_indices(&base, f, seed)?.1 {
                split[i] = Split::HeldOut;
            }
        }
        let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
        let mut entries = Vec::new();
        for (s, sp) in base.into_iter().zip(split) {
            let counter = per_class.entry(s.class_label.clone()).or_default();
            let base_index = *counter;
            *counter += 1;
            let turns = if rotate { augment(std::slice::from_ref(&s)) } else { vec![s] };
            for (rotation, shape) in turns.into_iter().enumerate() {
                entries.push(CorpusEntry {
                    shape,
                    split: sp,
                    base_index,
                    rotation,
                });
            }
        }
        Ok(Corpus {
            dim,
            seed,
            train_fraction,
            classes,
            entries,
        })
    }

    /// Shapes in `split`, or all shapes for `None`, in corpus order.
    pub fn shapes(&self, split: Option<Split>) -> Vec<&LabeledShape> {
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| &e.shape)
            .collect()
    }

    pub fn class_shapes(&self, label: &str, split: Option<Split>) -> Vec<&LabeledShape> {
        self.shapes(split).into_iter().filter(|s| s.class_label == label).collect()
    }

    fn file_name(e: &CorpusEntry) -> String {
        format!("{}/{:04}_r{:03}.binvox", e.shape.class_label, e.base_index, 90 * e.rotation)
    }

    /// Writes the corpus under `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let name = Self::file_name(e);
            let path = dir.join(&name);
            std::fs::create_dir_all(path.parent().expect("file has a class directory"))?;
            std::fs::write(&path, write_binvox(&e.shape.grid))?;
            files.push(ManifestFile {
                file: name,
                class_label: e.shape.class_label.clone(),
                source: e.shape.source,
                split: e.split,
                base_index: e.base_index,
                rotation: e.rotation,
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            dim: self.dim,
            seed: self.seed,
            train_fraction: self.train_fraction,
            classes: self.classes.clone(),
            files,
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        json.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Corpus, DatasetError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!("unsupported version {}", m.version)));
        }
        m.classes.validate(m.dim)?;
        let mut entries = Vec::with_capacity(m.files.len());
        for f in m.files {
            let spec = m
                .classes
                .get(&f.class_label)
                .ok_or_else(|| DatasetError::UnknownClass(f.class_label.clone()))?;
            if Path::new(&f.file).components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
                return Err(DatasetError::Manifest(format!("file path '{}' leaves the corpus", f.file)));
            }
            let grid = read_binvox(&std::fs::read(dir.join(&f.file))?)?;
            if grid.dim() != m.dim {
                return Err(DatasetError::Manifest(format!("{} has edge {}, expected {}", f.file, grid.dim(), m.dim)));
            }
            if f.rotation >= QuarterTurn::ALL.len() {
                return Err(DatasetError::Manifest(format!("{}: rotation {} out of range", f.file, f.rotation)));
            }
            entries.push(CorpusEntry {
                shape: LabeledShape {
                    grid,
                    class_label: f.class_label,
                    affordances: spec.affordances.clone(),
                    source: f.source,
                },
                split: f.split,
                base_index: f.base_index,
                rotation: f.rotation,
            });
        }
        Ok(Corpus {
            dim: m.dim,
            seed: m.seed,
            train_fraction: m.train_fraction,
            classes: m.classes,
            entries,
        })
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub shapes: Vec<LabeledShape>,
    /// Files that failed to parse or voxelize, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Voxelizes every `.off` file under `<path>/<class>/` at edge `dim` with
/// the interior filled. Subdirectories must name registered classes;
/// unreadable meshes are skipped with a warning.
pub fn ingest_off_directory(path: &Path, dim: usize, classes: &ClassTable) -> Result<IngestReport, DatasetError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    let mut report = IngestReport::default();
    let opts = VoxelizeOptions {
        fill_interior: true,
        ..VoxelizeOptions::default()
    };
    for dir in dirs {
        let label = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let spec = classes.get(&label).ok_or_else(|| DatasetError::UnknownClass(label.clone()))?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")));
        files.sort();
        for file in files {
            let result = std::fs::read_to_string(&file)
                .map_err(|e| e.to_string())
                .and_then(|text| parse_off(&text).map_err(|e| e.to_string()))
                .and_then(|mesh| voxelize_with(&mesh, dim, opts).map_err(|e| e.to_string()));
            match result {
                Ok(grid) => report.shapes.push(LabeledShape {
                    grid,
                    class_label: label.clone(),
                    affordances: spec.affordances.clone(),
                    source: Source::External,
                }),
                Err(msg) => {
                    log::warn!("skipping {}: {msg}", file.display());
                    report.skipped.push((file, msg));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE_OFF: &str = "OFF\n8 12 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
        3 0 2 1\n3 0 3 2\n3 4 5 6\n3 4 6 7\n3 0 1 5\n3 0 5 4\n3 2 3 7\n3 2 7 6\n3 1 2 6\n3 1 6 5\n3 0 4 7\n3 0 7 3\n";

    fn small() -> Corpus {
        Corpus::procedural(ClassTable::desk(16), 16, 4, 7, Some(0.5), true).unwrap()
    }

    #[test]
    fn procedural_corpus_layout() {
        let c = small();
        assert_eq!(c.entries.len(), 4 * 4 * 4);
        assert_eq!(c.shapes(Some(Split::Train)).len(), 32);
        assert_eq!(c.class_shapes("tub", Some(Split::HeldOut)).len(), 8);
        // rotations of one base shape share its split
        for chunk in c.entries.chunks(4) {
            assert!(chunk.iter().all(|e| e.split == chunk[0].split && e.base_index == chunk[0].base_index));
            assert_eq!(chunk.iter().map(|e| e.rotation).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn write_read_round_trip_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        small().write(a.path()).unwrap();
        small().write(b.path()).unwrap();
        let manifest = std::fs::read(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest, std::fs::read(b.path().join(MANIFEST_FILE)).unwrap());
        let back = Corpus::read(a.path()).unwrap();
        assert_eq!(back, small());
        let first = a.path().join("table/0000_r090.binvox");
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(b.path().join("table/0000_r090.binvox")).unwrap());
    }

    #[test]
    fn read_rejects_bad_manifests() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(Corpus::read(d.path()), Err(DatasetError::Io(_))));
        small().write(d.path()).unwrap();
        let p = d.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
        assert!(matches!(Corpus::read(d.path()), Err(DatasetError::Manifest(_))));
        std::fs::write(&p, text.replacen("\"table/0000_r000.binvox\"", "\"../x.binvox\"", 1)).unwrap();
        assert!(matches!(Corpus::read(d.path()), Err(DatasetError::Manifest(_))));
    }

    #[test]
    fn ingest_empty_directory() {
        let d = tempfile::tempdir().unwrap();
        let r = ingest_off_directory(d.path(), 16, &ClassTable::desk(16)).unwrap();
        assert!(r.shapes.is_empty() && r.skipped.is_empty());
    }

    #[test]
    fn ingest_maps_directories_to_classes() {
        let d = tempfile::tempdir().unwrap();
        std::fs::create_dir(d.path().join("table")).unwrap();
        std::fs::write(d.path().join("table/a.off"), CUBE_OFF).unwrap();
        std::fs::write(d.path().join("table/b.off"), "NOFF\n1 0 0\n").unwrap();
        std::fs::write(d.path().join("table/readme.txt"), "ignored").unwrap();
        let r = ingest_off_directory(d.path(), 8, &ClassTable::desk(8)).unwrap();
        assert_eq!(r.shapes.len(), 1);
        assert_eq!(r.shapes[0].class_label, "table");
        assert_eq!(r.shapes[0].source, Source::External);
        assert!(r.shapes[0].affordances.contains("support-ability"));
        // filled cube
        assert!(r.shapes[0].grid.get(4, 4, 4));
        assert_eq!(r.skipped.len(), 1);
        assert!(r.skipped[0].0.ends_with("b.off"));
    }

    #[test]
    fn ingest_rejects_unknown_class() {
        let d = tempfile::tempdir().unwrap();
        std::fs::create_dir(d.path().join("boat")).unwrap();
        assert!(matches!(
            ingest_off_directory(d.path(), 8, &ClassTable::desk(8)),
            Err(DatasetError::UnknownClass(l)) if l == "boat"
        ));
    }

    #[test]
    fn assemble_checks_labels_and_sizes() {
        let t = ClassTable::desk(16);
        let mut s = generate_class(t.get("tub").unwrap(), 16, 2, 0).unwrap();
        assert!(Corpus::assemble(t.clone(), 32, s.clone(), 0, None, false).is_err());
        s[0].class_label = "boat".into();
        assert!(matches!(
            Corpus::assemble(t, 16, s, 0, None, false),
            Err(DatasetError::UnknownClass(_))
        ));
    }
}
