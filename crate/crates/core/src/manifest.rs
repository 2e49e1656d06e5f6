//! Dataset manifests: samples with one or more ground-truth masks.
//!
//! On disk a manifest is a UTF-8 CSV with header
//! `sample_id,image_path,mask_path`, one row per (sample, mask) pair. Paths
//! are relative to the manifest's directory unless absolute.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{load_mask, BinaryMask};

#[derive(Debug, Clone, PartialEq)]
enum MaskSource {
    Files(Vec<PathBuf>),
    InMemory(Vec<BinaryMask>),
}

/// One lesion with its annotations.
///
/// Masks referenced by path are read on demand by [`SampleRecord::masks`] and
/// are not cached, so a manifest of thousands of samples stays small.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_ref: Option<PathBuf>,
    source: MaskSource,
}

impl SampleRecord {
    pub fn from_paths(
        sample_id: impl Into<String>,
        image_ref: Option<PathBuf>,
        mask_refs: Vec<PathBuf>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if mask_refs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "sample {sample_id} has no mask paths"
            )));
        }
        Ok(Self {
            sample_id,
            image_ref,
            source: MaskSource::Files(mask_refs),
        })
    }

    /// A record whose masks are already in memory.
    pub fn from_masks(sample_id: impl Into<String>, masks: Vec<BinaryMask>) -> Result<Self> {
        let sample_id = sample_id.into();
        if masks.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "sample {sample_id} has no masks"
            )));
        }
        check_same_dims(&masks).map_err(|e| e.in_sample(&sample_id))?;
        Ok(Self {
            sample_id,
            image_ref: None,
            source: MaskSource::InMemory(masks),
        })
    }

    pub fn n_masks(&self) -> usize {
        match &self.source {
            MaskSource::Files(p) => p.len(),
            MaskSource::InMemory(m) => m.len(),
        }
    }

    /// Mask paths; empty for in-memory records.
    pub fn mask_refs(&self) -> &[PathBuf] {
        match &self.source {
            MaskSource::Files(p) => p,
            MaskSource::InMemory(_) => &[],
        }
    }

    /// All masks of the record, validated to share one size.
    pub fn masks(&self) -> Result<Cow<'_, [BinaryMask]>> {
        match &self.source {
            MaskSource::InMemory(m) => Ok(Cow::Borrowed(m)),
            MaskSource::Files(paths) => {
                let masks = paths
                    .iter()
                    .map(load_mask)
                    .collect::<Result<Vec<_>>>()
                    .and_then(|m| check_same_dims(&m).map(|_| m))
                    .map_err(|e| e.in_sample(&self.sample_id))?;
                Ok(Cow::Owned(masks))
            }
        }
    }

    /// Loads only the `index`-th mask.
    pub fn mask(&self, index: usize) -> Result<BinaryMask> {
        match &self.source {
            MaskSource::InMemory(m) => Ok(m[index].clone()),
            MaskSource::Files(p) => load_mask(&p[index]).map_err(|e| e.in_sample(&self.sample_id)),
        }
    }
}

fn check_same_dims(masks: &[BinaryMask]) -> Result<()> {
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            first.ensure_same_dims(m)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    records: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Builds a manifest, rejecting repeated sample ids.
    pub fn new(name: impl Into<String>, records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate sample_id {}",
                    r.sample_id
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            records,
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.sample_id.as_str())
    }

    /// Keeps the records for which `keep` returns true, in order.
    pub fn filtered(&self, name: impl Into<String>, keep: impl Fn(&SampleRecord) -> bool) -> Self {
        Self {
            name: name.into(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Records with at least two annotations.
    pub fn multi_annotated(&self) -> Self {
        self.filtered(format!("{}-multi", self.name), |r| r.n_masks() >= 2)
    }

    /// Writes the manifest CSV. Paths under the output directory are written
    /// relative to it, everything else as absolute paths.
    pub fn write_csv<W: Write>(&self, writer: W, base_dir: &Path) -> Result<()> {
        let to_csv = |source| Error::Csv {
            path: base_dir.to_owned(),
            source,
        };
        let base = absolute(base_dir);
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            let paths = match &r.source {
                MaskSource::Files(p) => p,
                MaskSource::InMemory(_) => {
                    return Err(Error::InvalidArgument(format!(
                        "sample {} has no on-disk masks to reference",
                        r.sample_id
                    )))
                }
            };
            let image = r
                .image_ref
                .as_deref()
                .map(|p| relative_to(p, &base))
                .unwrap_or_default();
            for p in paths {
                w.serialize(ManifestRow {
                    sample_id: r.sample_id.clone(),
                    image_path: image.clone(),
                    mask_path: relative_to(p, &base),
                })
                .map_err(to_csv)?;
            }
        }
        if self.records.is_empty() {
            w.write_record(["sample_id", "image_path", "mask_path"])
                .map_err(to_csv)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: base_dir.to_owned(),
            source,
        })
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_owned())
}

fn relative_to(path: &Path, base: &Path) -> String {
    let abs = absolute(path);
    abs.strip_prefix(base)
        .map(Path::to_path_buf)
        .unwrap_or(abs)
        .to_string_lossy()
        .into_owned()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    sample_id: String,
    image_path: String,
    mask_path: String,
}

/// Parses a manifest CSV, grouping rows by `sample_id` in first-seen order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let manifest_err = |reason: String| Error::Manifest {
        path: path.to_owned(),
        reason,
    };
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_owned(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|e| manifest_err(format!("unreadable header: {e}")))?
        .clone();
    for required in ["sample_id", "image_path", "mask_path"] {
        if !headers.iter().any(|h| h == required) {
            return Err(manifest_err(format!("missing column `{required}`")));
        }
    }

    struct Group {
        image: Option<PathBuf>,
        masks: Vec<PathBuf>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Group> = HashMap::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| manifest_err(format!("line {line}: malformed row: {e}")))?;
        let sample_id = row.sample_id.trim().to_owned();
        if sample_id.is_empty() {
            return Err(manifest_err(format!("line {line}: empty sample_id")));
        }
        let mask_path = row.mask_path.trim();
        if mask_path.is_empty() {
            return Err(manifest_err(format!(
                "line {line}: sample {sample_id} has an empty mask_path"
            )));
        }
        let mask = base.join(mask_path);
        let image = Some(row.image_path.trim())
            .filter(|s| !s.is_empty())
            .map(|s| base.join(s));
        match groups.get_mut(&sample_id) {
            Some(g) => {
                if g.masks.contains(&mask) {
                    return Err(manifest_err(format!(
                        "line {line}: duplicate sample_id/mask_path pair for {sample_id}"
                    )));
                }
                if g.image != image {
                    return Err(manifest_err(format!(
                        "line {line}: sample {sample_id} lists conflicting image paths"
                    )));
                }
                g.masks.push(mask);
            }
            None => {
                order.push(sample_id.clone());
                groups.insert(
                    sample_id,
                    Group {
                        image,
                        masks: vec![mask],
                    },
                );
            }
        }
    }
    if order.is_empty() {
        return Err(manifest_err("empty manifest".into()));
    }
    let records = order
        .into_iter()
        .map(|id| {
            let g = groups.remove(&id).expect("grouped id");
            SampleRecord::from_paths(id, g.image, g.masks)
        })
        .collect::<Result<Vec<_>>>()?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DatasetManifest::new(name, records)
}

/// Histogram of samples by number of annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskCountStats {
    pub counts: BTreeMap<usize, usize>,
    pub total: usize,
}

impl MaskCountStats {
    /// Number of samples with exactly `k` masks.
    pub fn exactly(&self, k: usize) -> usize {
        self.counts.get(&k).copied().unwrap_or(0)
    }

    /// Number of samples with `k` or more masks.
    pub fn at_least(&self, k: usize) -> usize {
        self.counts.range(k..).map(|(_, n)| n).sum()
    }
}

pub fn dataset_stats(manifest: &DatasetManifest) -> MaskCountStats {
    let mut counts = BTreeMap::new();
    for r in manifest.records() {
        *counts.entry(r.n_masks()).or_insert(0) += 1;
    }
    MaskCountStats {
        counts,
        total: manifest.len(),
    }
}

/// Seeded train/validation split.
///
/// Sample ids are sorted, shuffled with a ChaCha8 generator seeded from
/// `seed`, and the first `floor(fraction * n)` go to training. Both halves
/// are returned sorted by sample id.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if manifest.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty manifest".into(),
        ));
    }
    let mut ids: Vec<&str> = manifest.sample_ids().collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (fraction * ids.len() as f64).floor() as usize;
    let train: HashSet<&str> = ids[..n_train].iter().copied().collect();

    let mut train_records = Vec::with_capacity(n_train);
    let mut val_records = Vec::with_capacity(ids.len() - n_train);
    for r in manifest.records() {
        if train.contains(r.sample_id.as_str()) {
            train_records.push(r.clone());
        } else {
            val_records.push(r.clone());
        }
    }
    train_records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    val_records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok((
        DatasetManifest {
            name: format!("{}-train", manifest.name),
            records: train_records,
        },
        DatasetManifest {
            name: format!("{}-validation", manifest.name),
            records: val_records,
        },
    ))
}

/// Picks one of the record's masks uniformly at random.
pub fn sample_training_mask<R: Rng + ?Sized>(
    record: &SampleRecord,
    rng: &mut R,
) -> Result<BinaryMask> {
    let index = rng.random_range(0..record.n_masks());
    record.mask(index)
}
