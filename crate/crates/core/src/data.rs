//! Feature ingestion, synthetic multi-view datasets and batching.
//!
//! A dataset on disk is a TOML manifest plus, per split, a dense `f32`
//! tensor file and a CSV sidecar carrying ids and labels. See the
//! "Feature files" section of the README for the byte layout.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng::stream_rng;

/// Magic bytes opening every split tensor file.
pub const TENSOR_MAGIC: &[u8; 8] = b"MVHF32\0\x01";
pub const MANIFEST_FORMAT: &str = "mvhash-features/1";

/// Multi-hot category membership.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiHot(Vec<bool>);

impl MultiHot {
    pub fn from_indices(categories: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; categories];
        for &i in indices {
            if i >= categories {
                return Err(Error::Argument(format!(
                    "category {i} out of range for {categories} categories"
                )));
            }
            bits[i] = true;
        }
        Ok(MultiHot(bits))
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        MultiHot(bits)
    }

    pub fn categories(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Number of shared categories. Errors if the category counts differ.
    pub fn dot(&self, other: &MultiHot) -> Result<usize> {
        if self.0.len() != other.0.len() {
            return Err(Error::shape(
                "label dot",
                format!("{} vs {} categories", self.0.len(), other.0.len()),
            ));
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| **a && **b).count())
    }

    /// Relevance rule used everywhere: at least one shared category.
    pub fn shares_any(&self, other: &MultiHot) -> bool {
        self.0.iter().zip(&other.0).any(|(a, b)| *a && *b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub views: Vec<Vector>,
    pub label: MultiHot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub name: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub views: Vec<ViewSpec>,
    pub categories: usize,
    pub train: Vec<FeatureRecord>,
    pub retrieval: Vec<FeatureRecord>,
    pub query: Vec<FeatureRecord>,
    /// Whether query records also appear (by id) in the retrieval set.
    pub query_in_retrieval: bool,
    /// Generator settings, when the dataset is synthetic.
    pub generator: Option<SynthConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Retrieval,
    Query,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Retrieval, SplitKind::Query];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Retrieval => "retrieval",
            SplitKind::Query => "query",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "retrieval" => Ok(SplitKind::Retrieval),
            "query" => Ok(SplitKind::Query),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

impl DatasetSplit {
    pub fn split(&self, kind: SplitKind) -> &[FeatureRecord] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Retrieval => &self.retrieval,
            SplitKind::Query => &self.query,
        }
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.dim).collect()
    }

    /// Checks every structural invariant; errors name the offending record.
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Config("dataset declares no views".into()));
        }
        if self.categories == 0 {
            return Err(Error::Config("dataset declares zero categories".into()));
        }
        for kind in SplitKind::ALL {
            validate_records(self.split(kind), &self.views, self.categories)
                .map_err(|e| Error::Argument(format!("{} split: {e}", kind.name())))?;
        }
        Ok(())
    }
}

fn validate_records(records: &[FeatureRecord], views: &[ViewSpec], categories: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Argument("split is empty".into()));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Argument(format!("duplicate id {:?}", r.id)));
        }
        if r.views.len() != views.len() {
            return Err(Error::Argument(format!(
                "record {:?} has {} views, expected {}",
                r.id,
                r.views.len(),
                views.len()
            )));
        }
        for (v, spec) in r.views.iter().zip(views) {
            if v.len() != spec.dim {
                return Err(Error::Argument(format!(
                    "record {:?}: view {:?} has dim {}, manifest declares {}",
                    r.id,
                    spec.name,
                    v.len(),
                    spec.dim
                )));
            }
        }
        if r.label.categories() != categories {
            return Err(Error::Argument(format!(
                "record {:?} has {} label slots, expected {categories}",
                r.id,
                r.label.categories()
            )));
        }
        if r.label.count() == 0 {
            return Err(Error::Argument(format!("record {:?} has no category", r.id)));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub categories: usize,
    #[serde(default)]
    pub query_in_retrieval: bool,
    pub views: Vec<ViewSpec>,
    pub splits: ManifestSplits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestSplits {
    pub train: SplitFiles,
    pub retrieval: SplitFiles,
    pub query: SplitFiles,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitFiles {
    /// Dense tensor file, relative to the manifest directory.
    pub features: PathBuf,
    /// `id,labels` CSV sidecar, same row order as `features`.
    pub labels: PathBuf,
}

impl ManifestSplits {
    fn get(&self, kind: SplitKind) -> &SplitFiles {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Retrieval => &self.retrieval,
            SplitKind::Query => &self.query,
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::load(path, format!("bad manifest: {e}")))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::load(
            path,
            format!("unsupported format {:?}, expected {MANIFEST_FORMAT:?}", manifest.format),
        ));
    }
    Ok(manifest)
}

/// Loads a dataset described by a manifest. Splits are read in parallel.
pub fn load_features(manifest_path: &Path) -> Result<DatasetSplit> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut loaded: Vec<Result<Vec<FeatureRecord>>> = SplitKind::ALL
        .par_iter()
        .map(|&kind| {
            let files = manifest.splits.get(kind);
            load_split(base, files, &manifest.views, manifest.categories)
        })
        .collect();
    let query = loaded.pop().expect("three splits")?;
    let retrieval = loaded.pop().expect("three splits")?;
    let train = loaded.pop().expect("three splits")?;
    let split = DatasetSplit {
        views: manifest.views,
        categories: manifest.categories,
        train,
        retrieval,
        query,
        query_in_retrieval: manifest.query_in_retrieval,
        generator: manifest.generator,
    };
    split
        .validate()
        .map_err(|e| Error::load(manifest_path, e.to_string()))?;
    Ok(split)
}

/// Loads a single split of a manifest without materializing the others.
pub fn load_split_from_manifest(manifest_path: &Path, kind: SplitKind) -> Result<(Manifest, Vec<FeatureRecord>)> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let records = load_split(base, manifest.splits.get(kind), &manifest.views, manifest.categories)?;
    validate_records(&records, &manifest.views, manifest.categories)
        .map_err(|e| Error::load(manifest_path, format!("{} split: {e}", kind.name())))?;
    Ok((manifest, records))
}

fn load_split(
    base: &Path,
    files: &SplitFiles,
    views: &[ViewSpec],
    categories: usize,
) -> Result<Vec<FeatureRecord>> {
    let labels_path = base.join(&files.labels);
    let meta = read_label_sidecar(&labels_path, categories)?;
    let tensor_path = base.join(&files.features);
    let (dims, values) = read_tensor(&tensor_path, meta.len())?;

    let declared: Vec<usize> = views.iter().map(|v| v.dim).collect();
    if dims != declared {
        let (vi, (&got, &want)) = dims
            .iter()
            .zip(&declared)
            .enumerate()
            .find(|(_, (a, b))| a != b)
            .unwrap_or((0, (&dims.len(), &declared.len())));
        let first = meta.first().map_or("<none>", |(id, _)| id.as_str());
        return Err(Error::load(
            &tensor_path,
            format!(
                "dim mismatch at record {first:?}: view {:?} has dim {got}, manifest declares {want}",
                views.get(vi).map_or("?", |v| v.name.as_str())
            ),
        ));
    }
    let width: usize = dims.iter().sum();
    let mut records = Vec::with_capacity(meta.len());
    for (row, (id, label)) in meta.into_iter().enumerate() {
        let flat = &values[row * width..(row + 1) * width];
        if let Some(bad) = flat.iter().find(|v| !v.is_finite()) {
            return Err(Error::load(
                &tensor_path,
                format!("record {id:?} contains non-finite value {bad}"),
            ));
        }
        let mut offset = 0;
        let mut rec_views = Vec::with_capacity(dims.len());
        for &d in &dims {
            rec_views.push(Vector::new(flat[offset..offset + d].to_vec())?);
            offset += d;
        }
        records.push(FeatureRecord {
            id,
            views: rec_views,
            label,
        });
    }
    Ok(records)
}

fn read_label_sidecar(path: &Path, categories: usize) -> Result<Vec<(String, MultiHot)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::load(path, e.to_string()))?;
        if row.len() != 2 {
            return Err(Error::load(path, format!("row {line}: expected 2 fields")));
        }
        let id = row[0].to_string();
        let mut indices = Vec::new();
        for tok in row[1].split(';').filter(|t| !t.is_empty()) {
            let i: usize = tok
                .trim()
                .parse()
                .map_err(|_| Error::load(path, format!("record {id:?}: bad category {tok:?}")))?;
            indices.push(i);
        }
        let label = MultiHot::from_indices(categories, &indices)
            .map_err(|e| Error::load(path, format!("record {id:?}: {e}")))?;
        out.push((id, label));
    }
    Ok(out)
}

fn read_tensor(path: &Path, expected_rows: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let file = fs::File::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut r = BufReader::new(file);
    let bad = |reason: String| Error::load(path, reason);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != TENSOR_MAGIC {
        return Err(bad("not a feature tensor (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf).map_err(|e| bad(e.to_string()))?;
    let n_views = u32::from_le_bytes(u32buf) as usize;
    let mut dims = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        r.read_exact(&mut u32buf).map_err(|e| bad(e.to_string()))?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    r.read_exact(&mut u64buf).map_err(|e| bad(e.to_string()))?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    if rows != expected_rows {
        return Err(bad(format!(
            "tensor has {rows} rows but label sidecar has {expected_rows}"
        )));
    }
    let width: usize = dims.iter().sum();
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| bad(e.to_string()))?;
    if raw.len() != rows * width * 4 {
        return Err(bad(format!(
            "payload is {} bytes, expected {}",
            raw.len(),
            rows * width * 4
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((dims, values))
}

/// Writes `split` as a manifest plus per-split tensor and label files in
/// `dir`. Returns the manifest path. Values are narrowed to `f32`.
pub fn write_features(split: &DatasetSplit, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = |kind: SplitKind| SplitFiles {
        features: PathBuf::from(format!("{}.f32", kind.name())),
        labels: PathBuf::from(format!("{}.labels.csv", kind.name())),
    };
    for kind in SplitKind::ALL {
        let f = files(kind);
        write_tensor(&dir.join(&f.features), split.split(kind), &split.view_dims())?;
        write_label_sidecar(&dir.join(&f.labels), split.split(kind))?;
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        categories: split.categories,
        query_in_retrieval: split.query_in_retrieval,
        views: split.views.clone(),
        splits: ManifestSplits {
            train: files(SplitKind::Train),
            retrieval: files(SplitKind::Retrieval),
            query: files(SplitKind::Query),
        },
        generator: split.generator.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_tensor(path: &Path, records: &[FeatureRecord], dims: &[usize]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(TENSOR_MAGIC)?;
    put(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        put(&(d as u32).to_le_bytes())?;
    }
    put(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        for v in &r.views {
            for &x in v.as_slice() {
                put(&(x as f32).to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_label_sidecar(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::load(path, e.to_string()))?;
    let io = |e: csv::Error| Error::load(path, e.to_string());
    w.write_record(["id", "labels"]).map_err(io)?;
    for r in records {
        let labels = r
            .label
            .indices()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([r.id.as_str(), labels.as_str()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Settings for [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub categories: usize,
    pub view_dims: Vec<usize>,
    pub train: usize,
    pub retrieval: usize,
    pub query: usize,
    /// Per-component Gaussian noise standard deviation.
    pub sigma: f64,
    /// Probability that a sample carries a second category.
    pub multi_label_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            categories: 4,
            view_dims: vec![512, 512],
            train: 800,
            retrieval: 800,
            query: 200,
            sigma: 0.1,
            multi_label_prob: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("categories", self.categories),
            ("views", self.view_dims.len()),
            ("train", self.train),
            ("retrieval", self.retrieval),
            ("query", self.query),
        ];
        for (name, c) in counts {
            if c == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.view_dims.contains(&0) {
            return Err(Error::Config("view dims must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.multi_label_prob) {
            return Err(Error::Config(format!(
                "multi_label_prob must be in [0, 1], got {}",
                self.multi_label_prob
            )));
        }
        Ok(())
    }
}

/// Clustered multi-view data: each category owns a random unit anchor per
/// view, and a sample is the mean of its categories' anchors plus isotropic
/// Gaussian noise. Values are rounded to `f32` so a write/load cycle is
/// lossless.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, &[0xA11C]);
    let anchors: Vec<Vec<Vec<f64>>> = (0..cfg.categories)
        .map(|_| {
            cfg.view_dims
                .iter()
                .map(|&d| {
                    let mut a: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    a.iter_mut().for_each(|x| *x /= norm);
                    a
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Config(e.to_string()))?;

    let make = |prefix: &str, count: usize, stream: u64| -> Result<Vec<FeatureRecord>> {
        let mut rng = stream_rng(cfg.seed, &[stream]);
        let width = count.to_string().len().max(5);
        (0..count)
            .map(|i| {
                let primary = rng.random_range(0..cfg.categories);
                let mut cats = vec![primary];
                if cfg.categories > 1 && rng.random_bool(cfg.multi_label_prob) {
                    let mut second = rng.random_range(0..cfg.categories - 1);
                    if second >= primary {
                        second += 1;
                    }
                    cats.push(second);
                }
                let scale = 1.0 / cats.len() as f64;
                let views = cfg
                    .view_dims
                    .iter()
                    .enumerate()
                    .map(|(v, &d)| {
                        let data = (0..d)
                            .map(|k| {
                                let mean: f64 = cats.iter().map(|&c| anchors[c][v][k]).sum::<f64>() * scale;
                                (mean + noise.sample(&mut rng)) as f32 as f64
                            })
                            .collect();
                        Vector::new(data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(FeatureRecord {
                    id: format!("{prefix}-{i:0width$}"),
                    views,
                    label: MultiHot::from_indices(cfg.categories, &cats)?,
                })
            })
            .collect()
    };
    let train = make("train", cfg.train, 1)?;
    let retrieval = make("ret", cfg.retrieval, 2)?;
    let query = make("query", cfg.query, 3)?;
    let views = cfg
        .view_dims
        .iter()
        .enumerate()
        .map(|(i, &dim)| ViewSpec {
            name: match i {
                0 => "image".to_string(),
                1 => "text".to_string(),
                _ => format!("view{i}"),
            },
            dim,
        })
        .collect();
    Ok(DatasetSplit {
        views,
        categories: cfg.categories,
        train,
        retrieval,
        query,
        query_in_retrieval: false,
        generator: Some(cfg.clone()),
    })
}

/// Index batches for one epoch: a `(seed, epoch)`-seeded shuffle cut into
/// consecutive full batches. The short remainder is dropped.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size must be at least 2, got {batch_size}")));
    }
    if batch_size > len {
        return Err(Error::Config(format!(
            "batch size {batch_size} exceeds split size {len}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream_rng(seed, &[0x5EED, epoch]));
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn batches(
    records: &[FeatureRecord],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<&FeatureRecord>>> {
    Ok(batch_indices(records.len(), batch_size, seed, epoch)?
        .into_iter()
        .map(|b| b.into_iter().map(|i| &records[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetSplit {
        let rec = |id: &str, a: &[f64], b: &[f64], cats: &[usize]| FeatureRecord {
            id: id.to_string(),
            views: vec![Vector::new(a.to_vec()).unwrap(), Vector::new(b.to_vec()).unwrap()],
            label: MultiHot::from_indices(2, cats).unwrap(),
        };
        let three = vec![
            rec("a", &[0.5, -1.0, 2.0, 0.25], &[1.0, 0.0, -0.5], &[0]),
            rec("b", &[1.5, 1.0, -2.0, 0.75], &[0.0, 0.125, 3.0], &[1]),
            rec("c", &[0.0, 0.0, 0.0, 1.0], &[2.0, 2.0, 2.0], &[0, 1]),
        ];
        DatasetSplit {
            views: vec![
                ViewSpec { name: "image".into(), dim: 4 },
                ViewSpec { name: "text".into(), dim: 3 },
            ],
            categories: 2,
            train: three.clone(),
            retrieval: three.clone(),
            query: three,
            query_in_retrieval: true,
            generator: None,
        }
    }

    #[test]
    fn manifest_round_trip_preserves_shapes_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let split = tiny();
        let manifest = write_features(&split, dir.path()).unwrap();
        let loaded = load_features(&manifest).unwrap();
        assert_eq!(loaded.view_dims(), vec![4, 3]);
        assert_eq!(loaded.train.len(), 3);
        assert_eq!(loaded.categories, 2);
        assert_eq!(loaded, split);
    }

    #[test]
    fn declared_dim_mismatch_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut split = tiny();
        split.views[0].dim = 4;
        let manifest = write_features(&split, dir.path()).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        // declare 5 while the tensor holds 4
        let edited = text.replacen("dim = 4", "dim = 5", 1);
        fs::write(&manifest, edited).unwrap();
        let err = load_features(&manifest).unwrap_err().to_string();
        assert!(err.contains("dim mismatch"), "{err}");
        assert!(err.contains("\"a\""), "{err}");
    }

    #[test]
    fn in_memory_dim_mismatch_names_record() {
        let mut split = tiny();
        split.query[1].views[0] = Vector::zeros(5);
        let err = split.validate().unwrap_err().to_string();
        assert!(err.contains("\"b\"") && err.contains("dim 5"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut split = tiny();
        split.train[2].id = "a".into();
        assert!(split.validate().unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn missing_file_and_empty_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_features(&tiny(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("query.f32")).unwrap();
        assert!(matches!(load_features(&manifest), Err(Error::Load { .. })));

        let mut empty = tiny();
        empty.query.clear();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn non_finite_feature_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_features(&tiny(), dir.path()).unwrap();
        let path = dir.path().join("train.f32");
        let mut bytes = fs::read(&path).unwrap();
        let header = 8 + 4 + 4 * 2 + 8;
        bytes[header..header + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let err = load_features(&manifest).unwrap_err().to_string();
        assert!(err.contains("non-finite") && err.contains("\"a\""), "{err}");
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig { train: 20, retrieval: 20, query: 5, ..SynthConfig::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn zero_noise_collapses_each_category() {
        let cfg = SynthConfig {
            sigma: 1e-12,
            multi_label_prob: 0.0,
            view_dims: vec![6, 5],
            train: 60,
            retrieval: 1,
            query: 1,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for a in &ds.train {
            for b in &ds.train {
                if a.label == b.label {
                    assert_eq!(a.views, b.views);
                }
            }
        }
    }

    #[test]
    fn synthetic_round_trips_through_files() {
        let cfg = SynthConfig { train: 10, retrieval: 8, query: 4, view_dims: vec![7, 3], multi_label_prob: 0.3, ..SynthConfig::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_features(&ds, dir.path()).unwrap();
        assert_eq!(load_features(&manifest).unwrap(), ds);
    }

    #[test]
    fn batching_drops_remainder() {
        let b = batch_indices(10, 4, 3, 0).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| x.len() == 4));
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 8);
        assert_eq!(b, batch_indices(10, 4, 3, 0).unwrap());
        assert_ne!(b, batch_indices(10, 4, 3, 1).unwrap());
    }

    #[test]
    fn batching_rejects_bad_sizes() {
        assert!(batch_indices(10, 11, 0, 0).is_err());
        assert!(batch_indices(10, 1, 0, 0).is_err());
    }

    #[test]
    fn label_similarity_helpers() {
        let a = MultiHot::from_indices(3, &[0, 2]).unwrap();
        let b = MultiHot::from_indices(3, &[2]).unwrap();
        let c = MultiHot::from_indices(3, &[1]).unwrap();
        assert!(a.shares_any(&b));
        assert!(!a.shares_any(&c));
        assert_eq!(a.dot(&a).unwrap(), 2);
        assert!(a.dot(&MultiHot::from_indices(2, &[0]).unwrap()).is_err());
    }
}
