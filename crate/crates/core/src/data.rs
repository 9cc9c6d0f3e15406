//! Labeled image datasets: MNIST IDX ingestion, TLNS dataset containers and a
//! seeded synthetic generator.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::nn::Domain;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    instances: Tensor,
    labels: Vec<usize>,
    ids: Vec<usize>,
    class_names: Vec<String>,
    pub domain: Domain,
    pub split: Split,
}

impl LabeledDataset {
    /// `instances` is `N × C × H × W` (or `N × F`); ids default to `0..N`.
    pub fn new(
        instances: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
        domain: Domain,
        split: Split,
    ) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(instances, labels, ids, class_names, domain, split)
    }

    pub fn with_ids(
        instances: Tensor,
        labels: Vec<usize>,
        ids: Vec<usize>,
        class_names: Vec<String>,
        domain: Domain,
        split: Split,
    ) -> Result<Self> {
        if instances.rank() < 2 || instances.shape()[0] != labels.len() || ids.len() != labels.len() {
            return Err(Error::precondition(format!(
                "instance batch {:?} does not match {} labels / {} ids",
                instances.shape(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidClass {
                class: bad,
                count: class_names.len(),
            });
        }
        Ok(Self {
            instances,
            labels,
            ids,
            class_names,
            domain,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn instances(&self) -> &Tensor {
        &self.instances
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn instance(&self, index: usize) -> &[f32] {
        self.instances.outer(index)
    }

    pub fn instance_shape(&self) -> &[usize] {
        &self.instances.shape()[1..]
    }

    /// Positions (not ids) of the instances labeled `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// New dataset with the listed positions, preserving their ids.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::precondition("subset must not be empty"));
        }
        let items: Vec<&[f32]> = indices.iter().map(|&i| self.instance(i)).collect();
        Self::with_ids(
            Tensor::stack(self.instance_shape(), &items)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.ids[i]).collect(),
            self.class_names.clone(),
            self.domain,
            self.split,
        )
    }

    /// Instances of `class`, as a dataset.
    pub fn class_subset(&self, class: usize) -> Result<Self> {
        let idx = self.class_indices(class);
        if idx.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        self.subset(&idx)
    }

    /// First `limit` instances of `class` (all when `limit` is `None`).
    pub fn class_sample(&self, class: usize, limit: Option<usize>) -> Result<Self> {
        let mut idx = self.class_indices(class);
        if let Some(limit) = limit {
            idx.truncate(limit);
        }
        if idx.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        self.subset(&idx)
    }

    pub fn with_tags(mut self, domain: Domain, split: Split) -> Self {
        self.domain = domain;
        self.split = split;
        self
    }

    /// Rotate every image plane by 90° counter-clockwise. Square images only.
    pub fn rotate90(&self) -> Result<Self> {
        let shape = self.instance_shape().to_vec();
        let [c, h, w] = shape[..] else {
            return Err(Error::precondition("rotation needs C×H×W instances"));
        };
        if h != w {
            return Err(Error::precondition("rotation needs square images"));
        }
        let mut data = Vec::with_capacity(self.instances.len());
        for i in 0..self.len() {
            let img = self.instance(i);
            for ch in 0..c {
                let plane = &img[ch * h * w..(ch + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        // out(y, x) = in(x, w - 1 - y)
                        data.push(plane[x * w + (w - 1 - y)]);
                    }
                }
            }
        }
        let mut out = self.clone();
        out.instances = Tensor::new(self.instances.shape().to_vec(), data)?;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = DatasetBody {
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            class_names: self.class_names.clone(),
            domain: self.domain,
            split: self.split,
        };
        container::encode("dataset", &body, &[("instances", &self.instances)])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut decoded = container::decode::<DatasetBody>(bytes, "dataset")?;
        let instances = decoded.take("instances")?;
        let b = decoded.body;
        Self::with_ids(instances, b.labels, b.ids, b.class_names, b.domain, b.split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetBody {
    labels: Vec<usize>,
    ids: Vec<usize>,
    class_names: Vec<String>,
    domain: Domain,
    split: Split,
}

/// Raw IDX image/label pair, pixels scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct IdxData {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<IdxData> {
    if be_u32(images, 0)? != 0x0000_0803 {
        return Err(Error::Format("bad IDX image magic (expected 0x00000803)".into()));
    }
    if be_u32(labels, 0)? != 0x0000_0801 {
        return Err(Error::Format("bad IDX label magic (expected 0x00000801)".into()));
    }
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let n_labels = be_u32(labels, 4)? as usize;
    if n != n_labels {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }
    let pixel_bytes = images
        .get(16..16 + n * rows * cols)
        .ok_or_else(|| Error::Format("truncated IDX image payload".into()))?;
    let label_bytes = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::Format("truncated IDX label payload".into()))?;
    Ok(IdxData {
        rows,
        cols,
        pixels: pixel_bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        labels: label_bytes.to_vec(),
    })
}

pub fn read_idx(images: &Path, labels: &Path) -> Result<IdxData> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    parse_idx(&img, &lab)
}

impl IdxData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Select, per allowed digit, the occurrences `offset..offset + count` (in
    /// file order). Labels are remapped to positions in `classes`; ids are file
    /// positions.
    pub fn select(
        &self,
        classes: &[u8],
        offset: usize,
        count: usize,
        domain: Domain,
        split: Split,
    ) -> Result<LabeledDataset> {
        let plane = self.rows * self.cols;
        let mut seen = vec![0usize; classes.len()];
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for (pos, &digit) in self.labels.iter().enumerate() {
            let Some(class) = classes.iter().position(|&c| c == digit) else {
                continue;
            };
            let k = seen[class];
            seen[class] += 1;
            if k < offset || k >= offset + count {
                continue;
            }
            data.extend_from_slice(&self.pixels[pos * plane..(pos + 1) * plane]);
            labels.push(class);
            ids.push(pos);
        }
        for (class, &n) in seen.iter().enumerate() {
            if n < offset + count {
                return Err(Error::precondition(format!(
                    "class {} has only {n} instances, need {}",
                    classes[class],
                    offset + count
                )));
            }
        }
        LabeledDataset::with_ids(
            Tensor::new(vec![labels.len(), 1, self.rows, self.cols], data)?,
            labels,
            ids,
            classes.iter().map(|c| c.to_string()).collect(),
            domain,
            split,
        )
    }
}

/// Seeded synthetic image classes: each class is a fixed random prototype
/// (drawn from `prototype_seed`) plus per-instance Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub noise: f32,
    pub prototype_seed: u64,
    pub seed: u64,
}

pub fn synthetic(spec: &SyntheticSpec, domain: Domain, split: Split) -> Result<LabeledDataset> {
    if spec.classes == 0 || spec.per_class == 0 || spec.side < 4 {
        return Err(Error::precondition("synthetic spec needs classes, instances and side >= 4"));
    }
    let plane = spec.side * spec.side;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(spec.prototype_seed);
    let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
    let prototypes: Vec<Vec<f32>> = (0..spec.classes)
        .map(|_| {
            // smooth blobs: random values pooled over a coarse 4×4 grid
            let coarse: Vec<f32> = (0..16).map(|_| unit.sample(&mut proto_rng)).collect();
            (0..plane)
                .map(|p| {
                    let (y, x) = (p / spec.side, p % spec.side);
                    let cy = y * 4 / spec.side;
                    let cx = x * 4 / spec.side;
                    (coarse[cy * 4 + cx] * 0.5 + 0.5).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0f32, spec.noise.max(0.0)).map_err(|e| Error::precondition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(spec.classes * spec.per_class * plane);
    let mut labels = Vec::new();
    for _ in 0..spec.per_class {
        for (class, proto) in prototypes.iter().enumerate() {
            data.extend(proto.iter().map(|&v| v + noise.sample(&mut rng)));
            labels.push(class);
        }
    }
    LabeledDataset::new(
        Tensor::new(vec![labels.len(), 1, spec.side, spec.side], data)?,
        labels,
        (0..spec.classes).map(|c| format!("class{c}")).collect(),
        domain,
        split,
    )
}

/// Grayscale PNG of the first channel, values clamped to `[0, 1]`, at most 64×64.
pub fn thumbnail_png(instance: &[f32], shape: &[usize]) -> Result<Vec<u8>> {
    let (h, w) = match shape {
        [_, h, w] => (*h, *w),
        [f] => (1, *f),
        _ => return Err(Error::precondition("thumbnail needs C×H×W or F")),
    };
    let step = h.max(w).div_ceil(64).max(1);
    let (th, tw) = (h.div_ceil(step), w.div_ceil(step));
    let mut pixels = Vec::with_capacity(th * tw);
    for y in 0..th {
        for x in 0..tw {
            let v = instance[(y * step) * w + x * step].clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() as u8);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, tw as u32, th as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}
