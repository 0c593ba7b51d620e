//! IDX image/label loading (gzip-aware) and leakage-free anomaly splits.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images as a [n, h, w, 1] tensor with pixels scaled to [0, 1], plus one
/// label byte per image.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    /// New set containing the given rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> LabeledImageSet {
        LabeledImageSet {
            images: self.images.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Distinct labels present, ascending.
    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0u8..=255)
            .filter(|&c| seen[c as usize])
            .collect()
    }
}

/// Read a whole file, transparently gunzipping when the gzip magic bytes
/// are present.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::dataset(path.display().to_string(), "file not found")
        } else {
            Error::Io(e)
        }
    })?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::dataset(path.display().to_string(), format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::dataset(path.display().to_string(), format!("truncated at byte {at}")))
}

/// Parse one IDX image file and one IDX label file into a labeled set.
/// Big-endian headers; image magic 0x00000803 ([n, rows, cols] of u8),
/// label magic 0x00000801 ([n] of u8). Image and label counts must agree.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let ibuf = read_maybe_gz(images_path)?;
    let magic = be_u32(&ibuf, 0, images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::dataset(
            images_path.display().to_string(),
            format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(&ibuf, 4, images_path)? as usize;
    let h = be_u32(&ibuf, 8, images_path)? as usize;
    let w = be_u32(&ibuf, 12, images_path)? as usize;
    let want = 16 + n * h * w;
    if ibuf.len() != want {
        return Err(Error::dataset(
            images_path.display().to_string(),
            format!("{} bytes for {n} images of {h}x{w}, expected {want}", ibuf.len()),
        ));
    }

    let lbuf = read_maybe_gz(labels_path)?;
    let magic = be_u32(&lbuf, 0, labels_path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::dataset(
            labels_path.display().to_string(),
            format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let ln = be_u32(&lbuf, 4, labels_path)? as usize;
    if lbuf.len() != 8 + ln {
        return Err(Error::dataset(
            labels_path.display().to_string(),
            format!("{} bytes for {ln} labels, expected {}", lbuf.len(), 8 + ln),
        ));
    }
    if ln != n {
        return Err(Error::dataset(
            labels_path.display().to_string(),
            format!("{ln} labels for {n} images"),
        ));
    }

    let pixels: Vec<f32> = ibuf[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(LabeledImageSet {
        images: Tensor::new(vec![n, h, w, 1], pixels)?,
        labels: lbuf[8..].to_vec(),
    })
}

/// One-class-held-out anomaly benchmark derived from a train/test pair.
///
/// Train: every train-partition image whose label is not the anomaly class.
/// Test: every test-partition image of the anomaly class, plus an equally
/// sized, class-stratified, seeded subsample of test-partition normal
/// images. `test_anomaly_flags[i]` marks test row i as an anomaly.
#[derive(Debug, Clone)]
pub struct AnomalySplit {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
    pub test_anomaly_flags: Vec<bool>,
    pub anomaly_class: u8,
    /// Ascending labels of the normal classes; class index = position here.
    pub normal_classes: Vec<u8>,
}

impl AnomalySplit {
    /// Position of a label in `normal_classes`.
    pub fn class_index(&self, label: u8) -> Result<usize> {
        self.normal_classes
            .binary_search(&label)
            .map_err(|_| Error::config(format!("label {label} is not a normal class")))
    }
}

pub fn make_anomaly_split(
    train: &LabeledImageSet,
    test: &LabeledImageSet,
    anomaly_class: u8,
    seed: u64,
) -> Result<AnomalySplit> {
    let normal_classes: Vec<u8> = train
        .classes()
        .into_iter()
        .filter(|&c| c != anomaly_class)
        .collect();
    if normal_classes.is_empty() {
        return Err(Error::config(
            "no normal classes left after holding out the anomaly class",
        ));
    }

    let train_idx: Vec<usize> = (0..train.len())
        .filter(|&i| train.labels[i] != anomaly_class)
        .collect();

    let anomaly_idx: Vec<usize> = (0..test.len())
        .filter(|&i| test.labels[i] == anomaly_class)
        .collect();
    if anomaly_idx.is_empty() {
        return Err(Error::config(format!(
            "anomaly class {anomaly_class} is absent from the test partition"
        )));
    }

    // per-class pools of normal test images
    let mut pools: Vec<Vec<usize>> = normal_classes.iter().map(|_| Vec::new()).collect();
    for i in 0..test.len() {
        if let Ok(ci) = normal_classes
            .binary_search(&test.labels[i])
            .map_err(|_| ())
        {
            pools[ci].push(i);
        }
    }

    let normal_idx = stratified_draw(&mut pools, anomaly_idx.len(), seed)?;

    let mut test_rows = anomaly_idx.clone();
    test_rows.extend_from_slice(&normal_idx);
    let flags: Vec<bool> = (0..test_rows.len()).map(|i| i < anomaly_idx.len()).collect();

    Ok(AnomalySplit {
        train: train.select(&train_idx),
        test: test.select(&test_rows),
        test_anomaly_flags: flags,
        anomaly_class,
        normal_classes,
    })
}

/// Draw `total` items spread as evenly as possible across the pools.
/// Remainders and all within-pool choices are seeded; pools that are too
/// small pass their deficit on to the remaining pools.
fn stratified_draw(pools: &mut [Vec<usize>], total: usize, seed: u64) -> Result<Vec<usize>> {
    let available: usize = pools.iter().map(Vec::len).sum();
    if available < total {
        return Err(Error::config(format!(
            "need {total} normal test images, only {available} available"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = pools.len();
    let mut quota = vec![total / k; k];
    // hand out the remainder to a seeded choice of pools
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    for i in 0..total % k {
        quota[order[i]] += 1;
    }
    // push deficits from small pools onto the rest (iterate until stable)
    loop {
        let mut deficit = 0;
        for (q, pool) in quota.iter_mut().zip(pools.iter()) {
            if *q > pool.len() {
                deficit += *q - pool.len();
                *q = pool.len();
            }
        }
        if deficit == 0 {
            break;
        }
        let mut progress = false;
        for &i in &order {
            if deficit == 0 {
                break;
            }
            let headroom = pools[i].len() - quota[i];
            let add = headroom.min(deficit);
            if add > 0 {
                quota[i] += add;
                deficit -= add;
                progress = true;
            }
        }
        if deficit > 0 && !progress {
            return Err(Error::config("stratified draw cannot satisfy the quota"));
        }
    }

    let mut out = Vec::with_capacity(total);
    for (pool, &q) in pools.iter_mut().zip(&quota) {
        pool.shuffle(&mut rng);
        out.extend_from_slice(&pool[..q]);
    }
    Ok(out)
}

/// Seeded choice of `n` distinct row indices (ascending), for capping the
/// training set at desk scale.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(&mut rng);
    let mut picked = all[..n].to_vec();
    picked.sort_unstable();
    picked
}

/// Seeded epoch shuffle chopped into batches; the final short batch is kept.
/// The same (seed, epoch) always yields the same order.
pub fn epoch_batch_indices(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
