//! Datasets, the CIFAR-10 binary codec, synthetic blobs and client sharding.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::model::Batch;
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
pub const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Cifar10,
    Synthetic,
}

/// Immutable labelled feature matrix with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    features: Vec<S>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    provenance: Provenance,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        features: Vec<S>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config(
                "data.dims",
                "feature dimension must be at least 1",
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::InvalidInput(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {} of sample {i} is not below {num_classes}",
                labels[i]
            )));
        }
        let unit = S::zero()..=S::one();
        if let Some(i) = features.iter().position(|v| !unit.contains(v)) {
            return Err(Error::InvalidInput(format!(
                "feature value {} at flat index {i} is outside [0, 1]",
                features[i]
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn as_batch(&self) -> Batch<'_, S> {
        Batch::new(&self.features, &self.labels, self.dim).expect("dataset rows are consistent")
    }

    /// Splits off the last `tail` samples.
    pub fn split_tail(&self, tail: usize) -> Result<(Self, Self)> {
        if tail > self.len() {
            return Err(Error::InvalidInput(format!(
                "cannot split {tail} samples off a dataset of {}",
                self.len()
            )));
        }
        let head = self.len() - tail;
        let take = |range: std::ops::Range<usize>| Self {
            features: self.features[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels[range].to_vec(),
            dim: self.dim,
            num_classes: self.num_classes,
            provenance: self.provenance,
        };
        Ok((take(0..head), take(head..self.len())))
    }

    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
        let mut out = Self {
            features: Vec::new(),
            labels: Vec::new(),
            dim: first.dim,
            num_classes: first.num_classes,
            provenance: first.provenance,
        };
        for p in parts {
            if p.dim != out.dim || p.num_classes != out.num_classes {
                return Err(Error::InvalidInput("datasets have different shapes".into()));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }
}

/// Decodes CIFAR-10 binary records: one label byte followed by 1024 red,
/// 1024 green and 1024 blue bytes (row-major 32x32), scaled by `1/255`.
pub fn parse_cifar10<S: Scalar>(bytes: &[u8]) -> Result<Dataset<S>> {
    let rem = bytes.len() % CIFAR_RECORD;
    if rem != 0 {
        return Err(FormatError::Length {
            len: bytes.len(),
            record: CIFAR_RECORD,
            offset: bytes.len() - rem,
        }
        .into());
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * CIFAR_PIXELS);
    let scale = 1.0 / 255.0;
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = chunk[0];
        if label as usize >= CIFAR_CLASSES {
            return Err(FormatError::Label { record, label }.into());
        }
        labels.push(label as usize);
        features.extend(
            chunk[1..]
                .iter()
                .map(|&p| S::from_f64_lossy(p as f64 * scale)),
        );
    }
    Ok(Dataset {
        features,
        labels,
        dim: CIFAR_PIXELS,
        num_classes: CIFAR_CLASSES,
        provenance: Provenance::Cifar10,
    })
}

/// Inverse of [`parse_cifar10`]; features are quantized to the nearest of 256 levels.
pub fn encode_cifar10<S: Scalar>(data: &Dataset<S>) -> Result<Vec<u8>> {
    if data.dim() != CIFAR_PIXELS {
        return Err(Error::InvalidInput(format!(
            "CIFAR-10 records hold {CIFAR_PIXELS} features, dataset has {}",
            data.dim()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for i in 0..data.len() {
        let label = data.label(i);
        if label >= CIFAR_CLASSES {
            return Err(Error::InvalidInput(format!(
                "label {label} does not fit CIFAR-10"
            )));
        }
        out.push(label as u8);
        out.extend(
            data.row(i)
                .iter()
                .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

fn read_cifar_file<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes)
}

/// Loads `data_batch_1..5.bin` as the training set and `test_batch.bin` as the test set.
pub fn load_cifar_dir<S: Scalar>(dir: impl AsRef<Path>) -> Result<(Dataset<S>, Dataset<S>)> {
    let dir = dir.as_ref();
    let train = CIFAR_TRAIN_FILES
        .iter()
        .map(|f| read_cifar_file(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let test = read_cifar_file(&dir.join(CIFAR_TEST_FILE))?;
    Ok((Dataset::concat(&train)?, test))
}

/// Gaussian blobs (unit variance) around one centroid per class.
///
/// Centroids are pairwise at least `separation` apart in the raw space; the
/// whole set is then min-max scaled per feature into `[0, 1]`. Labels are
/// balanced to within one sample and the sample order is shuffled.
pub fn make_synthetic<S: Scalar>(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<S>> {
    if dim < 1 {
        return Err(Error::config("data.dims", "must be at least 1"));
    }
    if classes < 1 {
        return Err(Error::config("data.classes", "must be at least 1"));
    }
    if n < classes {
        return Err(Error::config(
            "data.samples",
            format!("{n} samples cannot cover {classes} classes"),
        ));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::config(
            "data.separation",
            "must be a finite value >= 0",
        ));
    }
    let mut rng = rng::stream(seed, Stream::Data, 0);
    let centroids = place_centroids(dim, classes, separation, &mut rng);

    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut raw = Vec::with_capacity(n * dim);
    for &y in &labels {
        for c in &centroids[y] {
            let noise: f64 = rng.sample(StandardNormal);
            raw.push(c + noise);
        }
    }

    let mut features = vec![S::zero(); n * dim];
    for j in 0..dim {
        let (lo, hi) = (0..n)
            .map(|i| raw[i * dim + j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        for i in 0..n {
            let v = if span > 0.0 {
                (raw[i * dim + j] - lo) / span
            } else {
                0.0
            };
            features[i * dim + j] = S::from_f64_lossy(v.clamp(0.0, 1.0));
        }
    }
    Dataset::new(features, labels, dim, classes, Provenance::Synthetic)
}

fn place_centroids<R: Rng + ?Sized>(
    dim: usize,
    classes: usize,
    separation: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    if classes <= dim {
        // scaled basis vectors are exactly `separation` apart
        let scale = separation / std::f64::consts::SQRT_2;
        return (0..classes)
            .map(|k| {
                let mut c = vec![0.0; dim];
                c[k] = scale;
                c
            })
            .collect();
    }
    let mut radius = separation.max(1.0) * classes as f64;
    loop {
        let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while centroids.len() < classes && attempts < 10_000 {
            attempts += 1;
            let c: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-radius..=radius))
                .collect();
            let far = centroids.iter().all(|o| {
                o.iter()
                    .zip(&c)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    >= separation
            });
            if far {
                centroids.push(c);
            }
        }
        if centroids.len() == classes {
            return centroids;
        }
        radius *= 2.0;
    }
}

/// Disjoint index lists, one per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }
}

/// Shuffles `0..ds.len()` with the seed and deals the indices round-robin to `num_clients`.
pub fn partition<S: Scalar>(ds: &Dataset<S>, num_clients: usize, seed: u64) -> Result<Partition> {
    partition_indices(ds.len(), num_clients, seed)
}

pub fn partition_indices(n: usize, num_clients: usize, seed: u64) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::config("num_clients", "must be at least 1"));
    }
    if num_clients > n {
        return Err(Error::config(
            "num_clients",
            format!("{num_clients} clients exceed the {n} available samples"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Partition, 0));
    let mut assignments = vec![Vec::with_capacity(n / num_clients + 1); num_clients];
    for (i, idx) in order.into_iter().enumerate() {
        assignments[i % num_clients].push(idx);
    }
    Ok(Partition { assignments })
}

/// Splits a shard into `(train, holdout)`: the holdout is the last fifth.
///
/// Shards with fewer than five samples use the whole shard for both roles.
pub fn split_holdout(shard: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let holdout = shard.len() / 5;
    if holdout == 0 {
        return (shard.to_vec(), shard.to_vec());
    }
    let cut = shard.len() - holdout;
    (shard[..cut].to_vec(), shard[cut..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_record() {
        let mut bytes = vec![255u8; CIFAR_RECORD];
        bytes[0] = 7;
        let ds = parse_cifar10::<f32>(&bytes).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), 7);
        assert!(ds.row(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn full_file_size() {
        assert_eq!(10_000 * CIFAR_RECORD, 30_730_000);
        let bytes = vec![3u8; 10_000 * CIFAR_RECORD];
        let ds = parse_cifar10::<f32>(&bytes).unwrap();
        assert_eq!(ds.len(), 10_000);
    }

    #[test]
    fn channel_planes_keep_their_order() {
        let mut bytes = vec![0u8; CIFAR_RECORD];
        bytes[1] = 10; // first red pixel
        bytes[1 + 1024] = 20; // first green pixel
        bytes[1 + 2048 + 1023] = 30; // last blue pixel
        let ds = parse_cifar10::<f64>(&bytes).unwrap();
        assert_eq!(ds.row(0)[0], 10.0 / 255.0);
        assert_eq!(ds.row(0)[1024], 20.0 / 255.0);
        assert_eq!(ds.row(0)[3071], 30.0 / 255.0);
    }

    #[test]
    fn bad_length_reports_offset() {
        let err = parse_cifar10::<f32>(&vec![0u8; CIFAR_RECORD + 5]).unwrap_err();
        match err {
            Error::Format(FormatError::Length { len, offset, .. }) => {
                assert_eq!(len, CIFAR_RECORD + 5);
                assert_eq!(offset, CIFAR_RECORD);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_label_reports_record() {
        let mut bytes = vec![0u8; 3 * CIFAR_RECORD];
        bytes[2 * CIFAR_RECORD] = 10;
        let err = parse_cifar10::<f32>(&bytes).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::Label {
                record: 2,
                label: 10
            })
        ));
    }

    #[test]
    fn load_dir_reads_all_batches() {
        let dir = tempfile::tempdir().unwrap();
        for (i, f) in CIFAR_TRAIN_FILES.iter().enumerate() {
            let mut rec = vec![0u8; 2 * CIFAR_RECORD];
            rec[0] = i as u8;
            std::fs::write(dir.path().join(f), rec).unwrap();
        }
        std::fs::write(dir.path().join(CIFAR_TEST_FILE), vec![9u8; CIFAR_RECORD]).unwrap();
        let (train, test) = load_cifar_dir::<f32>(dir.path()).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(train.label(2), 1);
        assert_eq!(test.len(), 1);
        assert_eq!(test.label(0), 9);
    }

    #[test]
    fn one_sample_per_class() {
        let ds = make_synthetic::<f32>(10, 4, 10, 2.0, 3).unwrap();
        let mut labels = ds.labels().to_vec();
        labels.sort_unstable();
        assert_eq!(labels, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic::<f32>(300, 8, 3, 5.0, 77).unwrap();
        let b = make_synthetic::<f32>(300, 8, 3, 5.0, 77).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic::<f32>(300, 8, 3, 5.0, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_is_balanced_and_scaled() {
        let ds = make_synthetic::<f64>(1001, 5, 4, 5.0, 1).unwrap();
        let mut counts = [0usize; 4];
        for &y in ds.labels() {
            counts[y] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(ds.features().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn more_classes_than_dims_still_separates_centroids() {
        let mut rng = rng::seeded(4);
        let cs = place_centroids(2, 7, 3.0, &mut rng);
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                let d: f64 = cs[i]
                    .iter()
                    .zip(&cs[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 3.0);
            }
        }
    }

    #[test]
    fn zero_dims_is_config_error() {
        assert!(matches!(
            make_synthetic::<f32>(10, 0, 2, 1.0, 1),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn even_partition() {
        let p = partition_indices(100, 10, 5).unwrap();
        assert!(p.assignments.iter().all(|a| a.len() == 10));
    }

    #[test]
    fn uneven_partition() {
        let p = partition_indices(101, 10, 5).unwrap();
        let mut sizes: Vec<usize> = p.assignments.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [10, 10, 10, 10, 10, 10, 10, 10, 10, 11]);
    }

    #[test]
    fn too_many_clients() {
        assert!(matches!(
            partition_indices(5, 6, 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn holdout_is_the_tail_fifth() {
        let shard: Vec<usize> = (0..20).collect();
        let (train, hold) = split_holdout(&shard);
        assert_eq!(train, (0..16).collect::<Vec<_>>());
        assert_eq!(hold, vec![16, 17, 18, 19]);
        let (t, h) = split_holdout(&[4, 2]);
        assert_eq!((t, h), (vec![4, 2], vec![4, 2]));
    }
}
