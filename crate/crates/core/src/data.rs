//! Dataset ingestion: MNIST IDX files, pixel mapping, stratified splits and
//! class-balanced minibatches, plus the four-row XOR table.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::rng::{stream_rng, tag};
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const MNIST_CLASSES: usize = 10;

/// Environment variable naming a directory with the four MNIST IDX files.
pub const MNIST_DIR_ENV: &str = "DAM_MNIST_DIR";

fn idx_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Idx {
        offset,
        message: message.into(),
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_err(offset.min(bytes.len()), format!("truncated before {what}")))
}

/// Returns the input unchanged, or its decompression if it starts with the
/// gzip magic.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| idx_err(0, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

/// Unmapped image bytes, one row of `rows * cols` pixels per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Parses an IDX3 image file (optionally gzip-compressed). Images must be
/// 28×28.
pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    let bytes = maybe_gunzip(bytes)?;
    let magic = read_be_u32(&bytes, 0, "magic")?;
    if magic == LABEL_MAGIC {
        return Err(idx_err(0, "labels magic in image parser"));
    }
    if magic != IMAGE_MAGIC {
        return Err(idx_err(0, format!("bad image magic {magic:#010x}")));
    }
    let count = read_be_u32(&bytes, 4, "image count")? as usize;
    let rows = read_be_u32(&bytes, 8, "row count")? as usize;
    let cols = read_be_u32(&bytes, 12, "column count")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(idx_err(8, format!("expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}")));
    }
    let need = count
        .checked_mul(rows * cols)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| idx_err(4, "image count overflows"))?;
    if bytes.len() < need {
        return Err(idx_err(bytes.len(), format!("truncated payload: need {need} bytes")));
    }
    if bytes.len() > need {
        return Err(idx_err(need, "trailing bytes after image payload"));
    }
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parses an IDX1 label file (optionally gzip-compressed); every label must
/// be a digit 0-9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = maybe_gunzip(bytes)?;
    let magic = read_be_u32(&bytes, 0, "magic")?;
    if magic == IMAGE_MAGIC {
        return Err(idx_err(0, "images magic in label parser"));
    }
    if magic != LABEL_MAGIC {
        return Err(idx_err(0, format!("bad label magic {magic:#010x}")));
    }
    let count = read_be_u32(&bytes, 4, "label count")? as usize;
    let need = count + 8;
    if bytes.len() < need {
        return Err(idx_err(bytes.len(), format!("truncated payload: need {need} bytes")));
    }
    if bytes.len() > need {
        return Err(idx_err(need, "trailing bytes after label payload"));
    }
    let labels = bytes[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(idx_err(8 + pos, format!("label {} out of range 0..=9", labels[pos])));
    }
    Ok(labels)
}

/// `v = 2 raw / 255 - 1`.
pub fn map_pixel(raw: u8) -> f64 {
    2.0 * (raw as f64 / 255.0) - 1.0
}

/// Inverse of [`map_pixel`], rounding and saturating outside [-1, 1].
pub fn unmap_pixel(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn map_pixels(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&b| map_pixel(b)).collect()
}

/// Images as rows of reals in [-1, 1] with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
    pub n_classes: usize,
}

impl LabeledImageSet {
    pub fn new(images: Array2<f64>, labels: Vec<u8>, n_classes: usize) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::InvalidParameter("need at least one class".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::InvalidParameter(format!("label {l} ≥ {n_classes} classes")));
        }
        if images.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("pixel values must lie in [-1, 1]".into()));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            n_classes,
        })
    }

    pub fn from_raw(raw: &RawImages, labels: Vec<u8>) -> Result<Self> {
        let n = raw.rows * raw.cols;
        let images = Array2::from_shape_vec((raw.count, n), map_pixels(&raw.pixels))
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(images, labels, MNIST_CLASSES)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_visible(&self) -> usize {
        self.images.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledImageSet {
        LabeledImageSet {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// The first `n` examples (all of them if `n ≥ len`).
    pub fn truncated(&self, n: usize) -> LabeledImageSet {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Example indices grouped by class, ascending within each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        by_class
    }

    /// Raw bytes of image `i` under the inverse pixel map.
    pub fn raw_image(&self, i: usize) -> Vec<u8> {
        self.images.row(i).iter().map(|&v| unmap_pixel(v)).collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

/// Loads an image file and its label file into a mapped set.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<LabeledImageSet> {
    let raw = parse_idx_images(&read_file(images)?)?;
    let parsed = parse_idx_labels(&read_file(labels)?)?;
    if raw.count != parsed.len() {
        return Err(Error::Dimension(format!(
            "{} has {} images but {} has {} labels",
            images.display(),
            raw.count,
            labels.display(),
            parsed.len()
        )));
    }
    LabeledImageSet::from_raw(&raw, parsed)
}

/// Finds `stem` or `stem.gz` in `dir`.
fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::file(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// Locates the standard file names (plain or `.gz`) inside `dir`.
    pub fn in_dir(dir: &Path) -> Result<Self> {
        Ok(MnistFiles {
            train_images: find_idx(dir, "train-images-idx3-ubyte")?,
            train_labels: find_idx(dir, "train-labels-idx1-ubyte")?,
            test_images: find_idx(dir, "t10k-images-idx3-ubyte")?,
            test_labels: find_idx(dir, "t10k-labels-idx1-ubyte")?,
        })
    }

    /// `(train, test)`.
    pub fn load(&self) -> Result<(LabeledImageSet, LabeledImageSet)> {
        Ok((
            load_idx_pair(&self.train_images, &self.train_labels)?,
            load_idx_pair(&self.test_images, &self.test_labels)?,
        ))
    }
}

/// `$DAM_MNIST_DIR` if set, else `data/mnist` under `root`.
pub fn default_mnist_dir(root: &Path) -> PathBuf {
    match std::env::var_os(MNIST_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => root.join("data").join("mnist"),
    }
}

/// Sizes of a train/validation partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub validation: usize,
    pub seed: u64,
}

/// Partitions `set` into disjoint train and validation parts of the requested
/// sizes. Each class contributes to validation in proportion to its frequency
/// (largest remainder rounding); examples keep their original relative order.
pub fn split(set: &LabeledImageSet, spec: &SplitSpec) -> Result<(LabeledImageSet, LabeledImageSet)> {
    if spec.train + spec.validation != set.len() {
        return Err(Error::InvalidParameter(format!(
            "split {} + {} does not cover {} examples",
            spec.train,
            spec.validation,
            set.len()
        )));
    }
    let by_class = set.class_indices();
    let total = set.len().max(1);
    let mut quota: Vec<usize> = by_class.iter().map(|c| c.len() * spec.validation / total).collect();
    let mut short = spec.validation - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    // Largest fractional part first, lower class on ties.
    order.sort_by_key(|&c| std::cmp::Reverse((by_class[c].len() * spec.validation) % total));
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            short -= 1;
        }
    }

    let mut val = Vec::with_capacity(spec.validation);
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut stream_rng(spec.seed, &[tag::SPLIT, c as u64]));
        val.extend_from_slice(&shuffled[..quota[c]]);
    }
    val.sort_unstable();
    let mut in_val = vec![false; set.len()];
    for &i in &val {
        in_val[i] = true;
    }
    let train: Vec<usize> = (0..set.len()).filter(|&i| !in_val[i]).collect();
    Ok((set.subset(&train), set.subset(&val)))
}

/// Class-balanced minibatches of example indices for one epoch.
///
/// Each class's examples are shuffled with a stream keyed by
/// `(seed, epoch, class)`; batch `b` takes the `b`-th block of `per_class`
/// from every class, grouped by class. Emission stops as soon as any class
/// runs short, so ragged tails are dropped.
#[derive(Debug, Clone)]
pub struct Minibatches {
    per_class: usize,
    shuffled: Vec<Vec<usize>>,
    next: usize,
    count: usize,
}

impl Iterator for Minibatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.next >= self.count {
            return None;
        }
        let lo = self.next * self.per_class;
        let batch = self
            .shuffled
            .iter()
            .flat_map(|c| c[lo..lo + self.per_class].iter().copied())
            .collect();
        self.next += 1;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.count - self.next;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Minibatches {}

pub fn minibatches(set: &LabeledImageSet, per_class: usize, seed: u64, epoch: u64) -> Result<Minibatches> {
    if per_class == 0 {
        return Err(Error::InvalidParameter("per_class must be ≥ 1".into()));
    }
    let mut shuffled = set.class_indices();
    for (c, members) in shuffled.iter_mut().enumerate() {
        members.shuffle(&mut stream_rng(seed, &[tag::MINIBATCH, epoch, c as u64]));
    }
    let count = shuffled.iter().map(|c| c.len() / per_class).min().unwrap_or(0);
    Ok(Minibatches {
        per_class,
        shuffled,
        next: 0,
        count,
    })
}

/// One row of the XOR truth table, `z = XOR(x, y)` in ±1 coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XorExample {
    pub x: i8,
    pub y: i8,
    pub z: i8,
}

pub fn xor_dataset() -> [XorExample; 4] {
    [(-1, -1, -1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)].map(|(x, y, z)| XorExample { x, y, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn image_file(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn offset_of(e: Error) -> (usize, String) {
        match e {
            Error::Idx { offset, message } => (offset, message),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parses_images() {
        let payload: Vec<u8> = (0..2 * IMAGE_PIXELS).map(|i| (i % 256) as u8).collect();
        let raw = parse_idx_images(&image_file(2, 28, 28, &payload)).unwrap();
        assert_eq!((raw.count, raw.rows, raw.cols), (2, 28, 28));
        assert_eq!(raw.image(1), &payload[IMAGE_PIXELS..]);
    }

    #[test]
    fn image_parser_errors() {
        let (off, msg) = offset_of(parse_idx_images(&[]).unwrap_err());
        assert_eq!(off, 0);
        assert!(msg.contains("truncated"));
        let (off, msg) = offset_of(parse_idx_images(&label_file(&[1, 2])).unwrap_err());
        assert_eq!(off, 0);
        assert_eq!(msg, "labels magic in image parser");
        let (off, _) = offset_of(parse_idx_images(&image_file(1, 20, 28, &[0; 560])).unwrap_err());
        assert_eq!(off, 8);
        let (off, msg) = offset_of(parse_idx_images(&image_file(2, 28, 28, &[0; 800])).unwrap_err());
        assert_eq!(off, 816);
        assert!(msg.contains("truncated"));
        let (off, _) = offset_of(parse_idx_images(&image_file(1, 28, 28, &[0; 785])).unwrap_err());
        assert_eq!(off, 16 + 784);
        let (off, _) = offset_of(parse_idx_images(&[0, 0, 8, 3, 0, 0]).unwrap_err());
        assert_eq!(off, 4);
    }

    #[test]
    fn label_parser() {
        assert_eq!(parse_idx_labels(&label_file(&[0, 9, 3])).unwrap(), vec![0, 9, 3]);
        let (off, msg) = offset_of(parse_idx_labels(&label_file(&[1, 10])).unwrap_err());
        assert_eq!(off, 9);
        assert!(msg.contains("out of range"));
        let mut short = label_file(&[1, 2, 3]);
        short.pop();
        assert!(parse_idx_labels(&short).is_err());
        assert!(parse_idx_labels(&image_file(0, 28, 28, &[])).is_err());
    }

    #[test]
    fn gzip_input_is_transparent() {
        let plain = label_file(&[4, 5, 6]);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&plain).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_labels(&gz).unwrap(), vec![4, 5, 6]);
    }

    #[test]
    fn pixel_map_examples() {
        assert_eq!(map_pixel(0), -1.0);
        assert_eq!(map_pixel(255), 1.0);
        assert!((map_pixel(51) + 0.6).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pixel_round_trip(b in any::<u8>()) {
            let v = map_pixel(b);
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert_eq!(unmap_pixel(v), b);
        }
    }

    fn toy_set(per_class: &[usize]) -> LabeledImageSet {
        let labels: Vec<u8> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u8, n))
            .collect();
        let n = labels.len();
        let images = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 2 + j) as f64 / (2 * n) as f64) * 2.0 - 1.0);
        LabeledImageSet::new(images, labels, per_class.len()).unwrap()
    }

    #[test]
    fn set_validation() {
        assert!(LabeledImageSet::new(Array2::zeros((2, 3)), vec![0], 2).is_err());
        assert!(LabeledImageSet::new(Array2::zeros((1, 3)), vec![2], 2).is_err());
        assert!(LabeledImageSet::new(Array2::from_elem((1, 3), 1.5), vec![0], 2).is_err());
    }

    #[test]
    fn split_sizes_stratification_and_determinism() {
        let set = toy_set(&[30, 20, 10]);
        let spec = SplitSpec {
            train: 48,
            validation: 12,
            seed: 5,
        };
        let (tr, va) = split(&set, &spec).unwrap();
        assert_eq!((tr.len(), va.len()), (48, 12));
        let counts: Vec<usize> = va.class_indices().iter().map(Vec::len).collect();
        assert_eq!(counts, vec![6, 4, 2]);
        let (tr2, va2) = split(&set, &spec).unwrap();
        assert_eq!((tr, va), (tr2, va2));

        let (full, empty) = split(
            &set,
            &SplitSpec {
                train: 60,
                validation: 0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(full, set);
        assert!(empty.is_empty());
        assert!(split(&set, &SplitSpec { train: 50, validation: 5, seed: 0 }).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(
            sizes in proptest::collection::vec(0usize..15, 1..5),
            frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let set = toy_set(&sizes);
            let val = (set.len() as f64 * frac) as usize;
            let (tr, va) = split(&set, &SplitSpec { train: set.len() - val, validation: val, seed }).unwrap();
            prop_assert_eq!(tr.len() + va.len(), set.len());
            // Every image row is distinct, so row identity tracks examples.
            let mut rows: Vec<Vec<u64>> = tr.images.rows().into_iter()
                .chain(va.images.rows())
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows.dedup();
            prop_assert_eq!(rows.len(), set.len());
        }
    }

    #[test]
    fn minibatches_are_balanced() {
        let set = toy_set(&[5, 7, 6]);
        let batches: Vec<Vec<usize>> = minibatches(&set, 2, 1, 0).unwrap().collect();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(b.len(), 6);
            let mut per = [0; 3];
            for &i in b {
                per[set.labels[i] as usize] += 1;
            }
            assert_eq!(per, [2, 2, 2]);
        }
        let single: Vec<_> = minibatches(&toy_set(&[1, 1, 1]), 1, 0, 0).unwrap().collect();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].len(), 3);
        assert!(minibatches(&set, 0, 0, 0).is_err());
        assert_eq!(minibatches(&set, 9, 0, 0).unwrap().count(), 0);
    }

    #[test]
    fn minibatch_epochs_reshuffle_same_multiset() {
        let set = toy_set(&[10, 10]);
        let e0: Vec<Vec<usize>> = minibatches(&set, 5, 3, 0).unwrap().collect();
        let e0b: Vec<Vec<usize>> = minibatches(&set, 5, 3, 0).unwrap().collect();
        let e1: Vec<Vec<usize>> = minibatches(&set, 5, 3, 1).unwrap().collect();
        assert_eq!(e0, e0b);
        assert_ne!(e0, e1);
        let mut a: Vec<usize> = e0.concat();
        let mut b: Vec<usize> = e1.concat();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn xor_rows() {
        let d = xor_dataset();
        assert_eq!(d.len(), 4);
        for e in d {
            assert_eq!(e.z, -(e.x * e.y));
        }
    }
}
