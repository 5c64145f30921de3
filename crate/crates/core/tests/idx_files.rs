//! IDX loading from disk: synthetic files (plain and gzipped) and, when
//! present, the real MNIST files.

use std::io::Write;
use std::path::{Path, PathBuf};

use densemem::data::{default_mnist_dir, load_idx_pair, split, MnistFiles, SplitSpec, IMAGE_PIXELS};
use flate2::write::GzEncoder;
use flate2::Compression;

fn image_file(count: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for v in [count, 28, 28] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend((0..count as usize * IMAGE_PIXELS).map(fill));
    b
}

fn label_file(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::default());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

#[test]
fn gzipped_and_plain_files_load_identically() {
    let dir = tempfile::tempdir().unwrap();
    let images = image_file(3, |i| (i % 256) as u8);
    let labels = label_file(&[7, 0, 9]);
    let names = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];
    std::fs::write(dir.path().join(names[0]), &images).unwrap();
    std::fs::write(dir.path().join(names[1]), &labels).unwrap();
    std::fs::write(dir.path().join(format!("{}.gz", names[2])), gz(&images)).unwrap();
    std::fs::write(dir.path().join(format!("{}.gz", names[3])), gz(&labels)).unwrap();

    let files = MnistFiles::in_dir(dir.path()).unwrap();
    let (train, test) = files.load().unwrap();
    assert_eq!(train, test);
    assert_eq!(train.labels, vec![7, 0, 9]);
    assert_eq!(train.images[[0, 0]], -1.0);
    assert_eq!(train.images[[0, 255]], 1.0);
}

#[test]
fn count_mismatch_between_files_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&i, image_file(2, |_| 0)).unwrap();
    std::fs::write(&l, label_file(&[1, 2, 3])).unwrap();
    let msg = load_idx_pair(&i, &l).unwrap_err().to_string();
    assert!(msg.contains("2 images") && msg.contains("3 labels"), "{msg}");
}

#[test]
fn missing_directory_names_the_file() {
    let msg = MnistFiles::in_dir(Path::new("/nonexistent/mnist")).unwrap_err().to_string();
    assert!(msg.contains("train-images-idx3-ubyte"), "{msg}");
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn real_mnist_when_available() {
    let Ok(files) = MnistFiles::in_dir(&default_mnist_dir(&workspace_root())) else {
        eprintln!("MNIST not found; skipping (see scripts/fetch_mnist.sh)");
        return;
    };
    let (train, test) = files.load().unwrap();
    assert_eq!((train.len(), test.len()), (60000, 10000));
    assert_eq!(train.n_visible(), 784);
    let mut counts = [0usize; 10];
    for &l in &test.labels {
        counts[l as usize] += 1;
    }
    assert_eq!(counts, [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]);
    assert!(train.images.iter().all(|v| (-1.0..=1.0).contains(v)));

    let (tr, val) = split(&train, &SplitSpec { train: 50000, validation: 10000, seed: 0 }).unwrap();
    assert_eq!((tr.len(), val.len()), (50000, 10000));
}
