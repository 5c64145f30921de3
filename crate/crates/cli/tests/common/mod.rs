//! Helpers shared by the CLI test targets: a synthetic IDX dataset and
//! byte-level comparison of run directories.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_densemem"))
}

pub fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn densemem");
    if !out.status.success() {
        panic!(
            "densemem {args:?} exited with {:?}\nstdout:\n{}\nstderr:\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

/// Ten classes, each a bright 8x8 block at a class-specific position with
/// sparse per-image noise.
fn synthetic_images(count: usize, salt: u64) -> (Vec<u8>, Vec<u8>) {
    let mut images = vec![0, 0, 8, 3];
    for v in [count as u32, 28, 28] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend_from_slice(&(count as u32).to_be_bytes());
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for a in 0..count {
        let class = a % 10;
        let (r0, c0) = (2 + (class / 5) * 12, 1 + (class % 5) * 5);
        for r in 0..28 {
            for c in 0..28 {
                let on = (r0..r0 + 8).contains(&r) && (c0..c0 + 5).contains(&c);
                let noise = next() % 23 == 0;
                images.push(if on != noise { 255 } else { 0 });
            }
        }
        labels.push(class as u8);
    }
    (images, labels)
}

/// Writes train (`train_count`) and test (`test_count`) IDX files under
/// `dir` with the standard MNIST names.
pub fn write_synthetic_mnist(dir: &Path, train_count: usize, test_count: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let (ti, tl) = synthetic_images(train_count, 1);
    let (si, sl) = synthetic_images(test_count, 2);
    std::fs::write(dir.join("train-images-idx3-ubyte"), ti).unwrap();
    std::fs::write(dir.join("train-labels-idx1-ubyte"), tl).unwrap();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), si).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), sl).unwrap();
}

/// Every file under `dir` except the provenance log, keyed by relative path.
pub fn result_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != "provenance.jsonl") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Command lines exercising every subcommand at small scale. `{data}` and
/// `{ckpt}` are substituted by the caller.
pub const DETERMINISM_RUNS: &[(&str, &str)] = &[
    ("xor", "xor --n 3"),
    ("theory", "capacity theory --N 100,200 --n 2,3,4 --K 10,100"),
    ("hist", "capacity hist --N 40 --K 60 --n 2,3 --trials 64"),
    ("khalf", "capacity khalf --N 30,40 --n 3 --kind poly,rect --trials 48"),
    (
        "train",
        "train --preset desk-n3 --K 20 --epochs 3 --per-class 4 --validation 40 --mnist-dir {data} --eval-every 1",
    ),
    ("eval", "eval --checkpoint {ckpt} --mnist-dir {data}"),
    ("analyze", "analyze --checkpoint {ckpt} --mnist-dir {data} --export 0,1,2"),
];

/// Runs every entry of [`DETERMINISM_RUNS`] with `threads` workers under
/// `outdir`, one run directory per entry.
pub fn run_all(outdir: &Path, data: &Path, threads: usize, seed: u64) {
    let ckpt = outdir.join("train").join("model.dam");
    for (id, cmd) in DETERMINISM_RUNS {
        let cmd = cmd
            .replace("{data}", data.to_str().unwrap())
            .replace("{ckpt}", ckpt.to_str().unwrap());
        let mut args: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        args.extend(
            [
                "--outdir",
                outdir.to_str().unwrap(),
                "--run-id",
                id,
                "--threads",
                &threads.to_string(),
                "--seed",
                &seed.to_string(),
            ]
            .map(String::from),
        );
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&refs);
    }
}
