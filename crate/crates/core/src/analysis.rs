//! Feature/prototype diagnostics of trained classifiers and file exporters.
//!
//! In the feature regime each memory pushes for several classes and many
//! memories share a decision; in the prototype regime a memory looks like one
//! whole digit and a single memory dominates each decision. The vote and
//! contribution histograms quantify the two ends.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict, ClassifierModel, EpochMetrics, Framing};
use crate::data::{unmap_pixel, LabeledImageSet};
use crate::{Error, Result};

/// `counts[k]` = memories with exactly `k` recognition weights above the
/// cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteHistogram {
    pub counts: Vec<u64>,
    pub cutoff: f64,
}

impl VoteHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean_votes(&self) -> f64 {
        let weighted: u64 = self.counts.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();
        weighted as f64 / self.total() as f64
    }

    /// Fraction of memories voting for exactly one class.
    pub fn single_class_fraction(&self) -> f64 {
        self.counts.get(1).copied().unwrap_or(0) as f64 / self.total() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_counts(out, &self.counts)
    }
}

/// `counts[j]` = images whose decision has exactly `j` memories within the
/// band of the largest contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionHistogram {
    pub counts: Vec<u64>,
    pub band: f64,
    pub channel: GapChannel,
}

impl ContributionHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of images decided by a single memory.
    pub fn single_memory_fraction(&self) -> f64 {
        self.counts.get(1).copied().unwrap_or(0) as f64 / self.total() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_counts(out, &self.counts)
    }
}

fn write_counts<W: Write>(mut out: W, counts: &[u64]) -> std::io::Result<()> {
    writeln!(out, "k,count")?;
    for (k, c) in counts.iter().enumerate() {
        writeln!(out, "{k},{c}")?;
    }
    Ok(())
}

/// Which classification neuron's energy gap is decomposed per memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapChannel {
    Predicted,
    True,
}

impl std::str::FromStr for GapChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "predicted" | "pred" => Ok(GapChannel::Predicted),
            "true" | "label" => Ok(GapChannel::True),
            other => Err(Error::InvalidParameter(format!("unknown gap channel {other:?} (predicted|true)"))),
        }
    }
}

pub fn votes_per_memory(model: &ClassifierModel, cutoff: f64) -> VoteHistogram {
    let mut counts = vec![0u64; model.n_classes() + 1];
    for row in model.recognition().rows() {
        counts[row.iter().filter(|&&w| w > cutoff).count()] += 1;
    }
    VoteHistogram { counts, cutoff }
}

/// Number of terms at or above `band` times the largest one. When the
/// largest term is not positive only exact ties with it count.
pub fn count_dominant(terms: &[f64], band: f64) -> usize {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        let thr = band * max;
        terms.iter().filter(|&&t| t >= thr).count()
    } else {
        terms.iter().filter(|&&t| t == max).count()
    }
}

/// Per-memory terms `F(ξ^μ·V) - F(ξ^μ·U)` of the energy gap for class
/// `alpha`, classification neurons starting at -1.
pub fn gap_terms(model: &ClassifierModel, image: ndarray::ArrayView1<f64>, alpha: usize) -> Vec<f64> {
    let e = model.energy();
    let rec = model.recognition();
    model
        .visible()
        .rows()
        .into_iter()
        .zip(rec.rows())
        .map(|(w, r)| {
            let h = w.dot(&image);
            let off = h - r.sum();
            let on = off + 2.0 * r[alpha];
            e.energy(on) - e.energy(off)
        })
        .collect()
}

pub fn dominant_contributions(
    model: &ClassifierModel,
    set: &LabeledImageSet,
    band: f64,
    channel: GapChannel,
) -> Result<ContributionHistogram> {
    if set.n_visible() != model.n_visible() {
        return Err(Error::Dimension(format!(
            "images have {} pixels, model expects {}",
            set.n_visible(),
            model.n_visible()
        )));
    }
    let predicted = predict(model, set.images.view(), Framing::Am)?;
    let hidden = set.images.dot(&model.visible().t());
    let rec = model.recognition();
    let rec_sum = rec.sum_axis(Axis(1));
    let e = model.energy();
    let js: Vec<usize> = (0..set.len())
        .into_par_iter()
        .map(|a| {
            let alpha = match channel {
                GapChannel::Predicted => predicted[a],
                GapChannel::True => set.labels[a],
            } as usize;
            let terms: Vec<f64> = (0..model.n_memories())
                .map(|mu| {
                    let off = hidden[[a, mu]] - rec_sum[mu];
                    e.energy(off + 2.0 * rec[[mu, alpha]]) - e.energy(off)
                })
                .collect();
            count_dominant(&terms, band)
        })
        .collect();
    let mut counts = vec![0u64; model.n_memories() + 1];
    for j in js {
        counts[j] += 1;
    }
    Ok(ContributionHistogram { counts, band, channel })
}

/// Binary greyscale image (`P5`), one byte per pixel.
pub fn write_pgm<W: Write>(mut out: W, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), width * height);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)
}

/// Writes the visible part of each selected memory as `memory_<μ>.pgm`
/// (value `v` ↦ `round((v + 1) / 2 · 255)`, so 0 is grey 128) and their
/// recognition weights to `recognition.csv`. Returns the written paths.
pub fn export_memory_images(model: &ClassifierModel, indices: &[usize], dir: &Path) -> Result<Vec<PathBuf>> {
    let side = (model.n_visible() as f64).sqrt().round() as usize;
    if side * side != model.n_visible() {
        return Err(Error::Dimension(format!("{} visible units do not form a square image", model.n_visible())));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= model.n_memories()) {
        return Err(Error::InvalidParameter(format!("memory {bad} out of range 0..{}", model.n_memories())));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut written = Vec::new();
    for &mu in indices {
        let px: Vec<u8> = model.visible().row(mu).iter().map(|&v| unmap_pixel(v)).collect();
        let path = dir.join(format!("memory_{mu}.pgm"));
        let f = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
        write_pgm(std::io::BufWriter::new(f), side, side, &px).map_err(|e| Error::file(&path, e))?;
        written.push(path);
    }
    let path = dir.join("recognition.csv");
    let mut text = String::from("memory");
    for c in 0..model.n_classes() {
        text.push_str(&format!(",class_{c}"));
    }
    text.push('\n');
    for &mu in indices {
        text.push_str(&mu.to_string());
        for w in model.recognition().slice(s![mu, ..]) {
            text.push_str(&format!(",{w:.6}"));
        }
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
    written.push(path);
    Ok(written)
}

/// One-based index of the first error strictly below `threshold`.
pub fn first_crossing(errors: &[f64], threshold: f64) -> Option<usize> {
    errors.iter().position(|&e| e < threshold).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub threshold: f64,
    /// First epoch whose test error is below the threshold.
    pub crossing_epoch: Option<usize>,
    pub final_test_err: Option<f64>,
    pub best_test_err: Option<f64>,
}

/// Writes `epoch,train_err,val_err,test_err` to `csv_path` and the threshold
/// crossing summary to `json_path`.
pub fn export_training_curve(
    metrics: &[EpochMetrics],
    threshold: f64,
    csv_path: &Path,
    json_path: &Path,
) -> Result<CurveSummary> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut text = String::from("epoch,train_err,val_err,test_err\n");
    for m in metrics {
        text.push_str(&format!("{},{:.6},{},{}\n", m.epoch, m.train_err, opt(m.val_err), opt(m.test_err)));
    }
    std::fs::write(csv_path, text).map_err(|e| Error::file(csv_path, e))?;
    let summary = curve_summary(metrics, threshold);
    let json = serde_json::to_string_pretty(&summary).expect("plain struct serializes");
    std::fs::write(json_path, json + "\n").map_err(|e| Error::file(json_path, e))?;
    Ok(summary)
}

pub fn curve_summary(metrics: &[EpochMetrics], threshold: f64) -> CurveSummary {
    let tested: Vec<(usize, f64)> = metrics.iter().filter_map(|m| m.test_err.map(|e| (m.epoch, e))).collect();
    let errs: Vec<f64> = tested.iter().map(|t| t.1).collect();
    CurveSummary {
        threshold,
        crossing_epoch: first_crossing(&errs, threshold).map(|i| tested[i - 1].0),
        final_test_err: errs.last().copied(),
        best_test_err: errs.iter().copied().reduce(f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EnergyModel;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn model_with_recognition(rec: &[f64]) -> ClassifierModel {
        let mut w = Array2::zeros((1, 1 + rec.len()));
        for (i, &r) in rec.iter().enumerate() {
            w[[0, 1 + i]] = r;
        }
        ClassifierModel::new(w, 1, rec.len(), EnergyModel::rectified(3).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn vote_example() {
        let m = model_with_recognition(&[0.9, -0.8, 0.7, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
        let h = votes_per_memory(&m, 0.5);
        assert_eq!(h.counts[2], 1);
        assert_eq!(h.total(), 1);
        let m = model_with_recognition(&[-1.0; 10]);
        assert_eq!(votes_per_memory(&m, 0.5).counts[0], 1);
    }

    #[test]
    fn dominant_examples() {
        assert_eq!(count_dominant(&[10.0, 9.5, 3.0], 0.9), 2);
        assert_eq!(count_dominant(&[10.0, 9.5, 3.0], 1.0), 1);
        assert_eq!(count_dominant(&[4.0], 0.9), 1);
        assert_eq!(count_dominant(&[-1.0, -1.0, -3.0], 0.9), 2);
        assert_eq!(count_dominant(&[0.0, 0.0], 0.9), 2);
    }

    proptest! {
        #[test]
        fn dominant_count_monotone_in_band(
            terms in proptest::collection::vec(-5.0f64..5.0, 1..20),
            b1 in 0.0f64..1.0,
            b2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            let j_hi = count_dominant(&terms, hi);
            prop_assert!(j_hi >= 1);
            prop_assert!(count_dominant(&terms, lo) >= j_hi);
        }
    }

    #[test]
    fn gap_terms_sum_to_am_score() {
        let m = ClassifierModel::random(6, 4, 3, EnergyModel::rectified(3).unwrap(), 0.01, 0.0, 0.5, 3).unwrap();
        let v = array![0.5, -0.2, 0.9, -1.0];
        let c = crate::classifier::forward_am(&m, v.view(), -1.0).unwrap();
        for alpha in 0..3 {
            let s: f64 = gap_terms(&m, v.view(), alpha).iter().sum();
            assert!(((0.01 * s).tanh() - c[alpha]).abs() < 1e-12);
        }
    }

    #[test]
    fn contribution_totals_and_single_memory() {
        let set = LabeledImageSet::new(
            Array2::from_shape_fn((7, 4), |(a, i)| ((a + i) % 3) as f64 - 1.0),
            vec![0, 1, 0, 1, 0, 1, 1],
            2,
        )
        .unwrap();
        let m = ClassifierModel::random(5, 4, 2, EnergyModel::rectified(2).unwrap(), 1.0, 0.0, 0.5, 1).unwrap();
        let h = dominant_contributions(&m, &set, 0.9, GapChannel::Predicted).unwrap();
        assert_eq!(h.total(), 7);
        assert_eq!(h.counts[0], 0);
        let single = ClassifierModel::random(1, 4, 2, EnergyModel::rectified(2).unwrap(), 1.0, 0.0, 0.5, 1).unwrap();
        let h = dominant_contributions(&single, &set, 0.9, GapChannel::True).unwrap();
        assert_eq!(h.counts, vec![0, 7]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,count\n0,0\n1,7\n");
    }

    #[test]
    fn pgm_export_grey_levels() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = Array2::zeros((2, 6));
        w.slice_mut(s![1, ..4]).fill(1.0);
        let m = ClassifierModel::new(w, 4, 2, EnergyModel::rectified(2).unwrap(), 1.0).unwrap();
        let paths = export_memory_images(&m, &[0, 1], dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let grey = std::fs::read(&paths[0]).unwrap();
        assert_eq!(&grey[..11], b"P5\n2 2\n255\n");
        assert_eq!(&grey[11..], &[128; 4]);
        let white = std::fs::read(&paths[1]).unwrap();
        assert_eq!(&white[11..], &[255; 4]);
        let csv = std::fs::read_to_string(&paths[2]).unwrap();
        assert_eq!(csv.lines().next(), Some("memory,class_0,class_1"));
        assert!(export_memory_images(&m, &[2], dir.path()).is_err());
    }

    #[test]
    fn crossing_examples() {
        assert_eq!(first_crossing(&[0.05, 0.03, 0.019], 0.02), Some(3));
        assert_eq!(first_crossing(&[0.05, 0.03], 0.02), None);
    }

    #[test]
    fn curve_files() {
        let dir = tempfile::tempdir().unwrap();
        let metrics: Vec<EpochMetrics> = [0.05, 0.03, 0.019]
            .iter()
            .enumerate()
            .map(|(i, &e)| EpochMetrics {
                epoch: i + 1,
                train_err: e,
                val_err: None,
                test_err: Some(e),
                loss: 0.0,
                lr: 0.01,
                temperature: 50.0,
            })
            .collect();
        let csv = dir.path().join("curve.csv");
        let json = dir.path().join("curve.json");
        let s = export_training_curve(&metrics, 0.02, &csv, &json).unwrap();
        assert_eq!(s.crossing_epoch, Some(3));
        let parsed: CurveSummary = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 4);
    }
}
