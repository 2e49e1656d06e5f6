//! Pixelwise inter-annotator agreement.

use serde::Serialize;

use crate::conditioning::{apply_conditioning, ConditioningKind, StructuringElement};
use crate::error::{Error, Result};
use crate::manifest::{split_dataset, DatasetManifest, SampleRecord};
use crate::mask::BinaryMask;
use crate::par;

/// 2x2 pixel-count table between a reference and a comparison mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The table with reference and comparison swapped.
    pub fn transposed(&self) -> Self {
        Self::new(self.tp, self.fn_, self.fp, self.tn)
    }
}

/// Counts agreement between reference `a` and comparison `b`.
pub fn confusion(a: &BinaryMask, b: &BinaryMask) -> Result<ConfusionMatrix> {
    a.ensure_same_dims(b)?;
    let mut cm = ConfusionMatrix::default();
    for (&pa, &pb) in a.pixels().iter().zip(b.pixels()) {
        match (pa, pb) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Cohen's kappa for two binary raters.
///
/// With `n` pixels, observed agreement `p_o = (tp + tn) / n` and chance
/// agreement `p_e = [(tp+fn)(tp+fp) + (fn+tn)(fp+tn)] / n^2`, the result is
/// `(p_o - p_e) / (1 - p_e)`. Numerator and denominator are formed exactly in
/// integers before the single division. When `p_e = 1` both raters put every
/// pixel in one class: that is 1.0 if they agree everywhere, else 0.0.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = u128::from(cm.total());
    if n == 0 {
        return Err(Error::InvalidArgument(
            "kappa needs at least one pixel".into(),
        ));
    }
    let (tp, fp, fn_, tn) = (
        u128::from(cm.tp),
        u128::from(cm.fp),
        u128::from(cm.fn_),
        u128::from(cm.tn),
    );
    let chance = (tp + fn_) * (tp + fp) + (fn_ + tn) * (fp + tn);
    let observed = n * (tp + tn);
    let n2 = n * n;
    if chance == n2 {
        return Ok(if observed == n2 { 1.0 } else { 0.0 });
    }
    let num = observed as f64 - chance as f64;
    let den = (n2 - chance) as f64;
    // Exact integer difference when it fits, to avoid cancellation.
    let num = if observed >= chance {
        (observed - chance) as f64
    } else if chance - observed < (1u128 << 100) {
        -((chance - observed) as f64)
    } else {
        num
    };
    Ok(num / den)
}

/// Average pairwise agreement of one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRecord {
    pub sample_id: String,
    pub kappa: f64,
    pub n_masks: usize,
}

/// Mean kappa over all unordered pairs of masks.
pub fn mean_pairwise_kappa(masks: &[BinaryMask]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two masks for pairwise agreement".into(),
        ));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in masks.iter().enumerate() {
        for b in &masks[i + 1..] {
            sum += cohen_kappa(&confusion(a, b)?)?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Conditions every annotation of `record` with `kind` and averages kappa
/// over all pairs. The record's masks are not modified.
pub fn avg_pairwise_kappa(
    record: &SampleRecord,
    kind: ConditioningKind,
    se: StructuringElement,
) -> Result<AgreementRecord> {
    if record.n_masks() < 2 {
        return Err(Error::TooFewMasks(record.sample_id.clone()));
    }
    let masks = record.masks()?;
    let conditioned: Vec<BinaryMask> = match kind {
        ConditioningKind::None => masks.into_owned(),
        _ => masks
            .iter()
            .map(|m| apply_conditioning(m, kind, se))
            .collect(),
    };
    let kappa = mean_pairwise_kappa(&conditioned).map_err(|e| e.in_sample(&record.sample_id))?;
    Ok(AgreementRecord {
        sample_id: record.sample_id.clone(),
        kappa,
        n_masks: conditioned.len(),
    })
}

/// One row of the agreement report: kappa under each conditioning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub sample_id: String,
    pub n_masks: usize,
    pub kappa_none: f64,
    pub kappa_opening: f64,
    pub kappa_convexhull: f64,
}

impl AgreementRow {
    pub fn kappa(&self, kind: ConditioningKind) -> f64 {
        match kind {
            ConditioningKind::None => self.kappa_none,
            ConditioningKind::Opening => self.kappa_opening,
            ConditioningKind::ConvexHull => self.kappa_convexhull,
        }
    }
}

fn agreement_row(record: &SampleRecord, se: StructuringElement) -> Result<AgreementRow> {
    if record.n_masks() < 2 {
        return Err(Error::TooFewMasks(record.sample_id.clone()));
    }
    let masks = record.masks()?;
    let opened: Vec<BinaryMask> = masks
        .iter()
        .map(|m| apply_conditioning(m, ConditioningKind::Opening, se))
        .collect();
    let hulls: Vec<BinaryMask> = opened
        .iter()
        .map(crate::conditioning::convex_hull_mask)
        .collect();
    let in_sample = |e: Error| e.in_sample(&record.sample_id);
    Ok(AgreementRow {
        sample_id: record.sample_id.clone(),
        n_masks: masks.len(),
        kappa_none: mean_pairwise_kappa(&masks).map_err(in_sample)?,
        kappa_opening: mean_pairwise_kappa(&opened).map_err(in_sample)?,
        kappa_convexhull: mean_pairwise_kappa(&hulls).map_err(in_sample)?,
    })
}

/// Scores every multi-annotated record under all three conditionings,
/// sorted by sample id. Single-mask records are skipped.
pub fn agreement_report(
    manifest: &DatasetManifest,
    se: StructuringElement,
) -> Result<Vec<AgreementRow>> {
    let mut records: Vec<&SampleRecord> = manifest
        .records()
        .iter()
        .filter(|r| r.n_masks() >= 2)
        .collect();
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    par::try_map(&records, |r| agreement_row(r, se))
}

/// Unconditioned average kappa of every multi-annotated record, in manifest
/// order.
pub fn unconditioned_scores(manifest: &DatasetManifest) -> Result<Vec<AgreementRecord>> {
    let records: Vec<&SampleRecord> = manifest
        .records()
        .iter()
        .filter(|r| r.n_masks() >= 2)
        .collect();
    par::try_map(&records, |r| {
        avg_pairwise_kappa(r, ConditioningKind::None, StructuringElement::default())
    })
}

/// Keeps multi-annotated records whose unconditioned average kappa is
/// strictly above `threshold`.
pub fn select_samples(manifest: &DatasetManifest, threshold: f64) -> Result<DatasetManifest> {
    let scores = unconditioned_scores(manifest)?;
    Ok(select_by_scores(manifest, &scores, threshold))
}

/// Threshold selection from precomputed scores; records without a score
/// are dropped.
pub fn select_by_scores(
    manifest: &DatasetManifest,
    scores: &[AgreementRecord],
    threshold: f64,
) -> DatasetManifest {
    let keep: std::collections::HashSet<&str> = scores
        .iter()
        .filter(|s| s.kappa > threshold)
        .map(|s| s.sample_id.as_str())
        .collect();
    manifest.filtered(format!("{}-best", manifest.name), |r| {
        keep.contains(r.sample_id.as_str())
    })
}

/// All-samples and best-samples train/validation splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSets {
    pub all_train: DatasetManifest,
    pub all_validation: DatasetManifest,
    pub best_train: DatasetManifest,
    pub best_validation: DatasetManifest,
}

/// Splits the full set first, then filters each half by agreement, so the
/// best-samples halves are subsets of the all-samples halves.
pub fn split_then_select(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
    threshold: f64,
) -> Result<SplitSets> {
    let (all_train, all_validation) = split_dataset(manifest, fraction, seed)?;
    let scores = unconditioned_scores(manifest)?;
    let best_train = select_by_scores(&all_train, &scores, threshold);
    let best_validation = select_by_scores(&all_validation, &scores, threshold);
    Ok(SplitSets {
        all_train,
        all_validation,
        best_train,
        best_validation,
    })
}

/// Linear-interpolation percentiles: rank `p / 100 * (n - 1)` on the sorted
/// scores, interpolated between the neighbouring order statistics.
pub fn kappa_percentiles(scores: &[f64], pct: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores".into()));
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::OutOfRange {
            index,
            value,
            range: "finite",
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    pct.iter()
        .enumerate()
        .map(|(index, &p)| {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::OutOfRange {
                    index,
                    value: p,
                    range: "[0, 100]",
                });
            }
            let rank = p / 100.0 * last;
            let lo = rank.floor() as usize;
            let hi = rank.ceil() as usize;
            let t = rank - lo as f64;
            Ok(sorted[lo] + t * (sorted[hi] - sorted[lo]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityPoint {
    pub x: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaDistribution {
    pub bins: Vec<HistogramBin>,
    pub density: Vec<DensityPoint>,
    pub bandwidth: f64,
}

/// Number of points at which the density is evaluated.
pub const DENSITY_POINTS: usize = 256;

/// Bandwidth used when the scores have no spread.
const DEGENERATE_BANDWIDTH: f64 = 0.01;

/// Histogram over `[min, max]` plus a Gaussian kernel density estimate.
///
/// Bins are equal width, the last one closed on the right. If all scores are
/// equal the range is widened to `s ± 0.5`. The bandwidth follows Scott's
/// rule, `n^(-1/5)` times the sample standard deviation, and the density is
/// sampled at 256 points spanning four bandwidths beyond the data range.
pub fn kappa_distribution(scores: &[f64], n_bins: usize) -> Result<KappaDistribution> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores".into()));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::OutOfRange {
            index,
            value,
            range: "finite",
        });
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if max > min {
        (min, max)
    } else {
        (min - 0.5, max + 0.5)
    };
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        let i = (((s - lo) / width).floor() as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_left: lo + i as f64 * width,
            bin_right: if i + 1 == n_bins {
                hi
            } else {
                lo + (i + 1) as f64 * width
            },
            count,
        })
        .collect();

    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = if scores.len() > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let bandwidth = if sd > 0.0 {
        n.powf(-0.2) * sd
    } else {
        DEGENERATE_BANDWIDTH
    };
    let start = min - 4.0 * bandwidth;
    let step = (max - min + 8.0 * bandwidth) / (DENSITY_POINTS - 1) as f64;
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density = (0..DENSITY_POINTS)
        .map(|i| {
            let x = start + i as f64 * step;
            let sum: f64 = scores
                .iter()
                .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum();
            DensityPoint {
                x,
                density: norm * sum,
            }
        })
        .collect();
    Ok(KappaDistribution {
        bins,
        density,
        bandwidth,
    })
}
