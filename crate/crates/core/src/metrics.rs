//! Segmentation metrics, the soft-Jaccard + BCE training loss, and
//! best-of-annotations evaluation.

use std::path::Path;

use serde::Serialize;

use crate::conditioning::{apply_conditioning, ConditioningKind, StructuringElement};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, SampleRecord};
use crate::mask::{load_mask, BinaryMask};
use crate::par;

/// Smoothing term of the soft Jaccard.
pub const SOFT_JACCARD_SMOOTH: f64 = 1e-7;

/// Per-pixel foreground probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        check_len(width, height, values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfRange {
                index,
                value,
                range: "[0, 1]",
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Hard 0/1 probabilities from a mask.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            values: mask
                .pixels()
                .iter()
                .map(|&p| f64::from(u8::from(p)))
                .collect(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-pixel raw network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl LogitMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        check_len(width, height, values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::OutOfRange {
                index,
                value,
                range: "finite",
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Logistic transform of every value.
    pub fn sigmoid(&self) -> ProbabilityMap {
        ProbabilityMap {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&x| sigmoid(x)).collect(),
        }
    }
}

fn check_len(width: u32, height: u32, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyMask { width, height });
    }
    let expected = width as usize * height as usize;
    if len != expected {
        return Err(Error::BufferSize {
            expected,
            actual: len,
        });
    }
    Ok(())
}

fn check_dims(left: (u32, u32), right: (u32, u32)) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { left, right });
    }
    Ok(())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intersection over union. Two empty masks score 1.0.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&pa, &pb) in a.pixels().iter().zip(b.pixels()) {
        inter += usize::from(pa && pb);
        union += usize::from(pa || pb);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `1 - (I + s) / (P + G - I + s)` with `I = sum(p*g)`, `P = sum(p)`,
/// `G = sum(g)` and `s` = [`SOFT_JACCARD_SMOOTH`].
pub fn soft_jaccard_loss(p: &ProbabilityMap, g: &BinaryMask) -> Result<f64> {
    check_dims(p.dimensions(), g.dimensions())?;
    let (mut inter, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (&pi, &gi) in p.values.iter().zip(g.pixels()) {
        sum_p += pi;
        if gi {
            inter += pi;
            sum_g += 1.0;
        }
    }
    let s = SOFT_JACCARD_SMOOTH;
    Ok(1.0 - (inter + s) / (sum_p + sum_g - inter + s))
}

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(x, 0) - x*g + ln(1 + exp(-|x|))`.
pub fn bce_with_logits(x: &LogitMap, g: &BinaryMask) -> Result<f64> {
    check_dims(x.dimensions(), g.dimensions())?;
    let total: f64 = x
        .values
        .iter()
        .zip(g.pixels())
        .map(|(&xi, &gi)| {
            let target = if gi { xi } else { 0.0 };
            xi.max(0.0) - target + (-xi.abs()).exp().ln_1p()
        })
        .sum();
    Ok(total / x.values.len() as f64)
}

/// Relative weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub jaccard: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            jaccard: 8.0,
            bce: 1.0,
        }
    }
}

/// `w_jaccard * soft_jaccard_loss(sigmoid(x), g) + w_bce * bce_with_logits(x, g)`.
pub fn combined_loss(x: &LogitMap, g: &BinaryMask, weights: LossWeights) -> Result<f64> {
    let bce = bce_with_logits(x, g)?;
    if weights.jaccard == 0.0 {
        return Ok(weights.bce * bce);
    }
    let soft = soft_jaccard_loss(&x.sigmoid(), g)?;
    Ok(weights.jaccard * soft + weights.bce * bce)
}

/// Highest Jaccard of `pred` against any of the record's annotations, each
/// conditioned with `kind`. The prediction itself is never conditioned.
pub fn best_of_jaccard(
    pred: &BinaryMask,
    record: &SampleRecord,
    kind: ConditioningKind,
    se: StructuringElement,
) -> Result<f64> {
    let masks = record.masks()?;
    let mut best = f64::NEG_INFINITY;
    for m in masks.iter() {
        let truth = apply_conditioning(m, kind, se);
        let j = jaccard(&truth, pred).map_err(|e| e.in_sample(&record.sample_id))?;
        best = best.max(j);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub test_set: String,
    pub conditioning: ConditioningKind,
    pub per_sample: Vec<SampleScore>,
    /// Mean over scored samples; `None` when nothing could be scored.
    pub mean: Option<f64>,
    pub n: usize,
    /// Samples with no prediction file.
    pub skipped: Vec<String>,
}

impl EvaluationReport {
    pub fn from_scores(
        test_set: impl Into<String>,
        conditioning: ConditioningKind,
        mut per_sample: Vec<SampleScore>,
        mut skipped: Vec<String>,
    ) -> Self {
        per_sample.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        skipped.sort();
        let n = per_sample.len();
        let mean = (n > 0).then(|| per_sample.iter().map(|s| s.jaccard).sum::<f64>() / n as f64);
        Self {
            test_set: test_set.into(),
            conditioning,
            per_sample,
            mean,
            n,
            skipped,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.skipped.is_empty()
    }
}

/// Scores every sample of `manifest` against `<pred_dir>/<sample_id>.png`.
///
/// Samples without a prediction file are listed in `skipped`; any other
/// failure (unreadable file, size mismatch) aborts the evaluation.
pub fn evaluate_predictions(
    pred_dir: impl AsRef<Path>,
    manifest: &DatasetManifest,
    kind: ConditioningKind,
    se: StructuringElement,
) -> Result<EvaluationReport> {
    let pred_dir = pred_dir.as_ref();
    let outcomes = par::try_map(manifest.records(), |record| {
        let path = pred_dir.join(format!("{}.png", record.sample_id));
        if !path.is_file() {
            return Ok(None);
        }
        let pred = load_mask(&path).map_err(|e| e.in_sample(&record.sample_id))?;
        let jaccard = best_of_jaccard(&pred, record, kind, se)?;
        Ok::<_, Error>(Some(jaccard))
    })?;
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for (record, outcome) in manifest.records().iter().zip(outcomes) {
        match outcome {
            Some(jaccard) => scores.push(SampleScore {
                sample_id: record.sample_id.clone(),
                jaccard,
            }),
            None => skipped.push(record.sample_id.clone()),
        }
    }
    Ok(EvaluationReport::from_scores(
        manifest.name.clone(),
        kind,
        scores,
        skipped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::save_mask;
    use proptest::prelude::*;

    fn m(rows: &[&[u8]]) -> BinaryMask {
        BinaryMask::from_rows(rows).unwrap()
    }

    /// Direct formula with explicit logs of the sigmoid.
    fn bce_naive(x: &[f64], g: &[bool]) -> f64 {
        x.iter()
            .zip(g)
            .map(|(&xi, &gi)| {
                let s = 1.0 / (1.0 + (-xi).exp());
                if gi {
                    -s.ln()
                } else {
                    -(1.0 - s).ln()
                }
            })
            .sum::<f64>()
            / x.len() as f64
    }

    #[test]
    fn jaccard_reference_values() {
        let a = m(&[&[1, 1], &[0, 0]]);
        let b = m(&[&[0, 0], &[1, 1]]);
        let c = m(&[&[1, 0], &[0, 0]]);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &c).unwrap(), 0.5);
        let e = BinaryMask::new(2, 2).unwrap();
        assert_eq!(jaccard(&e, &e).unwrap(), 1.0);
        assert!(jaccard(&a, &BinaryMask::new(2, 3).unwrap()).is_err());
    }

    #[test]
    fn soft_jaccard_cases() {
        let g = m(&[&[1, 1], &[0, 0]]);
        let exact = ProbabilityMap::from_mask(&g);
        assert!(soft_jaccard_loss(&exact, &g).unwrap() <= 1e-6);

        let zeros = BinaryMask::new(2, 2).unwrap();
        let p0 = ProbabilityMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(soft_jaccard_loss(&p0, &zeros).unwrap().abs() < 1e-12);

        // I = 1, sum(p) + sum(g) - I = 2 + 2 - 1 = 3.
        let half = ProbabilityMap::new(2, 2, vec![0.5; 4]).unwrap();
        let s = SOFT_JACCARD_SMOOTH;
        let expected = 1.0 - (1.0 + s) / (3.0 + s);
        assert!((expected - 2.0 / 3.0).abs() < 1e-7);
        assert!((soft_jaccard_loss(&half, &g).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn probability_range_checked() {
        assert!(ProbabilityMap::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(ProbabilityMap::new(1, 2, vec![0.5]).is_err());
        assert!(LogitMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(LogitMap::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn bce_reference_values() {
        let g = m(&[&[1, 0], &[0, 1]]);
        let sat = LogitMap::new(2, 2, vec![50.0, -50.0, -50.0, 50.0]).unwrap();
        assert!(bce_with_logits(&sat, &g).unwrap() < 1e-10);
        let zero = LogitMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!((bce_with_logits(&zero, &g).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let x = vec![-3.2, 0.7, 9.5, -10.0, 0.0, 2.25, -0.4, 5.5, -7.75];
        let gt = [true, false, true, true, false, false, true, false, false];
        let g = BinaryMask::from_pixels(3, 3, gt.to_vec()).unwrap();
        let stable = bce_with_logits(&LogitMap::new(3, 3, x.clone()).unwrap(), &g).unwrap();
        assert!((stable - bce_naive(&x, &gt)).abs() < 1e-9);
    }

    #[test]
    fn bce_stays_finite_at_extreme_logits() {
        let g = m(&[&[1, 0]]);
        let x = LogitMap::new(2, 1, vec![-1e6, 1e6]).unwrap();
        let v = bce_with_logits(&x, &g).unwrap();
        assert!(v.is_finite());
        assert!((v - 1e6).abs() < 1e-6);
    }

    #[test]
    fn combined_loss_cases() {
        let g = m(&[&[1, 1], &[0, 0]]);
        let sat = LogitMap::new(2, 2, vec![40.0, 40.0, -40.0, -40.0]).unwrap();
        assert!(combined_loss(&sat, &g, LossWeights::default()).unwrap() <= 1e-5);

        let zero = LogitMap::new(2, 2, vec![0.0; 4]).unwrap();
        let half = ProbabilityMap::new(2, 2, vec![0.5; 4]).unwrap();
        let expected = 8.0 * soft_jaccard_loss(&half, &g).unwrap() + std::f64::consts::LN_2;
        let got = combined_loss(&zero, &g, LossWeights::default()).unwrap();
        assert!((got - expected).abs() < 1e-12);

        let bce_only = LossWeights {
            jaccard: 0.0,
            bce: 1.0,
        };
        assert_eq!(
            combined_loss(&zero, &g, bce_only).unwrap(),
            bce_with_logits(&zero, &g).unwrap()
        );
    }

    #[test]
    fn combined_loss_drops_toward_truth() {
        let g = m(&[&[1, 0, 1], &[0, 1, 0]]);
        let sign: Vec<f64> = g
            .pixels()
            .iter()
            .map(|&p| if p { 1.0 } else { -1.0 })
            .collect();
        let mut last = f64::INFINITY;
        for step in 0..8 {
            let scale = f64::from(step) - 2.0;
            let x = LogitMap::new(3, 2, sign.iter().map(|s| s * scale).collect()).unwrap();
            let loss = combined_loss(&x, &g, LossWeights::default()).unwrap();
            assert!(loss >= 0.0);
            assert!(loss < last, "step {step}: {loss} >= {last}");
            last = loss;
        }
    }

    fn record(id: &str, masks: Vec<BinaryMask>) -> SampleRecord {
        SampleRecord::from_masks(id, masks).unwrap()
    }

    #[test]
    fn best_of_picks_highest() {
        let se = StructuringElement::default();
        let pred = m(&[&[1, 1, 1, 1, 1], &[1, 1, 0, 0, 0]]);
        // |pred| = 7. a: pred minus 3 pixels -> 4/7. b: 7 pixels overlap of
        // a 10-pixel union -> 0.7. c: overlap 4, union 10 -> 0.4.
        let a = m(&[&[1, 1, 1, 1, 0], &[0, 0, 0, 0, 0]]);
        let b = m(&[&[1, 1, 1, 1, 1], &[1, 1, 1, 1, 1]]);
        let c = m(&[&[1, 1, 0, 0, 0], &[1, 1, 1, 1, 1]]);
        assert!((jaccard(&b, &pred).unwrap() - 0.7).abs() < 1e-15);
        assert!((jaccard(&c, &pred).unwrap() - 0.4).abs() < 1e-15);

        let two = record("two", vec![c.clone(), b.clone()]);
        assert!(
            (best_of_jaccard(&pred, &two, ConditioningKind::None, se).unwrap() - 0.7).abs() < 1e-15
        );

        let single = record("one", vec![a.clone()]);
        assert_eq!(
            best_of_jaccard(&pred, &single, ConditioningKind::None, se).unwrap(),
            jaccard(&a, &pred).unwrap()
        );

        let three = record("three", vec![a, pred.clone(), c]);
        assert_eq!(
            best_of_jaccard(&pred, &three, ConditioningKind::None, se).unwrap(),
            1.0
        );
    }

    #[test]
    fn best_of_conditions_truth_only() {
        let se = StructuringElement::default();
        // A lone pixel vanishes under opening, so the conditioned truth is
        // empty and the (unconditioned) prediction no longer matches.
        let mut lone = BinaryMask::new(9, 9).unwrap();
        lone.set(4, 4, true);
        let r = record("x", vec![lone.clone()]);
        assert_eq!(
            best_of_jaccard(&lone, &r, ConditioningKind::None, se).unwrap(),
            1.0
        );
        assert_eq!(
            best_of_jaccard(&lone, &r, ConditioningKind::Opening, se).unwrap(),
            0.0
        );
    }

    #[test]
    fn evaluates_directory() {
        let se = StructuringElement::default();
        let dir = tempfile::tempdir().unwrap();
        let full = m(&[&[1, 1], &[1, 1]]);
        let half = m(&[&[1, 1], &[0, 0]]);
        let other = m(&[&[0, 0], &[1, 1]]);
        let manifest = DatasetManifest::new(
            "synthetic",
            vec![
                record("a", vec![full.clone()]),
                record("b", vec![full.clone()]),
                record("c", vec![half.clone()]),
                record("d", vec![full.clone()]),
            ],
        )
        .unwrap();
        save_mask(&full, dir.path().join("a.png")).unwrap();
        save_mask(&half, dir.path().join("b.png")).unwrap();
        save_mask(&other, dir.path().join("c.png")).unwrap();
        let report =
            evaluate_predictions(dir.path(), &manifest, ConditioningKind::None, se).unwrap();
        let js: Vec<f64> = report.per_sample.iter().map(|s| s.jaccard).collect();
        assert_eq!(js, vec![1.0, 0.5, 0.0]);
        assert_eq!(report.mean, Some(0.5));
        assert_eq!(report.skipped, vec!["d".to_string()]);
        assert!(!report.is_complete());
    }

    #[test]
    fn evaluation_extremes() {
        let se = StructuringElement::default();
        let dir = tempfile::tempdir().unwrap();
        let truth = m(&[&[1, 0], &[1, 1]]);
        let manifest = DatasetManifest::new(
            "t",
            vec![
                record("p", vec![truth.clone()]),
                record("q", vec![truth.clone()]),
            ],
        )
        .unwrap();
        for id in ["p", "q"] {
            save_mask(&truth, dir.path().join(format!("{id}.png"))).unwrap();
        }
        let r = evaluate_predictions(dir.path(), &manifest, ConditioningKind::None, se).unwrap();
        assert_eq!(r.mean, Some(1.0));
        assert!(r.is_complete());

        let empty = BinaryMask::new(2, 2).unwrap();
        for id in ["p", "q"] {
            save_mask(&empty, dir.path().join(format!("{id}.png"))).unwrap();
        }
        let r = evaluate_predictions(dir.path(), &manifest, ConditioningKind::None, se).unwrap();
        assert_eq!(r.mean, Some(0.0));
    }

    #[test]
    fn evaluation_rejects_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            DatasetManifest::new("t", vec![record("p", vec![BinaryMask::new(2, 2).unwrap()])])
                .unwrap();
        save_mask(&BinaryMask::new(3, 3).unwrap(), dir.path().join("p.png")).unwrap();
        let err = evaluate_predictions(
            dir.path(),
            &manifest,
            ConditioningKind::None,
            StructuringElement::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("sample p"), "{err}");
    }

    proptest! {
        #[test]
        fn soft_jaccard_on_binary_maps(
            (w, h, a, b) in (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
                let n = (w * h) as usize;
                (Just(w), Just(h),
                 prop::collection::vec(any::<bool>(), n),
                 prop::collection::vec(any::<bool>(), n))
            })
        ) {
            let a = BinaryMask::from_pixels(w, h, a).unwrap();
            let b = BinaryMask::from_pixels(w, h, b).unwrap();
            let loss = soft_jaccard_loss(&ProbabilityMap::from_mask(&a), &b).unwrap();
            prop_assert!((loss - (1.0 - jaccard(&a, &b).unwrap())).abs() < 1e-5);
            prop_assert_eq!(jaccard(&a, &b).unwrap(), jaccard(&b, &a).unwrap());
        }

        #[test]
        fn stable_bce_matches_naive(x in prop::collection::vec(-10.0f64..10.0, 6), g in prop::collection::vec(any::<bool>(), 6)) {
            let mask = BinaryMask::from_pixels(3, 2, g.clone()).unwrap();
            let stable = bce_with_logits(&LogitMap::new(3, 2, x.clone()).unwrap(), &mask).unwrap();
            prop_assert!((stable - bce_naive(&x, &g)).abs() < 1e-9);
        }
    }
}
