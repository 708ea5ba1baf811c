//! Detection performance: 101-point interpolated AP and LRP.
//!
//! This is a re-implementation of the COCO evaluator restricted to a single
//! area range with no cap on detections per image.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageRecord, Subset};
use crate::error::{Error, Result};
use crate::tp::{greedy_assign, IouCriterion, TpRecord};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Precision/recall along detections sorted by descending confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(confidence, is_tp, iou)` in curve order.
    pub records: Vec<(f64, bool, f64)>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub num_gt: usize,
}

impl PrCurve {
    /// Builds the curve; `records` must already be in ranking order.
    pub fn new(records: Vec<(f64, bool, f64)>, num_gt: usize) -> Self {
        let mut tp = 0usize;
        let mut precision = Vec::with_capacity(records.len());
        let mut recall = Vec::with_capacity(records.len());
        for (k, &(_, is_tp, _)) in records.iter().enumerate() {
            tp += is_tp as usize;
            precision.push(tp as f64 / (k + 1) as f64);
            recall.push(if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 });
        }
        PrCurve {
            records,
            precision,
            recall,
            num_gt,
        }
    }

    /// Mean over r in {0, 0.01, ..., 1} of the best precision at recall >= r.
    pub fn interpolated_ap(&self) -> f64 {
        // envelope[k] = max precision at positions >= k
        let mut envelope = self.precision.clone();
        for k in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[k] = envelope[k].max(envelope[k + 1]);
        }
        let mut sum = 0.0;
        let mut k = 0;
        for step in 0..=100 {
            let r = step as f64 / 100.0;
            while k < self.recall.len() && self.recall[k] < r {
                k += 1;
            }
            if k < envelope.len() {
                sum += envelope[k];
            }
        }
        sum / 101.0
    }
}

type Selection<'a> = (&'a ImageRecord, &'a [usize]);

fn selections<'a>(dataset: &'a Dataset, subset: &'a Subset) -> Result<Vec<Selection<'a>>> {
    subset.validate(dataset)?;
    Ok(dataset
        .images
        .iter()
        .enumerate()
        .map(|(i, im)| (im, subset.image(i)))
        .collect())
}

fn assign_all(items: &[Selection<'_>], criterion: IouCriterion) -> Vec<Vec<TpRecord>> {
    items
        .iter()
        .map(|(im, sel)| greedy_assign(im, sel, criterion))
        .collect()
}

/// Per-class AP at one IoU threshold; `None` for classes without objects.
pub(crate) fn ap_per_class(items: &[Selection<'_>], num_classes: usize, threshold: f64) -> Vec<Option<f64>> {
    let assigned = assign_all(items, IouCriterion::AtLeast(threshold));
    let mut num_gt = vec![0usize; num_classes];
    for (im, _) in items {
        for gt in &im.ground_truth {
            num_gt[gt.label] += 1;
        }
    }
    // (confidence, image order, position) ranking, stable across images
    let mut per_class: Vec<Vec<(f64, usize, usize, bool, f64)>> = vec![Vec::new(); num_classes];
    for (i, recs) in assigned.iter().enumerate() {
        for r in recs {
            per_class[r.label].push((r.confidence, i, r.position, r.is_tp, r.iou));
        }
    }
    per_class
        .into_iter()
        .enumerate()
        .map(|(c, mut recs)| {
            if num_gt[c] == 0 {
                return None;
            }
            recs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let curve = PrCurve::new(recs.into_iter().map(|r| (r.0, r.3, r.4)).collect(), num_gt[c]);
            Some(curve.interpolated_ap())
        })
        .collect()
}

pub(crate) fn ap_items(items: &[Selection<'_>], num_classes: usize, threshold: f64) -> Result<f64> {
    let scored: Vec<f64> = ap_per_class(items, num_classes, threshold)
        .into_iter()
        .flatten()
        .collect();
    if scored.is_empty() {
        return Err(Error::Undefined("AP undefined: no ground-truth objects".into()));
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

pub(crate) fn coco_ap_items(items: &[Selection<'_>], num_classes: usize) -> Result<f64> {
    let thresholds = coco_iou_thresholds();
    let mut sum = 0.0;
    for &t in &thresholds {
        sum += ap_items(items, num_classes, t)?;
    }
    Ok(sum / thresholds.len() as f64)
}

/// AP at one IoU threshold, averaged over classes that have objects.
pub fn average_precision(dataset: &Dataset, subset: &Subset, iou_threshold: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::InvalidInput(format!(
            "IoU threshold {iou_threshold} outside [0, 1]"
        )));
    }
    ap_items(&selections(dataset, subset)?, dataset.num_classes(), iou_threshold)
}

/// AP averaged over IoU thresholds 0.50:0.05:0.95.
pub fn coco_ap(dataset: &Dataset, subset: &Subset) -> Result<f64> {
    coco_ap_items(&selections(dataset, subset)?, dataset.num_classes())
}

/// Localization recall precision error at IoU threshold `tau`.
pub fn lrp(dataset: &Dataset, subset: &Subset, tau: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("LRP threshold {tau} outside [0, 1)")));
    }
    let items = selections(dataset, subset)?;
    let assigned = assign_all(&items, IouCriterion::AtLeast(tau));
    let num_gt: usize = items.iter().map(|(im, _)| im.ground_truth.len()).sum();
    let mut n_tp = 0usize;
    let mut n_fp = 0usize;
    let mut loc = 0.0;
    for r in assigned.iter().flatten() {
        if r.is_tp {
            n_tp += 1;
            loc += (1.0 - r.iou) / (1.0 - tau);
        } else {
            n_fp += 1;
        }
    }
    let n_fn = num_gt - n_tp;
    let denom = n_tp + n_fp + n_fn;
    if denom == 0 {
        return Err(Error::Undefined(
            "LRP undefined: no detections and no objects".into(),
        ));
    }
    Ok((n_fp as f64 + n_fn as f64 + loc) / denom as f64)
}

/// Mean of LRP at 0.5 and 0.75.
pub fn lrp_avg(dataset: &Dataset, subset: &Subset) -> Result<f64> {
    Ok((lrp(dataset, subset, 0.5)? + lrp(dataset, subset, 0.75)?) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSummary {
    /// AP at the requested IoU threshold.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub coco_ap: f64,
    /// Mean of LRP at 0.5 and 0.75.
    pub lrp: f64,
}

pub fn performance_summary(dataset: &Dataset, subset: &Subset, iou_threshold: f64) -> Result<PerformanceSummary> {
    Ok(PerformanceSummary {
        ap: average_precision(dataset, subset, iou_threshold)?,
        ap50: average_precision(dataset, subset, 0.5)?,
        ap75: average_precision(dataset, subset, 0.75)?,
        coco_ap: coco_ap(dataset, subset)?,
        lrp: lrp_avg(dataset, subset)?,
    })
}
