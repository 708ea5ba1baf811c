//! Greedy true-positive assignment shared by the calibration and
//! performance metrics.

use crate::data::ImageRecord;
use crate::geometry::iou;

/// Slack applied to inclusive IoU comparisons so that thresholds such as
/// 0.55 are not missed by one ulp.
pub const IOU_EPS: f64 = 1e-12;

/// How an overlap qualifies a detection as a true positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IouCriterion {
    /// `IoU >= t` (COCO evaluator convention).
    AtLeast(f64),
    /// `IoU > t`.
    Exceeds(f64),
}

impl IouCriterion {
    pub fn accepts(self, overlap: f64) -> bool {
        match self {
            IouCriterion::AtLeast(t) => overlap >= t - IOU_EPS,
            IouCriterion::Exceeds(t) => overlap > t,
        }
    }
}

/// Outcome for one selected detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpRecord {
    /// Position in [`ImageRecord::detections`].
    pub position: usize,
    pub confidence: f64,
    pub label: usize,
    pub is_tp: bool,
    /// IoU with the matched object; zero for false positives.
    pub iou: f64,
    /// Matched object position, if any.
    pub object: Option<usize>,
}

/// Greedily assigns the `selected` detections of `image` to objects.
///
/// Detections are visited by descending confidence (ties by position). Each
/// takes the unmatched object of its predicted class with the highest IoU
/// that satisfies `criterion`; every object is used at most once. Records are
/// returned in visiting order.
pub fn greedy_assign(image: &ImageRecord, selected: &[usize], criterion: IouCriterion) -> Vec<TpRecord> {
    let mut order: Vec<usize> = selected.to_vec();
    let conf = |q: usize| image.detections[q].confidence();
    order.sort_by(|&a, &b| conf(b).total_cmp(&conf(a)).then(a.cmp(&b)));

    let mut taken = vec![false; image.ground_truth.len()];
    order
        .into_iter()
        .map(|q| {
            let det = &image.detections[q];
            let label = det.predicted_label();
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in image.ground_truth.iter().enumerate() {
                if taken[j] || gt.label != label {
                    continue;
                }
                let overlap = iou(&det.bbox, &gt.bbox);
                if !criterion.accepts(overlap) {
                    continue;
                }
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((j, overlap));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            TpRecord {
                position: q,
                confidence: det.confidence(),
                label,
                is_tp: best.is_some(),
                iou: best.map_or(0.0, |(_, o)| o),
                object: best.map(|(j, _)| j),
            }
        })
        .collect()
}
