//! Optimal bipartite matching between ground-truth objects and queries.
//!
//! The matched queries are the *optimal positives* of an image and the rest
//! are its *optimal negatives*. The split is only available when annotations
//! are, so it serves as the reference that post-processing schemes try to
//! approximate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::data::{Dataset, Detection, GroundTruthObject, ImageRecord, Subset};
use crate::error::{Error, Result};
use crate::geometry::giou;

/// Weights of the box terms in the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingCostConfig {
    pub weight_l1: f64,
    pub weight_giou: f64,
}

impl Default for MatchingCostConfig {
    fn default() -> Self {
        MatchingCostConfig {
            weight_l1: 5.0,
            weight_giou: 2.0,
        }
    }
}

impl MatchingCostConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("weight_l1", self.weight_l1), ("weight_giou", self.weight_giou)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Negative class probability of the object's label plus the weighted corner
/// L1 distance and GIoU loss.
pub fn matching_cost(det: &Detection, gt: &GroundTruthObject, cfg: &MatchingCostConfig) -> f64 {
    let class_term = -det.probs.get(gt.label).copied().unwrap_or(0.0);
    class_term
        + cfg.weight_l1 * det.bbox.l1_distance(&gt.bbox)
        + cfg.weight_giou * (1.0 - giou(&det.bbox, &gt.bbox))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Position of the object in [`ImageRecord::ground_truth`].
    pub object_index: usize,
    /// Position of the query in [`ImageRecord::detections`].
    pub query_index: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// One pair per object, ordered by object index.
    pub pairs: Vec<MatchPair>,
    /// Matched query positions, ascending.
    pub positives: Vec<usize>,
    /// Unmatched query positions, ascending.
    pub negatives: Vec<usize>,
}

/// Matches every object of `image` to a distinct query at minimum total cost.
pub fn optimal_split(image: &ImageRecord, cfg: &MatchingCostConfig) -> Result<MatchResult> {
    let n = image.ground_truth.len();
    let m = image.detections.len();
    if n > m {
        return Err(Error::InvalidInput(format!(
            "image {} has {n} objects but only {m} queries",
            image.image_id
        )));
    }
    let data: Vec<f64> = image
        .ground_truth
        .iter()
        .flat_map(|gt| image.detections.iter().map(move |d| matching_cost(d, gt, cfg)))
        .collect();
    let assignment = hungarian(&CostMatrix::new(n, m, data)?)?;

    let pairs: Vec<MatchPair> = assignment
        .row_to_col
        .iter()
        .enumerate()
        .map(|(j, &q)| MatchPair {
            object_index: j,
            query_index: q,
            cost: matching_cost(&image.detections[q], &image.ground_truth[j], cfg),
        })
        .collect();
    let mut is_positive = vec![false; m];
    for p in &pairs {
        is_positive[p.query_index] = true;
    }
    let (positives, negatives): (Vec<usize>, Vec<usize>) = (0..m).partition(|&q| is_positive[q]);
    Ok(MatchResult {
        pairs,
        positives,
        negatives,
    })
}

/// Optimal split of every image, computed in parallel.
pub fn optimal_splits(dataset: &Dataset, cfg: &MatchingCostConfig) -> Result<Vec<MatchResult>> {
    cfg.validate()?;
    dataset
        .images
        .par_iter()
        .map(|im| optimal_split(im, cfg))
        .collect()
}

/// Subset holding the optimal positives of every image.
pub fn optimal_positive_subset(dataset: &Dataset, cfg: &MatchingCostConfig) -> Result<Subset> {
    let splits = optimal_splits(dataset, cfg)?;
    Ok(Subset::from_positions(
        splits.into_iter().map(|s| s.positives).collect(),
    ))
}

/// Subset holding the optimal negatives of every image.
pub fn optimal_negative_subset(dataset: &Dataset, cfg: &MatchingCostConfig) -> Result<Subset> {
    let splits = optimal_splits(dataset, cfg)?;
    Ok(Subset::from_positions(
        splits.into_iter().map(|s| s.negatives).collect(),
    ))
}
