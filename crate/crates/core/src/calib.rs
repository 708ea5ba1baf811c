//! Calibration errors for detection subsets.
//!
//! Two families live here. The binned errors (D-ECE, LaECE, LaECE₀) are
//! evaluated over the selected detections and therefore never see objects
//! the subset misses. The object-level calibration error (OCE) is evaluated
//! over the ground-truth objects: each object is scored with the Brier score
//! of the detections that cover it, and an uncovered object scores 1.0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Detection, GroundTruthObject, Subset};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::tp::{greedy_assign, IouCriterion, IOU_EPS};

/// Uniform confidence bins `[(j-1)/J, j/J)`, the last one closed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    pub num_bins: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig { num_bins: 10 }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins == 0 {
            return Err(Error::InvalidInput("num_bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bin_of(&self, confidence: f64) -> usize {
        let j = (confidence.clamp(0.0, 1.0) * self.num_bins as f64).floor() as usize;
        j.min(self.num_bins - 1)
    }

    pub fn bounds(&self, bin: usize) -> (f64, f64) {
        let j = self.num_bins as f64;
        (bin as f64 / j, (bin + 1) as f64 / j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OceVariant {
    /// Average the class distributions of every detection with IoU >= δ.
    #[default]
    Ens,
    /// Use the single detection with the highest IoU.
    Max,
}

/// What OCE-MAX does when the best overlap of an object is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroIouPolicy {
    /// Treat the object as uncovered (Brier 1.0).
    #[default]
    Uncovered,
    /// Keep the literal arg-max; the lowest position wins ties.
    LiteralArgmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OceConfig {
    pub variant: OceVariant,
    /// IoU thresholds averaged by the ENS variant.
    pub deltas: Vec<f64>,
    pub zero_iou_policy: ZeroIouPolicy,
    /// Bins of the report breakdown (over the mean probability of the true class).
    pub breakdown_bins: usize,
}

impl Default for OceConfig {
    fn default() -> Self {
        OceConfig {
            variant: OceVariant::Ens,
            deltas: vec![0.5, 0.75],
            zero_iou_policy: ZeroIouPolicy::Uncovered,
            breakdown_bins: 10,
        }
    }
}

impl OceConfig {
    pub fn max() -> Self {
        OceConfig {
            variant: OceVariant::Max,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == OceVariant::Ens {
            if self.deltas.is_empty() {
                return Err(Error::InvalidInput("OCE needs at least one delta".into()));
            }
            if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                return Err(Error::InvalidInput(format!("delta {d} outside (0, 1]")));
            }
        }
        if self.breakdown_bins == 0 {
            return Err(Error::InvalidInput("breakdown_bins must be at least 1".into()));
        }
        Ok(())
    }
}

/// IoU thresholds for deciding true positives in the binned errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpMatchConfig {
    pub iou_thresholds: Vec<f64>,
}

impl Default for TpMatchConfig {
    fn default() -> Self {
        TpMatchConfig {
            iou_thresholds: vec![0.5, 0.75],
        }
    }
}

impl TpMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::InvalidInput("at least one IoU threshold is required".into()));
        }
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::InvalidInput(format!("IoU threshold {t} outside [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMetric {
    OceEns,
    OceMax,
    DEce,
    LaEce,
    LaEce0,
}

impl CalibrationMetric {
    pub fn name(self) -> &'static str {
        match self {
            CalibrationMetric::OceEns => "oce_ens",
            CalibrationMetric::OceMax => "oce_max",
            CalibrationMetric::DEce => "d_ece",
            CalibrationMetric::LaEce => "la_ece",
            CalibrationMetric::LaEce0 => "la_ece0",
        }
    }
}

/// One cell of a report breakdown.
///
/// For the binned errors the cell contributes `weight * |mean_confidence - target|`.
/// For OCE the cells bin objects by the mean probability of their true class,
/// `target` is the mean Brier score in the cell and the contribution is
/// `weight * target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    /// Threshold and/or class the cell belongs to, e.g. `tau=0.5` or `class=3`.
    pub group: String,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub target: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub metric: CalibrationMetric,
    pub value: f64,
    pub breakdown: Vec<BinStat>,
    /// Set when the value is a convention rather than a measurement,
    /// e.g. an empty subset.
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
}

impl CalibrationReport {
    /// Recomputes the scalar from the breakdown.
    pub fn recompute(&self) -> f64 {
        self.breakdown
            .iter()
            .map(|b| match self.metric {
                CalibrationMetric::OceEns | CalibrationMetric::OceMax => b.weight * b.target,
                _ => b.weight * (b.mean_confidence - b.target).abs(),
            })
            .sum()
    }

    /// Writes the breakdown as CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.breakdown {
            w.serialize(b)
                .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Squared distance between `mean_probs` and the one-hot vector of `label`.
pub fn brier(mean_probs: &[f64], label: usize) -> Result<f64> {
    if label >= mean_probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            mean_probs.len()
        )));
    }
    Ok(mean_probs
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let target = if c == label { 1.0 } else { 0.0 };
            (target - p) * (target - p)
        })
        .sum())
}

/// Brier score of one object against the detections in `covering`, together
/// with the mean probability assigned to its class. Empty `covering` scores 1.
fn object_score(gt: &GroundTruthObject, covering: &[&Detection], num_classes: usize) -> Result<(f64, f64)> {
    if covering.is_empty() {
        return Ok((1.0, 0.0));
    }
    let mut mean = vec![0.0; num_classes];
    for d in covering {
        for (m, p) in mean.iter_mut().zip(&d.probs) {
            *m += p;
        }
    }
    let n = covering.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok((brier(&mean, gt.label)?, mean[gt.label]))
}

/// Per-object `(brier, true-class probability)` for one selection rule.
fn object_scores(
    dataset: &Dataset,
    subset: &Subset,
    rule: &(dyn Fn(&GroundTruthObject, &[&Detection]) -> Vec<usize> + Sync),
) -> Result<Vec<(f64, f64)>> {
    let c = dataset.num_classes();
    let per_image: Vec<Vec<(f64, f64)>> = (0..dataset.images.len())
        .into_par_iter()
        .map(|i| {
            let selected: Vec<&Detection> = subset.detections(dataset, i).collect();
            dataset.images[i]
                .ground_truth
                .iter()
                .map(|gt| {
                    let covering: Vec<&Detection> =
                        rule(gt, &selected).into_iter().map(|k| selected[k]).collect();
                    object_score(gt, &covering, c)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

fn oce_breakdown(group: String, scores: &[(f64, f64)], bins: BinningConfig, group_weight: f64) -> Vec<BinStat> {
    let n = scores.len() as f64;
    let mut count = vec![0usize; bins.num_bins];
    let mut conf = vec![0.0; bins.num_bins];
    let mut brier_sum = vec![0.0; bins.num_bins];
    for &(b, p) in scores {
        let j = bins.bin_of(p);
        count[j] += 1;
        conf[j] += p;
        brier_sum[j] += b;
    }
    (0..bins.num_bins)
        .filter(|&j| count[j] > 0)
        .map(|j| {
            let (lower, upper) = bins.bounds(j);
            let k = count[j] as f64;
            BinStat {
                group: group.clone(),
                bin: j,
                lower,
                upper,
                count: count[j],
                mean_confidence: conf[j] / k,
                target: brier_sum[j] / k,
                weight: group_weight * k / n,
            }
        })
        .collect()
}

/// Object-level calibration error of `subset`.
pub fn oce(dataset: &Dataset, subset: &Subset, cfg: &OceConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    subset.validate(dataset)?;
    if dataset.num_objects() == 0 {
        return Err(Error::Undefined("OCE undefined: zero objects".into()));
    }
    let bins = BinningConfig {
        num_bins: cfg.breakdown_bins,
    };
    let config = serde_json::to_value(cfg).expect("config serializes");

    match cfg.variant {
        OceVariant::Ens => {
            let g = cfg.deltas.len() as f64;
            let mut per_delta = Vec::with_capacity(cfg.deltas.len());
            let mut breakdown = Vec::new();
            for &delta in &cfg.deltas {
                let rule = move |gt: &GroundTruthObject, dets: &[&Detection]| -> Vec<usize> {
                    (0..dets.len())
                        .filter(|&k| iou(&gt.bbox, &dets[k].bbox) >= delta - IOU_EPS)
                        .collect()
                };
                let scores = object_scores(dataset, subset, &rule)?;
                per_delta.push(scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64);
                breakdown.extend(oce_breakdown(format!("delta={delta}"), &scores, bins, 1.0 / g));
            }
            Ok(CalibrationReport {
                metric: CalibrationMetric::OceEns,
                value: per_delta.iter().sum::<f64>() / g,
                breakdown,
                warnings: Vec::new(),
                config,
            })
        }
        OceVariant::Max => {
            let policy = cfg.zero_iou_policy;
            let rule = move |gt: &GroundTruthObject, dets: &[&Detection]| -> Vec<usize> {
                let mut best: Option<(usize, f64)> = None;
                for (k, d) in dets.iter().enumerate() {
                    let o = iou(&gt.bbox, &d.bbox);
                    if best.is_none_or(|(_, b)| o > b) {
                        best = Some((k, o));
                    }
                }
                match best {
                    Some((_, o)) if o <= 0.0 && policy == ZeroIouPolicy::Uncovered => vec![],
                    Some((k, _)) => vec![k],
                    None => vec![],
                }
            };
            let scores = object_scores(dataset, subset, &rule)?;
            let value = scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64;
            Ok(CalibrationReport {
                metric: CalibrationMetric::OceMax,
                value,
                breakdown: oce_breakdown("max".into(), &scores, bins, 1.0),
                warnings: Vec::new(),
                config,
            })
        }
    }
}

/// Accumulator for one bin: count, confidence sum, target sum.
#[derive(Debug, Clone, Copy, Default)]
struct BinAcc {
    count: usize,
    conf: f64,
    target: f64,
}

fn binned_stats(group: &str, accs: &[BinAcc], bins: BinningConfig, group_weight: f64) -> Vec<BinStat> {
    let total: usize = accs.iter().map(|a| a.count).sum();
    accs.iter()
        .enumerate()
        .filter(|(_, a)| a.count > 0)
        .map(|(j, a)| {
            let (lower, upper) = bins.bounds(j);
            let k = a.count as f64;
            BinStat {
                group: group.to_string(),
                bin: j,
                lower,
                upper,
                count: a.count,
                mean_confidence: a.conf / k,
                target: a.target / k,
                weight: group_weight * k / total as f64,
            }
        })
        .collect()
}

fn sum_gaps(stats: &[BinStat]) -> f64 {
    stats
        .iter()
        .map(|b| b.weight * (b.mean_confidence - b.target).abs())
        .sum()
}

const EMPTY_SUBSET_WARNING: &str = "empty subset: value is 0 by convention";

/// Detection expected calibration error: confidence against precision over
/// the pooled detections, averaged over the IoU thresholds.
pub fn d_ece(
    dataset: &Dataset,
    subset: &Subset,
    bins: &BinningConfig,
    tp: &TpMatchConfig,
) -> Result<CalibrationReport> {
    bins.validate()?;
    tp.validate()?;
    subset.validate(dataset)?;
    let config = serde_json::json!({ "bins": bins, "tp": tp });
    if subset.is_empty() {
        return Ok(CalibrationReport {
            metric: CalibrationMetric::DEce,
            value: 0.0,
            breakdown: Vec::new(),
            warnings: vec![EMPTY_SUBSET_WARNING.into()],
            config,
        });
    }
    let g = tp.iou_thresholds.len() as f64;
    let mut breakdown = Vec::new();
    let mut value = 0.0;
    for &tau in &tp.iou_thresholds {
        let records: Vec<_> = (0..dataset.images.len())
            .into_par_iter()
            .map(|i| greedy_assign(&dataset.images[i], subset.image(i), IouCriterion::Exceeds(tau)))
            .collect();
        let mut accs = vec![BinAcc::default(); bins.num_bins];
        for r in records.iter().flatten() {
            let a = &mut accs[bins.bin_of(r.confidence)];
            a.count += 1;
            a.conf += r.confidence;
            a.target += if r.is_tp { 1.0 } else { 0.0 };
        }
        let stats = binned_stats(&format!("tau={tau}"), &accs, *bins, 1.0 / g);
        value += sum_gaps(&stats);
        breakdown.extend(stats);
    }
    Ok(CalibrationReport {
        metric: CalibrationMetric::DEce,
        value,
        breakdown,
        warnings: Vec::new(),
        config,
    })
}

fn la_ece_impl(
    dataset: &Dataset,
    subset: &Subset,
    bins: &BinningConfig,
    tau: f64,
    metric: CalibrationMetric,
) -> Result<CalibrationReport> {
    bins.validate()?;
    subset.validate(dataset)?;
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("IoU threshold {tau} outside [0, 1)")));
    }
    let config = serde_json::json!({ "bins": bins, "tau": tau });
    if subset.is_empty() {
        return Ok(CalibrationReport {
            metric,
            value: 0.0,
            breakdown: Vec::new(),
            warnings: vec![EMPTY_SUBSET_WARNING.into()],
            config,
        });
    }
    let records: Vec<_> = (0..dataset.images.len())
        .into_par_iter()
        .map(|i| greedy_assign(&dataset.images[i], subset.image(i), IouCriterion::Exceeds(tau)))
        .collect();
    let mut per_class = vec![vec![BinAcc::default(); bins.num_bins]; dataset.num_classes()];
    for r in records.iter().flatten() {
        let a = &mut per_class[r.label][bins.bin_of(r.confidence)];
        a.count += 1;
        a.conf += r.confidence;
        // precision times mean TP IoU == summed TP IoU over the bin count
        a.target += r.iou;
    }
    let active: Vec<usize> = (0..per_class.len())
        .filter(|&c| per_class[c].iter().any(|a| a.count > 0))
        .collect();
    let k = active.len() as f64;
    let mut breakdown = Vec::new();
    let mut value = 0.0;
    for &c in &active {
        let stats = binned_stats(&format!("class={c}"), &per_class[c], *bins, 1.0 / k);
        value += sum_gaps(&stats);
        breakdown.extend(stats);
    }
    Ok(CalibrationReport {
        metric,
        value,
        breakdown,
        warnings: Vec::new(),
        config,
    })
}

/// Localization-aware ECE: per class, confidence against precision times
/// mean IoU of the true positives, averaged over the predicted classes.
pub fn la_ece(dataset: &Dataset, subset: &Subset, bins: &BinningConfig, tau: f64) -> Result<CalibrationReport> {
    la_ece_impl(dataset, subset, bins, tau, CalibrationMetric::LaEce)
}

/// LaECE with `tau = 0`: the target is the mean IoU of the bin with
/// non-matching detections counted as zero.
pub fn la_ece0(dataset: &Dataset, subset: &Subset, bins: &BinningConfig) -> Result<CalibrationReport> {
    la_ece_impl(dataset, subset, bins, 0.0, CalibrationMetric::LaEce0)
}
