//! Experiment driver: image-level reliability, correlation tables, model
//! ranking and threshold sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{d_ece, la_ece0, oce, BinningConfig, OceConfig, TpMatchConfig};
use crate::data::{Dataset, ImageRecord, Subset};
use crate::error::{Error, Result};
use crate::matching::{optimal_positive_subset, MatchingCostConfig};
use crate::perf::{coco_ap, coco_ap_items, lrp_avg};
use crate::postprocess::{fit_with, Family, GridSpec, PostProcessor};
use crate::uq::{contrastive_from_positives, UqConfig};

/// Image-level reliability: COCO-style AP of the selected detections of a
/// single image, averaged over the classes present in its annotations.
pub fn im_reli(image: &ImageRecord, selected: &[usize]) -> Result<f64> {
    if image.ground_truth.is_empty() {
        return Err(Error::Undefined(format!(
            "ImReli undefined: image {} has no objects",
            image.image_id
        )));
    }
    let num_classes = image
        .detections
        .iter()
        .map(|d| d.probs.len())
        .chain(image.ground_truth.iter().map(|g| g.label + 1))
        .max()
        .unwrap_or(0);
    coco_ap_items(&[(image, selected)], num_classes)
}

/// Sample Pearson correlation.
pub fn pcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "PCC needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("PCC undefined: fewer than two samples".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // relative guard: constant series leave only rounding residue
    let tiny = |ss: f64, m: f64| ss <= 1e-24 * n * (1.0 + m * m);
    if tiny(sxx, mx) || tiny(syy, my) {
        return Err(Error::Undefined("PCC undefined: zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-image score under evaluation.
pub trait ImageScorer: Sync {
    fn score(&self, image: &ImageRecord) -> Result<f64>;
}

impl<F> ImageScorer for F
where
    F: Fn(&ImageRecord) -> Result<f64> + Sync,
{
    fn score(&self, image: &ImageRecord) -> Result<f64> {
        self(image)
    }
}

/// Detections ImReli is measured on.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ReliabilityReference {
    #[default]
    FullSet,
    Processor(PostProcessor),
}

impl ReliabilityReference {
    fn select(&self, image: &ImageRecord) -> Vec<usize> {
        match self {
            ReliabilityReference::FullSet => (0..image.detections.len()).collect(),
            ReliabilityReference::Processor(p) => p.apply(&image.detections),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub method: String,
    /// `None` when the correlation is undefined (see `note`).
    pub pcc: Option<f64>,
    pub samples: usize,
    /// Images skipped because they have no objects.
    pub excluded: usize,
    pub note: Option<String>,
}

/// ImReli of every image that has objects, with the positions of those images.
pub fn reliability_column(dataset: &Dataset, reference: &ReliabilityReference) -> Result<(Vec<usize>, Vec<f64>)> {
    let kept: Vec<usize> = (0..dataset.images.len())
        .filter(|&i| !dataset.images[i].ground_truth.is_empty())
        .collect();
    let values = kept
        .par_iter()
        .map(|&i| {
            let im = &dataset.images[i];
            im_reli(im, &reference.select(im))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((kept, values))
}

/// Correlates each method's per-image score with ImReli measured on a fixed
/// reference subset. Images without objects are excluded from every row.
pub fn evaluate_uq(
    dataset: &Dataset,
    methods: &[(&str, &dyn ImageScorer)],
    reference: &ReliabilityReference,
) -> Result<Vec<CorrelationRow>> {
    let (kept, reli) = reliability_column(dataset, reference)?;
    if kept.len() < 2 {
        return Err(Error::Undefined(
            "UQ evaluation needs at least two images with objects".into(),
        ));
    }
    let excluded = dataset.images.len() - kept.len();
    Ok(methods
        .iter()
        .map(|(name, scorer)| {
            let scores: Result<Vec<f64>> = kept
                .par_iter()
                .map(|&i| scorer.score(&dataset.images[i]))
                .collect();
            let (pcc, note) = match scores.and_then(|s| pcc(&s, &reli)) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            CorrelationRow {
                method: name.to_string(),
                pcc,
                samples: kept.len(),
                excluded,
                note,
            }
        })
        .collect())
}

/// Metric used for model ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMetric {
    Oce,
    OceMax,
    DEce,
    LaEce0,
    Lrp,
    CocoAp,
}

impl ModelMetric {
    pub fn name(self) -> &'static str {
        match self {
            ModelMetric::Oce => "OCE",
            ModelMetric::OceMax => "OCE_MAX",
            ModelMetric::DEce => "D-ECE",
            ModelMetric::LaEce0 => "LaECE0",
            ModelMetric::Lrp => "LRP",
            ModelMetric::CocoAp => "AP",
        }
    }
}

/// How the evaluated subset of a model is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum SubsetScheme {
    Full,
    /// Ground-truth matched queries.
    OptimalPositives,
    Fixed(PostProcessor),
    /// Threshold family fitted on the model's own data by minimizing OCE.
    FitOce(Family),
    /// Family fitted by minimizing LRP.
    FitLrp(Family),
}

impl SubsetScheme {
    pub fn name(&self) -> String {
        match self {
            SubsetScheme::Full => "full".into(),
            SubsetScheme::OptimalPositives => "optimal".into(),
            SubsetScheme::Fixed(p) => format!("{}={}", p.kind.family().name(), p.kind.param()),
            SubsetScheme::FitOce(f) => format!("{} fit by OCE", f.name()),
            SubsetScheme::FitLrp(f) => format!("{} fit by LRP", f.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub metric: ModelMetric,
    pub scheme: SubsetScheme,
}

impl MetricSpec {
    pub fn new(metric: ModelMetric, scheme: SubsetScheme) -> Self {
        MetricSpec { metric, scheme }
    }

    pub fn name(&self) -> String {
        format!("{} ({})", self.metric.name(), self.scheme.name())
    }
}

/// Shared configuration of the evaluation helpers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub matching: MatchingCostConfig,
    pub oce: OceConfig,
    pub binning: BinningConfig,
    pub tp: TpMatchConfig,
    pub grid: GridSpec,
}

pub fn scheme_subset(dataset: &Dataset, scheme: &SubsetScheme, settings: &EvalSettings) -> Result<Subset> {
    match scheme {
        SubsetScheme::Full => Ok(Subset::full(dataset)),
        SubsetScheme::OptimalPositives => optimal_positive_subset(dataset, &settings.matching),
        SubsetScheme::Fixed(p) => Ok(p.apply_dataset(dataset)),
        SubsetScheme::FitOce(f) => {
            let oce_cfg = settings.oce.clone();
            let p = fit_with(*f, dataset, &settings.grid, "oce", true, move |ds, s| {
                Ok(oce(ds, s, &oce_cfg)?.value)
            })?;
            Ok(p.apply_dataset(dataset))
        }
        SubsetScheme::FitLrp(f) => {
            let p = fit_with(*f, dataset, &settings.grid, "lrp", true, lrp_avg)?;
            Ok(p.apply_dataset(dataset))
        }
    }
}

pub fn evaluate_metric(dataset: &Dataset, subset: &Subset, metric: ModelMetric, settings: &EvalSettings) -> Result<f64> {
    match metric {
        ModelMetric::Oce => Ok(oce(dataset, subset, &settings.oce)?.value),
        ModelMetric::OceMax => Ok(oce(
            dataset,
            subset,
            &OceConfig {
                variant: crate::calib::OceVariant::Max,
                ..settings.oce.clone()
            },
        )?
        .value),
        ModelMetric::DEce => Ok(d_ece(dataset, subset, &settings.binning, &settings.tp)?.value),
        ModelMetric::LaEce0 => Ok(la_ece0(dataset, subset, &settings.binning)?.value),
        ModelMetric::Lrp => lrp_avg(dataset, subset),
        ModelMetric::CocoAp => coco_ap(dataset, subset),
    }
}

pub fn evaluate_spec(dataset: &Dataset, spec: &MetricSpec, settings: &EvalSettings) -> Result<f64> {
    let subset = scheme_subset(dataset, &spec.scheme, settings)?;
    evaluate_metric(dataset, &subset, spec.metric, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub references: Vec<String>,
    pub candidates: Vec<String>,
    /// `reference_scores[r][m]`: reference `r` on model `m`.
    pub reference_scores: Vec<Vec<f64>>,
    pub candidate_scores: Vec<Vec<f64>>,
    /// `pcc[c][r]` across models; `None` when undefined.
    pub pcc: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

/// Correlates candidate metrics with reference metrics across models.
pub fn rank_models(
    models: &[Dataset],
    references: &[MetricSpec],
    candidates: &[MetricSpec],
    settings: &EvalSettings,
) -> Result<RankingTable> {
    if models.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "ranking needs at least 3 models, got {}",
            models.len()
        )));
    }
    let mut warnings = Vec::new();
    if models.len() == 3 {
        warnings.push("only 3 models: correlations are weakly determined".to_string());
    }
    let score_all = |specs: &[MetricSpec]| -> Result<Vec<Vec<f64>>> {
        specs
            .iter()
            .map(|spec| models.iter().map(|ds| evaluate_spec(ds, spec, settings)).collect())
            .collect()
    };
    let reference_scores = score_all(references)?;
    let candidate_scores = score_all(candidates)?;
    let pcc_matrix = candidate_scores
        .iter()
        .map(|c| reference_scores.iter().map(|r| pcc(c, r).ok()).collect())
        .collect();
    Ok(RankingTable {
        references: references.iter().map(MetricSpec::name).collect(),
        candidates: candidates.iter().map(MetricSpec::name).collect(),
        reference_scores,
        candidate_scores,
        pcc: pcc_matrix,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub coco_ap: f64,
    pub d_ece: f64,
    pub la_ece0: f64,
    pub lrp: f64,
    pub oce: f64,
}

/// Metrics of confidence-thresholded subsets over a threshold grid.
pub fn threshold_sweep(dataset: &Dataset, thresholds: &[f64], settings: &EvalSettings) -> Result<Vec<SweepRow>> {
    thresholds
        .par_iter()
        .map(|&t| {
            let subset = PostProcessor::threshold(t)?.apply_dataset(dataset);
            Ok(SweepRow {
                threshold: t,
                coco_ap: coco_ap(dataset, &subset)?,
                d_ece: d_ece(dataset, &subset, &settings.binning, &settings.tp)?.value,
                la_ece0: la_ece0(dataset, &subset, &settings.binning)?.value,
                lrp: lrp_avg(dataset, &subset)?,
                oce: oce(dataset, &subset, &settings.oce)?.value,
            })
        })
        .collect()
}

/// Fits `family` by maximizing the PCC between contrastive confidence and
/// ImReli on `validation`.
pub fn fit_by_pcc(family: Family, validation: &Dataset, grid: &GridSpec, uq_cfg: &UqConfig) -> Result<PostProcessor> {
    let (kept, reli) = reliability_column(validation, &ReliabilityReference::FullSet)?;
    fit_with(family, validation, grid, "pcc", false, |ds, subset| {
        let scores: Vec<f64> = kept
            .iter()
            .map(|&i| contrastive_from_positives(&ds.images[i], subset.image(i), uq_cfg).map(|s| s.contrastive))
            .collect::<Result<_>>()?;
        // an undefined correlation never wins
        Ok(pcc(&scores, &reli).unwrap_or(f64::NEG_INFINITY))
    })
}

/// Per-image contrastive scores for a fitted processor, in dataset order.
pub fn contrastive_scores(dataset: &Dataset, proc: &PostProcessor, cfg: &UqConfig) -> Result<Vec<crate::uq::UqScore>> {
    dataset
        .images
        .par_iter()
        .map(|im| crate::uq::contrastive_conf(im, proc, cfg))
        .collect()
}

/// Convenience for reports: a fitted processor of each family.
pub fn fit_all_families(validation: &Dataset, grid: &GridSpec, oce_cfg: &OceConfig) -> Result<Vec<PostProcessor>> {
    Family::ALL
        .iter()
        .map(|&f| crate::postprocess::fit_optimal(f, validation, grid, oce_cfg))
        .collect()
}
