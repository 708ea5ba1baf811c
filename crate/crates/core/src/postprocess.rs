//! Post-processing schemes that pick a reliable subset out of the fixed-size
//! query output, and the validation-set search that fits their parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{oce, OceConfig};
use crate::data::{Dataset, Detection, Subset};
use crate::error::{Error, Result};
use crate::geometry::iou;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Threshold,
    TopK,
    Nms,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Threshold, Family::TopK, Family::Nms];

    pub fn name(self) -> &'static str {
        match self {
            Family::Threshold => "threshold",
            Family::TopK => "topk",
            Family::Nms => "nms",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Family::Threshold),
            "topk" | "top-k" => Ok(Family::TopK),
            "nms" => Ok(Family::Nms),
            other => Err(Error::InvalidInput(format!("unknown family `{other}`"))),
        }
    }
}

/// A subset-selection scheme with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessorKind {
    /// Keep detections whose confidence is at least `t`.
    Threshold(f64),
    /// Keep the `k` most confident detections.
    TopK(usize),
    /// Class-wise hard NMS suppressing IoU above the threshold.
    Nms(f64),
}

impl ProcessorKind {
    pub fn family(&self) -> Family {
        match self {
            ProcessorKind::Threshold(_) => Family::Threshold,
            ProcessorKind::TopK(_) => Family::TopK,
            ProcessorKind::Nms(_) => Family::Nms,
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            ProcessorKind::Threshold(t) => t,
            ProcessorKind::TopK(k) => k as f64,
            ProcessorKind::Nms(t) => t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ProcessorKind::Threshold(t) if !(0.0..=1.0).contains(&t) => {
                Err(Error::InvalidInput(format!("threshold {t} outside [0, 1]")))
            }
            ProcessorKind::TopK(0) => Err(Error::InvalidInput("top-k needs k >= 1".into())),
            ProcessorKind::Nms(t) if !(t > 0.0 && t <= 1.0) => {
                Err(Error::InvalidInput(format!("NMS IoU threshold {t} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Record of how a processor's parameter was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    /// Objective name, `oce` or `pcc`.
    pub objective: String,
    /// Objective value at the chosen parameter on the fitting split.
    pub value: f64,
    pub grid_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProcessorJson", into = "ProcessorJson")]
pub struct PostProcessor {
    pub kind: ProcessorKind,
    pub fit: Option<FitInfo>,
}

/// On-disk form: `{"kind": "threshold", "param": 0.25, "val_oce": 0.31, ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessorJson {
    kind: Family,
    param: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val_oce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitInfo>,
}

impl TryFrom<ProcessorJson> for PostProcessor {
    type Error = Error;

    fn try_from(j: ProcessorJson) -> Result<Self> {
        let kind = match j.kind {
            Family::Threshold => ProcessorKind::Threshold(j.param),
            Family::TopK => {
                if j.param.fract() != 0.0 || j.param < 1.0 {
                    return Err(Error::InvalidInput(format!("top-k parameter {} is not a positive integer", j.param)));
                }
                ProcessorKind::TopK(j.param as usize)
            }
            Family::Nms => ProcessorKind::Nms(j.param),
        };
        kind.validate()?;
        Ok(PostProcessor { kind, fit: j.fit })
    }
}

impl From<PostProcessor> for ProcessorJson {
    fn from(p: PostProcessor) -> Self {
        let val_oce = p
            .fit
            .as_ref()
            .filter(|f| f.objective == "oce")
            .map(|f| f.value);
        ProcessorJson {
            kind: p.kind.family(),
            param: p.kind.param(),
            val_oce,
            fit: p.fit,
        }
    }
}

impl PostProcessor {
    pub fn new(kind: ProcessorKind) -> Result<Self> {
        kind.validate()?;
        Ok(PostProcessor { kind, fit: None })
    }

    pub fn threshold(t: f64) -> Result<Self> {
        Self::new(ProcessorKind::Threshold(t))
    }

    pub fn top_k(k: usize) -> Result<Self> {
        Self::new(ProcessorKind::TopK(k))
    }

    pub fn nms(t: f64) -> Result<Self> {
        Self::new(ProcessorKind::Nms(t))
    }

    pub fn is_fitted(&self) -> bool {
        self.fit.is_some()
    }

    /// Positions of the kept detections, ascending.
    pub fn apply(&self, detections: &[Detection]) -> Vec<usize> {
        apply(&self.kind, detections)
    }

    pub fn apply_dataset(&self, dataset: &Dataset) -> Subset {
        Subset::from_positions(
            dataset
                .images
                .par_iter()
                .map(|im| self.apply(&im.detections))
                .collect(),
        )
    }
}

/// Positions sorted by descending confidence, ties by position.
fn by_confidence(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence()
            .total_cmp(&detections[a].confidence())
            .then(a.cmp(&b))
    });
    order
}

/// Applies a scheme to one image's detections and returns the kept
/// positions in ascending order.
pub fn apply(kind: &ProcessorKind, detections: &[Detection]) -> Vec<usize> {
    let mut kept = match *kind {
        ProcessorKind::Threshold(t) => (0..detections.len())
            .filter(|&q| detections[q].confidence() >= t)
            .collect(),
        ProcessorKind::TopK(k) => {
            let mut order = by_confidence(detections);
            order.truncate(k);
            order
        }
        ProcessorKind::Nms(t) => {
            let mut kept: Vec<usize> = Vec::new();
            for q in by_confidence(detections) {
                let label = detections[q].predicted_label();
                let suppressed = kept.iter().any(|&k| {
                    detections[k].predicted_label() == label
                        && iou(&detections[k].bbox, &detections[q].bbox) > t
                });
                if !suppressed {
                    kept.push(q);
                }
            }
            kept
        }
    };
    kept.sort_unstable();
    kept
}

/// Parameter grids searched by [`fit_optimal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub thresholds: Vec<f64>,
    pub top_k: Vec<usize>,
    pub nms: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            thresholds: (0..20).map(|k| k as f64 / 20.0).collect(),
            top_k: vec![1, 2, 5, 10, 20, 50, 100, 200, 300],
            nms: (1..20).map(|k| k as f64 / 20.0).collect(),
        }
    }
}

impl GridSpec {
    /// Candidate processors of `family` in ascending parameter order.
    pub fn candidates(&self, family: Family) -> Result<Vec<ProcessorKind>> {
        let kinds: Vec<ProcessorKind> = match family {
            Family::Threshold => self.thresholds.iter().map(|&t| ProcessorKind::Threshold(t)).collect(),
            Family::TopK => self.top_k.iter().map(|&k| ProcessorKind::TopK(k)).collect(),
            Family::Nms => self.nms.iter().map(|&t| ProcessorKind::Nms(t)).collect(),
        };
        if kinds.is_empty() {
            return Err(Error::InvalidInput(format!("{} grid is empty", family.name())));
        }
        for k in &kinds {
            k.validate()?;
        }
        if kinds.windows(2).any(|w| w[0].param() >= w[1].param()) {
            return Err(Error::InvalidInput(format!(
                "{} grid must be strictly increasing",
                family.name()
            )));
        }
        Ok(kinds)
    }
}

/// Evaluates `objective` at every grid point of `family` and returns the
/// processor with the best value. Ties keep the smaller parameter.
pub fn fit_with<F>(
    family: Family,
    dataset: &Dataset,
    grid: &GridSpec,
    objective_name: &str,
    minimize: bool,
    objective: F,
) -> Result<PostProcessor>
where
    F: Fn(&Dataset, &Subset) -> Result<f64> + Sync,
{
    let candidates = grid.candidates(family)?;
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|kind| {
            let subset = PostProcessor::new(*kind)?.apply_dataset(dataset);
            objective(dataset, &subset)
        })
        .collect::<Result<_>>()?;
    let better = |a: f64, b: f64| if minimize { a < b - 1e-12 } else { a > b + 1e-12 };
    let mut best = 0;
    for k in 1..values.len() {
        if better(values[k], values[best]) {
            best = k;
        }
    }
    Ok(PostProcessor {
        kind: candidates[best],
        fit: Some(FitInfo {
            objective: objective_name.to_string(),
            value: values[best],
            grid_size: candidates.len(),
        }),
    })
}

/// Picks the grid parameter of `family` minimizing OCE on `validation`.
pub fn fit_optimal(
    family: Family,
    validation: &Dataset,
    grid: &GridSpec,
    oce_cfg: &OceConfig,
) -> Result<PostProcessor> {
    if validation.num_objects() == 0 {
        return Err(Error::Undefined("OCE undefined: zero objects".into()));
    }
    fit_with(family, validation, grid, "oce", true, |ds, subset| {
        Ok(oce(ds, subset, oce_cfg)?.value)
    })
}
