//! Image-level uncertainty from the confidence gap between the predicted
//! positives and the remaining queries.

use serde::{Deserialize, Serialize};

use crate::data::{Detection, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::postprocess::PostProcessor;

/// Which queries are contrasted against the positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// Every query that is not a positive.
    EntireNegatives,
    /// The `k` most confident non-positive queries.
    TopKNegatives { k: usize },
    /// The `k` most confident queries overall, positives included.
    /// Experimental.
    TopKPositivesAsNegatives { k: usize },
    /// Non-positive queries overlapping some positive with IoU >= `delta`.
    Confounding { delta: f64 },
}

impl std::str::FromStr for NegativeStrategy {
    type Err = Error;

    /// Parses `entire`, `topk:K`, `topk-all:K` or `confounding:DELTA`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let bad = || Error::InvalidInput(format!("bad negative strategy `{s}`"));
        let k = |default: usize| -> Result<usize> {
            arg.map_or(Ok(default), |a| a.parse().map_err(|_| bad()))
        };
        let strategy = match name {
            "entire" => NegativeStrategy::EntireNegatives,
            "topk" => NegativeStrategy::TopKNegatives { k: k(100)? },
            "topk-all" => NegativeStrategy::TopKPositivesAsNegatives { k: k(100)? },
            "confounding" => NegativeStrategy::Confounding {
                delta: arg.map_or(Ok(0.5), |a| a.parse().map_err(|_| bad()))?,
            },
            _ => return Err(bad()),
        };
        Ok(strategy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    /// Weight of the negative term. Larger values lean harder on the
    /// negatives; 5 to 10 is a reasonable range to try.
    pub lambda: f64,
    pub negative_strategy: NegativeStrategy,
}

impl Default for UqConfig {
    fn default() -> Self {
        UqConfig {
            lambda: 1.0,
            negative_strategy: NegativeStrategy::EntireNegatives,
        }
    }
}

impl UqConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidInput(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        match self.negative_strategy {
            NegativeStrategy::TopKNegatives { k: 0 } | NegativeStrategy::TopKPositivesAsNegatives { k: 0 } => {
                Err(Error::InvalidInput("negative strategy needs k >= 1".into()))
            }
            NegativeStrategy::Confounding { delta } if !(0.0..=1.0).contains(&delta) => {
                Err(Error::InvalidInput(format!("confounding delta {delta} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Mean confidence with a flag raised when the set was empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanConfidence {
    pub value: f64,
    pub empty: bool,
}

fn mean_confidence<'a>(dets: impl IntoIterator<Item = &'a Detection>) -> MeanConfidence {
    let (sum, n) = dets
        .into_iter()
        .fold((0.0, 0usize), |(s, n), d| (s + d.confidence(), n + 1));
    if n == 0 {
        MeanConfidence {
            value: 0.0,
            empty: true,
        }
    } else {
        MeanConfidence {
            value: sum / n as f64,
            empty: false,
        }
    }
}

/// Mean max-class confidence of the positives; 0 when there are none.
pub fn conf_plus<'a>(positives: impl IntoIterator<Item = &'a Detection>) -> MeanConfidence {
    mean_confidence(positives)
}

/// Mean max-class confidence of the negatives; 0 when there are none.
pub fn conf_minus<'a>(negatives: impl IntoIterator<Item = &'a Detection>) -> MeanConfidence {
    mean_confidence(negatives)
}

/// Positions in `negatives` whose box overlaps some positive with IoU >= `delta`.
pub fn confounding_negatives(positives: &[&Detection], negatives: &[&Detection], delta: f64) -> Vec<usize> {
    if positives.is_empty() {
        return Vec::new();
    }
    (0..negatives.len())
        .filter(|&k| {
            positives
                .iter()
                .map(|p| iou(&negatives[k].bbox, &p.bbox))
                .fold(f64::NEG_INFINITY, f64::max)
                >= delta
        })
        .collect()
}

fn top_by_confidence(detections: &[Detection], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence()
            .total_cmp(&detections[a].confidence())
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Negative positions chosen by `strategy` given the positive positions.
pub fn select_negatives(detections: &[Detection], positives: &[usize], strategy: NegativeStrategy) -> Vec<usize> {
    let mut is_pos = vec![false; detections.len()];
    for &q in positives {
        is_pos[q] = true;
    }
    let complement: Vec<usize> = (0..detections.len()).filter(|&q| !is_pos[q]).collect();
    match strategy {
        NegativeStrategy::EntireNegatives => complement,
        NegativeStrategy::TopKNegatives { k } => top_by_confidence(detections, &complement, k),
        NegativeStrategy::TopKPositivesAsNegatives { k } => {
            let all: Vec<usize> = (0..detections.len()).collect();
            top_by_confidence(detections, &all, k)
        }
        NegativeStrategy::Confounding { delta } => {
            let pos: Vec<&Detection> = positives.iter().map(|&q| &detections[q]).collect();
            let neg: Vec<&Detection> = complement.iter().map(|&q| &detections[q]).collect();
            confounding_negatives(&pos, &neg, delta)
                .into_iter()
                .map(|k| complement[k])
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqScore {
    pub image_id: u64,
    pub conf_plus: f64,
    pub conf_minus: f64,
    /// `conf_plus - lambda * conf_minus`.
    pub contrastive: f64,
    pub lambda: f64,
    pub num_positives: usize,
    pub num_negatives: usize,
    pub empty_positives: bool,
    pub empty_negatives: bool,
}

/// Contrastive score for explicit positive positions.
pub fn contrastive_from_positives(image: &ImageRecord, positives: &[usize], cfg: &UqConfig) -> Result<UqScore> {
    cfg.validate()?;
    let negatives = select_negatives(&image.detections, positives, cfg.negative_strategy);
    let plus = conf_plus(positives.iter().map(|&q| &image.detections[q]));
    let minus = conf_minus(negatives.iter().map(|&q| &image.detections[q]));
    Ok(UqScore {
        image_id: image.image_id,
        conf_plus: plus.value,
        conf_minus: minus.value,
        contrastive: plus.value - cfg.lambda * minus.value,
        lambda: cfg.lambda,
        num_positives: positives.len(),
        num_negatives: negatives.len(),
        empty_positives: plus.empty,
        empty_negatives: minus.empty,
    })
}

/// Scores `image` with positives taken from a fitted post-processor.
pub fn contrastive_conf(image: &ImageRecord, proc: &PostProcessor, cfg: &UqConfig) -> Result<UqScore> {
    if !proc.is_fitted() {
        return Err(Error::InvalidInput(
            "contrastive confidence needs a fitted post-processor".into(),
        ));
    }
    contrastive_from_positives(image, &proc.apply(&image.detections), cfg)
}
