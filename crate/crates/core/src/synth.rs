//! Seeded generator of synthetic detection sets.
//!
//! Every image draws from its own ChaCha8 stream (`stream = image index`), so
//! the content of an image depends only on the seed and its index. Each image
//! gets a hidden difficulty in `[0, 1]`; harder images have lower positive
//! confidence, noisier positive boxes and, under
//! [`NegativeModel::InverseCoupled`], more confident negatives.
//!
//! Per object the generator emits one intended positive plus a few
//! near-duplicate negatives around the object; the remaining queries are
//! random boxes. Query order is shuffled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Category, Dataset, Detection, GroundTruthObject, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Confidence model of the intended positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositiveCalibration {
    /// Exact boxes, one-hot probability 1 at the true class.
    Perfect,
    /// Confidence equals the probability of the class being right, plus
    /// Gaussian noise of the given standard deviation.
    Calibrated { noise: f64 },
    /// Confidence shifted up by `bias`.
    Overconfident { bias: f64 },
    /// Confidence shifted down by `bias`.
    Underconfident { bias: f64 },
}

/// Confidence model of the negatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NegativeModel {
    /// Confidences uniform on `[0, 2 * mean]`, independent of difficulty.
    LowFlat { mean: f64 },
    /// Confidences rise with image difficulty at the given strength.
    InverseCoupled { strength: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_images: usize,
    /// Inclusive `[min, max]` objects per image.
    pub objects_per_image: [usize; 2],
    pub num_classes: usize,
    pub num_queries: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub positive_calibration: PositiveCalibration,
    pub negative_model: NegativeModel,
    /// Inclusive range the per-image difficulty is drawn from.
    pub difficulty: [f64; 2],
    /// Standard deviation of positive corner jitter, relative to box size,
    /// at zero difficulty. Quadruples at full difficulty.
    pub box_noise: f64,
    /// Inclusive `[min, max]` near-duplicate negatives per object.
    pub duplicates_per_object: [usize; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            num_images: 200,
            objects_per_image: [1, 6],
            num_classes: 5,
            num_queries: 100,
            image_width: 640,
            image_height: 480,
            positive_calibration: PositiveCalibration::Calibrated { noise: 0.05 },
            negative_model: NegativeModel::InverseCoupled { strength: 1.0 },
            difficulty: [0.0, 1.0],
            box_noise: 0.03,
            duplicates_per_object: [1, 4],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.objects_per_image;
        if lo > hi {
            return Err(Error::InvalidInput("objects_per_image min exceeds max".into()));
        }
        if self.num_queries < hi {
            return Err(Error::InvalidInput(format!(
                "num_queries {} is smaller than the maximum object count {hi}",
                self.num_queries
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidInput("num_classes must be at least 2".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        let [d0, d1] = self.difficulty;
        if !(0.0 <= d0 && d0 <= d1 && d1 <= 1.0) {
            return Err(Error::InvalidInput("difficulty range must lie in [0, 1]".into()));
        }
        if self.duplicates_per_object[0] > self.duplicates_per_object[1] {
            return Err(Error::InvalidInput("duplicates_per_object min exceeds max".into()));
        }
        let params = [self.box_noise, self.calibration_param(), self.negative_param()];
        if params.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("noise, bias and strength parameters must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn calibration_param(&self) -> f64 {
        match self.positive_calibration {
            PositiveCalibration::Perfect => 0.0,
            PositiveCalibration::Calibrated { noise } => noise,
            PositiveCalibration::Overconfident { bias } | PositiveCalibration::Underconfident { bias } => bias,
        }
    }

    fn negative_param(&self) -> f64 {
        match self.negative_model {
            NegativeModel::LowFlat { mean } => mean,
            NegativeModel::InverseCoupled { strength } => strength,
        }
    }
}

/// Generated data plus the hidden quantities behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Difficulty of every image, in dataset order.
    pub difficulty: Vec<f64>,
    /// Position of the intended positive of every object, per image, in
    /// ground-truth order.
    pub intended_positives: Vec<Vec<usize>>,
}

struct ImageDraw {
    record: ImageRecord,
    difficulty: f64,
    positives: Vec<usize>,
}

/// Probability that a positive names the right class at difficulty `d`.
fn correctness(d: f64) -> f64 {
    1.0 - 0.6 * d
}

fn jitter(rng: &mut ChaCha8Rng, b: &BoundingBox, rel_sigma: f64) -> BoundingBox {
    if rel_sigma <= 0.0 {
        return *b;
    }
    let nx = Normal::new(0.0, rel_sigma * b.width()).unwrap();
    let ny = Normal::new(0.0, rel_sigma * b.height()).unwrap();
    let x0 = b.x_min + nx.sample(rng);
    let x1 = b.x_max + nx.sample(rng);
    let y0 = b.y_min + ny.sample(rng);
    let y1 = b.y_max + ny.sample(rng);
    BoundingBox {
        x_min: x0.min(x1),
        y_min: y0.min(y1),
        x_max: x0.max(x1),
        y_max: y0.max(y1),
    }
    .clamped()
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(0.05..0.35);
    let h = rng.random_range(0.05..0.35);
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    BoundingBox {
        x_min: x,
        y_min: y,
        x_max: x + w,
        y_max: y + h,
    }
}

/// Probability vector with `top` at `class` and small scores elsewhere.
fn scores(rng: &mut ChaCha8Rng, num_classes: usize, class: usize, top: f64) -> Vec<f64> {
    (0..num_classes)
        .map(|c| {
            if c == class {
                top
            } else {
                top * rng.random_range(0.0..0.25)
            }
        })
        .collect()
}

fn other_class(rng: &mut ChaCha8Rng, num_classes: usize, label: usize) -> usize {
    (label + rng.random_range(1..num_classes)) % num_classes
}

fn negative_confidence(rng: &mut ChaCha8Rng, model: NegativeModel, d: f64, near_object: bool) -> f64 {
    let c = match model {
        NegativeModel::LowFlat { mean } => rng.random_range(0.0..=2.0 * mean),
        NegativeModel::InverseCoupled { strength } => {
            let scale = if near_object { 0.6 } else { 0.25 };
            0.02 + rng.random_range(0.0..0.04) + strength * scale * d * rng.random_range(0.6..1.4)
        }
    };
    c.clamp(0.0, 0.95)
}

fn generate_image(cfg: &SynthConfig, index: usize) -> ImageDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let image_id = index as u64 + 1;
    let c = cfg.num_classes;
    let m = cfg.num_queries;

    let [d0, d1] = cfg.difficulty;
    let d = if d1 > d0 { rng.random_range(d0..=d1) } else { d0 };
    let n = rng.random_range(cfg.objects_per_image[0]..=cfg.objects_per_image[1]);

    let ground_truth: Vec<GroundTruthObject> = (0..n)
        .map(|j| GroundTruthObject {
            object_id: image_id * 1000 + j as u64,
            image_id,
            label: rng.random_range(0..c),
            bbox: random_box(&mut rng),
        })
        .collect();

    // (is_intended_positive, probs, box) before shuffling
    let mut queries: Vec<(bool, Vec<f64>, BoundingBox)> = Vec::with_capacity(m);
    let noise = Normal::new(0.0, 1.0).unwrap();
    for gt in &ground_truth {
        let p_true = correctness(d);
        let (probs, bbox) = match cfg.positive_calibration {
            PositiveCalibration::Perfect => {
                let mut p = vec![0.0; c];
                p[gt.label] = 1.0;
                (p, gt.bbox)
            }
            calib => {
                let shift = match calib {
                    PositiveCalibration::Calibrated { noise: s } => s * noise.sample(&mut rng),
                    PositiveCalibration::Overconfident { bias } => bias + 0.03 * noise.sample(&mut rng),
                    PositiveCalibration::Underconfident { bias } => -bias + 0.03 * noise.sample(&mut rng),
                    PositiveCalibration::Perfect => unreachable!(),
                };
                let conf = (p_true + shift).clamp(0.35, 1.0);
                let correct = rng.random_bool(p_true);
                let class = if correct { gt.label } else { other_class(&mut rng, c, gt.label) };
                let bbox = jitter(&mut rng, &gt.bbox, cfg.box_noise * (1.0 + 3.0 * d));
                (scores(&mut rng, c, class, conf), bbox)
            }
        };
        queries.push((true, probs, bbox));
    }

    let budget = m - n;
    let mut duplicates = Vec::new();
    for gt in &ground_truth {
        let k = rng.random_range(cfg.duplicates_per_object[0]..=cfg.duplicates_per_object[1]);
        for _ in 0..k {
            let spread = rng.random_range(0.05..0.2);
            let bbox = jitter(&mut rng, &gt.bbox, spread);
            let class = if rng.random_bool(0.5) { gt.label } else { other_class(&mut rng, c, gt.label) };
            let conf = negative_confidence(&mut rng, cfg.negative_model, d, true);
            duplicates.push((false, scores(&mut rng, c, class, conf), bbox));
        }
    }
    duplicates.truncate(budget);
    queries.extend(duplicates);
    while queries.len() < m {
        let bbox = random_box(&mut rng);
        let class = rng.random_range(0..c);
        let conf = negative_confidence(&mut rng, cfg.negative_model, d, false);
        queries.push((false, scores(&mut rng, c, class, conf), bbox));
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    // order[position] = original query; invert to find where positives land
    let mut position_of = vec![0; m];
    for (pos, &orig) in order.iter().enumerate() {
        position_of[orig] = pos;
    }
    let positives = (0..n).map(|j| position_of[j]).collect();
    let detections = order
        .iter()
        .enumerate()
        .map(|(pos, &orig)| Detection {
            query_index: pos,
            probs: queries[orig].1.clone(),
            bbox: queries[orig].2,
        })
        .collect();

    ImageDraw {
        record: ImageRecord {
            image_id,
            width: cfg.image_width,
            height: cfg.image_height,
            ground_truth,
            detections,
        },
        difficulty: d,
        positives,
    }
}

/// Generates a dataset with annotations and predictions.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let draws: Vec<ImageDraw> = (0..cfg.num_images)
        .into_par_iter()
        .map(|i| generate_image(cfg, i))
        .collect();
    let categories = (0..cfg.num_classes)
        .map(|k| Category {
            id: k as u64 + 1,
            name: format!("class_{k}"),
        })
        .collect();
    let mut images = Vec::with_capacity(draws.len());
    let mut difficulty = Vec::with_capacity(draws.len());
    let mut intended_positives = Vec::with_capacity(draws.len());
    for d in draws {
        images.push(d.record);
        difficulty.push(d.difficulty);
        intended_positives.push(d.positives);
    }
    Ok(SynthOutput {
        dataset: Dataset {
            categories,
            images,
            split: Split::Validation,
        },
        difficulty,
        intended_positives,
    })
}
