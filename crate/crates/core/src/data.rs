//! Dataset model, JSON ingestion and label remapping.
//!
//! Annotations are read from COCO-style JSON. Predictions use a dedicated
//! format that keeps the full per-query class distribution:
//!
//! ```json
//! { "num_classes": 2,
//!   "images": [ { "image_id": 1,
//!                 "detections": [ { "bbox": [x, y, w, h], "probs": [0.1, 0.8] } ] } ] }
//! ```
//!
//! Boxes in both files are absolute pixels and are normalized on load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// One annotated object. `label` is the dense class index into
/// [`Dataset::categories`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub object_id: u64,
    pub image_id: u64,
    pub label: usize,
    pub bbox: BoundingBox,
}

/// Output of a single object query.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub query_index: usize,
    /// Per-class scores in `[0, 1]`. Not required to sum to one.
    pub probs: Vec<f64>,
    pub bbox: BoundingBox,
}

impl Detection {
    /// Maximum class score.
    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Arg-max class; the lowest index wins ties.
    pub fn predicted_label(&self) -> usize {
        let mut best = 0;
        for (c, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub ground_truth: Vec<GroundTruthObject>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Ordered by ascending category id; position is the dense class index.
    pub categories: Vec<Category>,
    pub images: Vec<ImageRecord>,
    pub split: Split,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    /// Queries per image, or `None` before predictions are attached.
    pub fn num_queries(&self) -> Option<usize> {
        self.images
            .first()
            .map(|im| im.detections.len())
            .filter(|&m| m > 0)
    }

    pub fn num_objects(&self) -> usize {
        self.images.iter().map(|im| im.ground_truth.len()).sum()
    }

    pub fn image(&self, image_id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.image_id == image_id)
    }

    pub fn category_index(&self, id: u64) -> Option<usize> {
        self.categories.iter().position(|c| c.id == id)
    }

    /// Copy of the dataset containing only the listed image positions.
    pub fn select_images(&self, positions: &[usize]) -> Dataset {
        Dataset {
            categories: self.categories.clone(),
            images: positions.iter().map(|&i| self.images[i].clone()).collect(),
            split: self.split,
        }
    }
}

/// Per-image selection of detections, stored as ascending positions into
/// each [`ImageRecord::detections`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Subset {
    selected: Vec<Vec<usize>>,
}

impl Subset {
    pub fn full(dataset: &Dataset) -> Self {
        Subset {
            selected: dataset
                .images
                .iter()
                .map(|im| (0..im.detections.len()).collect())
                .collect(),
        }
    }

    pub fn empty(dataset: &Dataset) -> Self {
        Subset {
            selected: vec![Vec::new(); dataset.images.len()],
        }
    }

    /// Builds a subset by calling `select` on every image. Returned positions
    /// are sorted and deduplicated.
    pub fn from_fn<F>(dataset: &Dataset, mut select: F) -> Self
    where
        F: FnMut(&ImageRecord) -> Vec<usize>,
    {
        Subset {
            selected: dataset
                .images
                .iter()
                .map(|im| {
                    let mut v = select(im);
                    v.sort_unstable();
                    v.dedup();
                    v
                })
                .collect(),
        }
    }

    pub fn from_positions(selected: Vec<Vec<usize>>) -> Self {
        let selected = selected
            .into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Subset { selected }
    }

    pub fn image(&self, index: usize) -> &[usize] {
        &self.selected[index]
    }

    pub fn num_images(&self) -> usize {
        self.selected.len()
    }

    pub fn len(&self) -> usize {
        self.selected.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that the subset is shaped for `dataset` and only references
    /// existing detections.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.selected.len() != dataset.images.len() {
            return Err(Error::InvalidInput(format!(
                "subset covers {} images but dataset has {}",
                self.selected.len(),
                dataset.images.len()
            )));
        }
        for (sel, im) in self.selected.iter().zip(&dataset.images) {
            if let Some(&bad) = sel.iter().find(|&&q| q >= im.detections.len()) {
                return Err(Error::InvalidInput(format!(
                    "subset references detection {bad} of image {} which has {}",
                    im.image_id,
                    im.detections.len()
                )));
            }
        }
        Ok(())
    }

    /// Selected detections of image `index`.
    pub fn detections<'a>(
        &'a self,
        dataset: &'a Dataset,
        index: usize,
    ) -> impl Iterator<Item = &'a Detection> + 'a {
        self.selected[index]
            .iter()
            .map(move |&q| &dataset.images[index].detections[q])
    }
}

// --- COCO annotations -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: Vec<f64>,
}

fn bbox4(values: &[f64], what: &str) -> Result<[f64; 4]> {
    <[f64; 4]>::try_from(values).map_err(|_| {
        Error::Schema(format!(
            "{what}: field `bbox` must have 4 values, found {}",
            values.len()
        ))
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a COCO-style annotation file.
pub fn load_annotations(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    build_dataset(file, split)
}

/// Parses COCO-style annotations from a string.
pub fn parse_annotations(text: &str, split: Split) -> Result<Dataset> {
    let file: CocoFile = serde_json::from_str(text).map_err(|e| Error::json("<input>", e))?;
    build_dataset(file, split)
}

fn build_dataset(file: CocoFile, split: Split) -> Result<Dataset> {
    let mut categories = file.categories;
    categories.sort_by_key(|c| c.id);
    if let Some(w) = categories.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Schema(format!("duplicate category id {}", w[0].id)));
    }
    let class_of: HashMap<u64, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, i))
        .collect();

    let mut images = Vec::with_capacity(file.images.len());
    let mut position = HashMap::new();
    for im in file.images {
        if position.insert(im.id, images.len()).is_some() {
            return Err(Error::Schema(format!("duplicate image_id {}", im.id)));
        }
        if im.width == 0 || im.height == 0 {
            return Err(Error::Schema(format!(
                "image {}: `width` and `height` must be positive",
                im.id
            )));
        }
        images.push(ImageRecord {
            image_id: im.id,
            width: im.width,
            height: im.height,
            ground_truth: Vec::new(),
            detections: Vec::new(),
        });
    }

    for ann in file.annotations {
        let what = format!("annotation {}", ann.id);
        let &pos = position.get(&ann.image_id).ok_or_else(|| {
            Error::Schema(format!("{what}: unknown `image_id` {}", ann.image_id))
        })?;
        let &label = class_of.get(&ann.category_id).ok_or_else(|| {
            Error::Schema(format!("{what}: unknown `category_id` {}", ann.category_id))
        })?;
        let [x, y, w, h] = bbox4(&ann.bbox, &what)?;
        let im = &mut images[pos];
        let bbox = BoundingBox::from_xywh(x, y, w, h, im.width as f64, im.height as f64)
            .map_err(|e| Error::Schema(format!("{what}: `bbox` {e}")))?;
        im.ground_truth.push(GroundTruthObject {
            object_id: ann.id,
            image_id: ann.image_id,
            label,
            bbox,
        });
    }

    Ok(Dataset {
        categories,
        images,
        split,
    })
}

/// Serializes the annotation part of `dataset` back to COCO-style JSON.
pub fn annotations_to_json(dataset: &Dataset) -> String {
    let file = CocoFile {
        images: dataset
            .images
            .iter()
            .map(|im| CocoImage {
                id: im.image_id,
                width: im.width,
                height: im.height,
            })
            .collect(),
        annotations: dataset
            .images
            .iter()
            .flat_map(|im| {
                im.ground_truth.iter().map(move |gt| CocoAnnotation {
                    id: gt.object_id,
                    image_id: gt.image_id,
                    category_id: dataset.categories[gt.label].id,
                    bbox: gt.bbox.to_xywh(im.width as f64, im.height as f64).to_vec(),
                })
            })
            .collect(),
        categories: dataset.categories.clone(),
    };
    serde_json::to_string_pretty(&file).expect("annotation file serializes")
}

// --- predictions ------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionFile {
    num_classes: usize,
    images: Vec<PredictionImage>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionImage {
    image_id: u64,
    detections: Vec<PredictionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionEntry {
    bbox: Vec<f64>,
    probs: Vec<f64>,
}

/// Loads a prediction file and attaches its detections to `dataset`.
pub fn load_predictions(dataset: &mut Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let file: PredictionFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    attach_predictions(dataset, file)
}

/// Parses predictions from a string and attaches them to `dataset`.
pub fn parse_predictions(dataset: &mut Dataset, text: &str) -> Result<()> {
    let file: PredictionFile =
        serde_json::from_str(text).map_err(|e| Error::json("<input>", e))?;
    attach_predictions(dataset, file)
}

fn attach_predictions(dataset: &mut Dataset, file: PredictionFile) -> Result<()> {
    let c = dataset.num_classes();
    if file.num_classes != c {
        return Err(Error::Schema(format!(
            "`num_classes` is {} but annotations declare {c} categories",
            file.num_classes
        )));
    }
    let position: HashMap<u64, usize> = dataset
        .images
        .iter()
        .enumerate()
        .map(|(i, im)| (im.image_id, i))
        .collect();
    let mut per_image: Vec<Option<Vec<Detection>>> = vec![None; dataset.images.len()];

    for entry in file.images {
        let &pos = position.get(&entry.image_id).ok_or_else(|| {
            Error::Schema(format!(
                "predictions reference unknown `image_id` {}",
                entry.image_id
            ))
        })?;
        if per_image[pos].is_some() {
            return Err(Error::Schema(format!(
                "predictions list image {} twice",
                entry.image_id
            )));
        }
        let im = &dataset.images[pos];
        let mut dets = Vec::with_capacity(entry.detections.len());
        for (q, d) in entry.detections.into_iter().enumerate() {
            let what = format!("image {} detection {q}", entry.image_id);
            if d.probs.len() != c {
                return Err(Error::Schema(format!(
                    "{what}: `probs` has {} entries, expected {c}",
                    d.probs.len()
                )));
            }
            if let Some(p) = d.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Schema(format!(
                    "{what}: `probs` entry {p} outside [0, 1]"
                )));
            }
            let [x, y, w, h] = bbox4(&d.bbox, &what)?;
            let bbox = BoundingBox::from_xywh(x, y, w, h, im.width as f64, im.height as f64)
                .map_err(|e| Error::Schema(format!("{what}: `bbox` {e}")))?;
            dets.push(Detection {
                query_index: q,
                probs: d.probs,
                bbox,
            });
        }
        per_image[pos] = Some(dets);
    }

    let mut num_queries = None;
    for (im, dets) in dataset.images.iter().zip(&per_image) {
        let m = dets
            .as_ref()
            .ok_or_else(|| Error::Schema(format!("no predictions for image {}", im.image_id)))?
            .len();
        match num_queries {
            None => num_queries = Some(m),
            Some(expected) if expected != m => {
                return Err(Error::Schema(format!(
                    "image {} has {m} detections, other images have {expected}",
                    im.image_id
                )))
            }
            _ => {}
        }
    }
    for (im, dets) in dataset.images.iter_mut().zip(per_image) {
        im.detections = dets.unwrap_or_default();
    }
    Ok(())
}

/// Serializes the detections of `dataset` in the prediction format.
pub fn predictions_to_json(dataset: &Dataset) -> String {
    let file = PredictionFile {
        num_classes: dataset.num_classes(),
        images: dataset
            .images
            .iter()
            .map(|im| PredictionImage {
                image_id: im.image_id,
                detections: im
                    .detections
                    .iter()
                    .map(|d| PredictionEntry {
                        bbox: d.bbox.to_xywh(im.width as f64, im.height as f64).to_vec(),
                        probs: d.probs.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("prediction file serializes")
}

#[derive(Debug, Deserialize)]
struct CocoResult {
    image_id: u64,
    category_id: u64,
    bbox: Vec<f64>,
    score: f64,
}

/// Imports COCO results (`[{image_id, category_id, bbox, score}]`).
///
/// Lossy: each entry becomes a detection whose probability vector holds
/// `score` at its category and zero elsewhere. Images with fewer entries
/// than the busiest image are padded with all-zero detections on an empty
/// box so every image carries the same number of queries.
pub fn load_coco_results(dataset: &mut Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let entries: Vec<CocoResult> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    attach_coco_results(dataset, entries)
}

/// String variant of [`load_coco_results`].
pub fn parse_coco_results(dataset: &mut Dataset, text: &str) -> Result<()> {
    let entries: Vec<CocoResult> =
        serde_json::from_str(text).map_err(|e| Error::json("<input>", e))?;
    attach_coco_results(dataset, entries)
}

fn attach_coco_results(dataset: &mut Dataset, entries: Vec<CocoResult>) -> Result<()> {
    let c = dataset.num_classes();
    let mut grouped: BTreeMap<u64, Vec<PredictionEntry>> = dataset
        .images
        .iter()
        .map(|im| (im.image_id, Vec::new()))
        .collect();
    for (k, e) in entries.into_iter().enumerate() {
        let label = dataset.category_index(e.category_id).ok_or_else(|| {
            Error::Schema(format!("result {k}: unknown `category_id` {}", e.category_id))
        })?;
        if !(0.0..=1.0).contains(&e.score) {
            return Err(Error::Schema(format!(
                "result {k}: `score` {} outside [0, 1]",
                e.score
            )));
        }
        let slot = grouped.get_mut(&e.image_id).ok_or_else(|| {
            Error::Schema(format!("result {k}: unknown `image_id` {}", e.image_id))
        })?;
        let mut probs = vec![0.0; c];
        probs[label] = e.score;
        slot.push(PredictionEntry {
            bbox: e.bbox,
            probs,
        });
    }
    let m = grouped.values().map(Vec::len).max().unwrap_or(0);
    let images = grouped
        .into_iter()
        .map(|(image_id, mut detections)| {
            detections.resize_with(m, || PredictionEntry {
                bbox: vec![0.0; 4],
                probs: vec![0.0; c],
            });
            PredictionImage {
                image_id,
                detections,
            }
        })
        .collect();
    attach_predictions(
        dataset,
        PredictionFile {
            num_classes: c,
            images,
        },
    )
}

// --- label remapping --------------------------------------------------------

/// Source-to-target class mapping. Keys and values are category names; a
/// key may also be a source category id written as a string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRemap {
    #[serde(default)]
    pub map: BTreeMap<String, String>,
    #[serde(default)]
    pub drop: Vec<String>,
}

impl LabelRemap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    fn lookup<'a>(keys: impl Iterator<Item = &'a String>, cat: &Category) -> Option<&'a String> {
        let id = cat.id.to_string();
        keys.into_iter().find(|k| **k == cat.name || **k == id)
    }
}

/// Rewrites ground-truth labels through `remap`.
///
/// The target category table keeps, in source order, every source category
/// whose name is a mapping destination; destinations that are not source
/// names are appended with fresh ids. Objects of dropped classes are removed.
/// Boxes and detections are left untouched, so when detections are attached
/// the target table must have the same number of classes as the source.
pub fn apply_remap(dataset: &Dataset, remap: &LabelRemap) -> Result<Dataset> {
    let mut dest_of: Vec<Option<&String>> = Vec::with_capacity(dataset.categories.len());
    for cat in &dataset.categories {
        let mapped = LabelRemap::lookup(remap.map.keys(), cat).map(|k| &remap.map[k]);
        let dropped = LabelRemap::lookup(remap.drop.iter(), cat).is_some();
        match (mapped, dropped) {
            (Some(_), true) => {
                return Err(Error::InvalidInput(format!(
                    "class `{}` is both mapped and dropped",
                    cat.name
                )))
            }
            (None, false) => {
                return Err(Error::InvalidInput(format!(
                    "class `{}` is neither mapped nor dropped",
                    cat.name
                )))
            }
            (m, _) => dest_of.push(m),
        }
    }

    let destinations: HashSet<&String> = dest_of.iter().flatten().copied().collect();
    let mut targets: Vec<Category> = dataset
        .categories
        .iter()
        .filter(|c| destinations.contains(&c.name))
        .cloned()
        .collect();
    let mut next_id = dataset.categories.iter().map(|c| c.id).max().unwrap_or(0) + 1;
    for dest in dest_of.iter().flatten() {
        if !targets.iter().any(|t| &t.name == *dest) {
            targets.push(Category {
                id: next_id,
                name: (*dest).clone(),
            });
            next_id += 1;
        }
    }

    let has_detections = dataset.images.iter().any(|im| !im.detections.is_empty());
    if has_detections && targets.len() != dataset.num_classes() {
        return Err(Error::InvalidInput(format!(
            "remap changes the class count from {} to {} but detections are attached",
            dataset.num_classes(),
            targets.len()
        )));
    }

    let new_label: Vec<Option<usize>> = dest_of
        .iter()
        .map(|d| d.map(|name| targets.iter().position(|t| &t.name == name).unwrap()))
        .collect();
    let images = dataset
        .images
        .iter()
        .map(|im| ImageRecord {
            ground_truth: im
                .ground_truth
                .iter()
                .filter_map(|gt| {
                    new_label[gt.label].map(|label| GroundTruthObject {
                        label,
                        ..gt.clone()
                    })
                })
                .collect(),
            ..im.clone()
        })
        .collect();
    Ok(Dataset {
        categories: targets,
        images,
        split: dataset.split,
    })
}

/// Writes `contents` to `path` via a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
