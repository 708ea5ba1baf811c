//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]


use std::path::PathBuf;

use detreli::assignment::{hungarian, CostMatrix};
use detreli::calib::{brier, d_ece, la_ece, la_ece0, oce, BinningConfig, OceConfig, TpMatchConfig};
use detreli::data::{
    parse_annotations, parse_coco_results, Category, Dataset, Detection, GroundTruthObject, ImageRecord, Split, Subset,
};
use detreli::geometry::{giou, iou, BoundingBox};
use detreli::harness::{im_reli, pcc, rank_models, EvalSettings, MetricSpec, ModelMetric, SubsetScheme};
use detreli::matching::{matching_cost, optimal_split, optimal_splits, MatchingCostConfig};
use detreli::perf::{average_precision, coco_ap, lrp};
use detreli::postprocess::{fit_optimal, Family, GridSpec, PostProcessor};
use detreli::synth::{generate, PositiveCalibration, SynthConfig};
use detreli::uq::{
    confounding_negatives, conf_minus, conf_plus, contrastive_from_positives, NegativeStrategy, UqConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

pub fn det(probs: &[f64], b: [f64; 4]) -> Detection {
    Detection {
        query_index: 0,
        probs: probs.to_vec(),
        bbox: bx(b[0], b[1], b[2], b[3]),
    }
}

/// Image `id` with objects `(label, box)` and detections `(probs, box)`.
pub fn image(id: u64, objects: &[(usize, [f64; 4])], detections: &[(Vec<f64>, [f64; 4])]) -> ImageRecord {
    ImageRecord {
        image_id: id,
        width: 100,
        height: 100,
        ground_truth: objects
            .iter()
            .enumerate()
            .map(|(k, (label, b))| GroundTruthObject {
                object_id: id * 1000 + k as u64,
                image_id: id,
                label: *label,
                bbox: bx(b[0], b[1], b[2], b[3]),
            })
            .collect(),
        detections: detections
            .iter()
            .enumerate()
            .map(|(q, (p, b))| Detection {
                query_index: q,
                ..det(p, *b)
            })
            .collect(),
    }
}

pub fn dataset(num_classes: usize, images: Vec<ImageRecord>) -> Dataset {
    Dataset {
        categories: (0..num_classes)
            .map(|c| Category {
                id: c as u64,
                name: format!("class{c}"),
            })
            .collect(),
        images,
        split: Split::Test,
    }
}

pub fn close(what: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= TOL {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, expected {want}"))
    }
}

pub fn ensure(what: &str, ok: bool) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn err(e: detreli::Error) -> String {
    e.to_string()
}

/// Minimum total cost over all injective row-to-column maps.
pub fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[row][c] + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    let cols = cost.first().map_or(0, Vec::len);
    go(cost, 0, &mut vec![false; cols])
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect()
}

/// Hungarian cost against enumeration on `count` seeded matrices whose
/// shape is drawn from N <= max_rows, M <= max_cols, N <= M.
pub fn hungarian_vs_brute_force(seeds: std::ops::Range<u64>, shape: impl Fn(u64) -> (usize, usize)) -> Result<(), String> {
    for seed in seeds {
        let (n, m) = shape(seed);
        let rows = random_matrix(seed, n, m);
        let got = hungarian(&CostMatrix::from_rows(&rows).map_err(err)?).map_err(err)?;
        let recomputed: f64 = got.row_to_col.iter().enumerate().map(|(r, &c)| rows[r][c]).sum();
        close(&format!("seed {seed} reported cost"), got.total_cost, recomputed)?;
        close(&format!("seed {seed} {n}x{m} optimum"), got.total_cost, brute_force_min(&rows))?;
    }
    Ok(())
}

/// 101-point interpolated AP of a single ranked list of TP flags.
pub fn ap_oracle(ranked_tp: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let mut tp = 0.0;
    for (k, &t) in ranked_tp.iter().enumerate() {
        if t {
            tp += 1.0;
        }
        precision.push(tp / (k + 1) as f64);
        recall.push(tp / num_gt as f64);
    }
    let mut total = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let best = (0..precision.len())
            .filter(|&k| recall[k] >= r)
            .map(|k| precision[k])
            .fold(0.0, f64::max);
        total += best;
    }
    total / 101.0
}

pub fn textbook_pcc(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0);
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sx * sy)
}

pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

fn iou_partial_overlap() -> Result<(), String> {
    let inter = (0.2 - 0.1) * (0.2 - 0.1);
    let union = 0.2 * 0.2 + 0.2 * 0.2 - inter;
    close("iou", iou(&bx(0.0, 0.0, 0.2, 0.2), &bx(0.1, 0.1, 0.3, 0.3)), inter / union)?;
    close("iou", iou(&bx(0.0, 0.0, 0.2, 0.2), &bx(0.1, 0.1, 0.3, 0.3)), 0.01 / 0.07)
}

fn giou_disjoint() -> Result<(), String> {
    let union = 0.01 + 0.01;
    let near_hull = 0.3 * 0.1;
    let far_hull = 1.0 * 0.1;
    close(
        "giou near",
        giou(&bx(0.0, 0.0, 0.1, 0.1), &bx(0.2, 0.0, 0.3, 0.1)),
        0.0 - (near_hull - union) / near_hull,
    )?;
    close(
        "giou far",
        giou(&bx(0.0, 0.0, 0.1, 0.1), &bx(0.9, 0.0, 1.0, 0.1)),
        0.0 - (far_hull - union) / far_hull,
    )
}

fn xywh_normalization() -> Result<(), String> {
    let b = BoundingBox::from_xywh(10.0, 20.0, 30.0, 40.0, 100.0, 100.0).map_err(err)?;
    let want = [10.0 / 100.0, 20.0 / 100.0, (10.0 + 30.0) / 100.0, (20.0 + 40.0) / 100.0];
    for (got, want) in b.corners().iter().zip(want) {
        close("corner", *got, want)?;
    }
    Ok(())
}

fn tiny_coco_snapshot() -> Result<(), String> {
    let text = std::fs::read_to_string(fixture("tiny_coco.json")).map_err(|e| e.to_string())?;
    let ds = parse_annotations(&text, Split::Validation).map_err(err)?;
    ensure("3 images", ds.images.len() == 3)?;
    ensure("5 objects", ds.num_objects() == 5)?;
    ensure("2 classes", ds.num_classes() == 2)?;
    ensure(
        "categories sorted by id",
        ds.categories.iter().map(|c| (c.id, c.name.as_str())).collect::<Vec<_>>() == vec![(1, "person"), (3, "car")],
    )?;
    ensure(
        "image order",
        ds.images.iter().map(|i| i.image_id).collect::<Vec<_>>() == vec![7, 8, 9],
    )?;
    // (image position, object id, label, corners), checked by hand against
    // the fixture's pixel boxes and image sizes
    let expected: [(usize, u64, usize, [f64; 4]); 5] = [
        (0, 1, 1, [0.1, 0.2, 0.4, 0.6]),
        (0, 2, 0, [0.5, 0.5, 1.0, 1.0]),
        (1, 3, 0, [0.0, 0.0, 0.5, 1.0]),
        (2, 4, 1, [0.2, 0.2, 0.8, 0.6]),
        (2, 5, 1, [0.9, 0.95, 1.0, 1.0]),
    ];
    let mut seen = 0;
    for (pos, id, label, corners) in expected {
        let gt = ds.images[pos]
            .ground_truth
            .iter()
            .find(|g| g.object_id == id)
            .ok_or(format!("object {id} missing"))?;
        ensure(&format!("object {id} label"), gt.label == label)?;
        for (g, w) in gt.bbox.corners().iter().zip(corners) {
            close(&format!("object {id} corner"), *g, w)?;
        }
        seen += 1;
    }
    ensure("all objects checked", seen == ds.num_objects())?;
    ensure("no detections", ds.images.iter().all(|i| i.detections.is_empty()))
}

fn coco_results_expansion() -> Result<(), String> {
    let text = std::fs::read_to_string(fixture("tiny_coco.json")).map_err(|e| e.to_string())?;
    let results = std::fs::read_to_string(fixture("tiny_results.json")).map_err(|e| e.to_string())?;
    let mut ds = parse_annotations(&text, Split::Test).map_err(err)?;
    parse_coco_results(&mut ds, &results).map_err(err)?;
    ensure("uniform query count", ds.images.iter().all(|i| i.detections.len() == 2))?;
    let d = &ds.images[0].detections;
    ensure("car score at car index", d[0].probs == vec![0.0, 0.9])?;
    ensure("person score at person index", d[1].probs == vec![0.6, 0.0])?;
    ensure("padding", ds.images[1].detections.iter().all(|d| d.probs == vec![0.0, 0.0]))?;
    ensure("single entry", ds.images[2].detections[0].probs == vec![0.25, 0.0])?;
    for (g, w) in d[0].bbox.corners().iter().zip([0.1, 0.2, 0.4, 0.6]) {
        close("result box", *g, w)?;
    }
    Ok(())
}

fn matching_cost_example() -> Result<(), String> {
    let gt = GroundTruthObject {
        object_id: 1,
        image_id: 1,
        label: 0,
        bbox: bx(0.0, 0.0, 1.0, 1.0),
    };
    let d = det(&[0.5, 0.5], [0.0, 0.0, 0.5, 0.5]);
    let l1 = 0.0 + 0.0 + 0.5 + 0.5;
    let overlap = (0.5 * 0.5) / 1.0;
    let want = -0.5 + 5.0 * l1 + 2.0 * (1.0 - overlap);
    close("cost", matching_cost(&d, &gt, &MatchingCostConfig::default()), want)?;
    close("cost", want, 6.0)
}

fn hungarian_two_by_two() -> Result<(), String> {
    let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
    let identity = rows[0][0] + rows[1][1];
    let swapped = rows[0][1] + rows[1][0];
    let a = hungarian(&CostMatrix::from_rows(&rows).map_err(err)?).map_err(err)?;
    ensure("swap is optimal", swapped < identity && a.row_to_col == vec![1, 0])?;
    close("cost", a.total_cost, swapped)
}

fn hungarian_random_five_by_seven() -> Result<(), String> {
    hungarian_vs_brute_force(0..100, |_| (5, 7))
}

fn exact_query_is_positive() -> Result<(), String> {
    let mut dets = vec![
        (vec![0.3, 0.7], [0.5, 0.5, 0.9, 0.9]),
        (vec![0.5, 0.5], [0.0, 0.0, 0.2, 0.2]),
        (vec![0.1, 0.9], [0.2, 0.2, 0.6, 0.5]),
        (vec![0.6, 0.4], [0.05, 0.1, 0.35, 0.45]),
    ];
    dets.insert(2, (vec![1.0, 0.0], [0.1, 0.1, 0.4, 0.4]));
    let im = image(1, &[(0, [0.1, 0.1, 0.4, 0.4])], &dets);
    let cfg = MatchingCostConfig::default();
    let costs: Vec<f64> = im.detections.iter().map(|d| matching_cost(d, &im.ground_truth[0], &cfg)).collect();
    let best = (0..costs.len()).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
    let split = optimal_split(&im, &cfg).map_err(err)?;
    ensure("brute force picks the exact query", best == 2)?;
    ensure("matcher picks the exact query", split.positives == vec![2])
}

fn two_objects_five_queries() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let rand_box = |rng: &mut ChaCha8Rng| {
            let x = rng.random_range(0.0..0.6);
            let y = rng.random_range(0.0..0.6);
            [x, y, x + rng.random_range(0.05..0.4), y + rng.random_range(0.05..0.4)]
        };
        let objects: Vec<(usize, [f64; 4])> = (0..2).map(|k| (k % 2, rand_box(&mut rng))).collect();
        let dets: Vec<(Vec<f64>, [f64; 4])> = (0..5)
            .map(|_| {
                let p = rng.random_range(0.0..1.0);
                (vec![p, 1.0 - p], rand_box(&mut rng))
            })
            .collect();
        let im = image(trial, &objects, &dets);
        let cfg = MatchingCostConfig::default();
        let cost: Vec<Vec<f64>> = im
            .ground_truth
            .iter()
            .map(|g| im.detections.iter().map(|d| matching_cost(d, g, &cfg)).collect())
            .collect();
        let split = optimal_split(&im, &cfg).map_err(err)?;
        let total: f64 = split.pairs.iter().map(|p| p.cost).sum();
        close(&format!("trial {trial}"), total, brute_force_min(&cost))?;
    }
    Ok(())
}

fn brier_uniform() -> Result<(), String> {
    close("brier", brier(&[0.5, 0.5], 0).map_err(err)?, 0.5f64.powi(2) + 0.5f64.powi(2))
}

fn oce_ensemble() -> Result<(), String> {
    let im = image(
        1,
        &[(0, [0.0, 0.0, 1.0, 1.0])],
        &[(vec![0.9, 0.1], [0.0, 0.0, 0.8, 1.0]), (vec![0.5, 0.5], [0.0, 0.0, 0.6, 1.0])],
    );
    let ds = dataset(2, vec![im]);
    let mean: [f64; 2] = [(0.9 + 0.5) / 2.0, (0.1 + 0.5) / 2.0];
    let want = (1.0 - mean[0]).powi(2) + mean[1].powi(2);
    let cfg = OceConfig {
        deltas: vec![0.5],
        ..OceConfig::default()
    };
    close("oce", oce(&ds, &Subset::full(&ds), &cfg).map_err(err)?.value, want)?;
    close("oce", want, 0.18)
}

fn d_ece_single_bin() -> Result<(), String> {
    let objects: Vec<(usize, [f64; 4])> = (0..6)
        .map(|k| (0, [0.1 * k as f64, 0.0, 0.1 * k as f64 + 0.05, 0.05]))
        .collect();
    let mut dets: Vec<(Vec<f64>, [f64; 4])> = objects.iter().map(|(_, b)| (vec![0.8, 0.2], *b)).collect();
    dets.extend((0..4).map(|k| (vec![0.8, 0.2], [0.5 + 0.1 * k as f64, 0.8, 0.55 + 0.1 * k as f64, 0.9])));
    let ds = dataset(2, vec![image(1, &objects, &dets)]);
    let hits = dets.iter().filter(|(_, b)| objects.iter().any(|(_, o)| o == b)).count();
    let want = (0.8 - hits as f64 / dets.len() as f64).abs();
    let got = d_ece(&ds, &Subset::full(&ds), &BinningConfig::default(), &TpMatchConfig::default())
        .map_err(err)?
        .value;
    close("d-ece", got, want)?;
    close("d-ece", want, 0.2)
}

fn la_ece_examples() -> Result<(), String> {
    let bins = BinningConfig::default();
    let tp = dataset(1, vec![image(1, &[(0, [0.0, 0.0, 1.0, 1.0])], &[(vec![0.8], [0.0, 0.0, 0.5, 1.0])])]);
    let overlap: f64 = 0.5 * 1.0 / 1.0;
    close(
        "la-ece tau 0",
        la_ece(&tp, &Subset::full(&tp), &bins, 0.0).map_err(err)?.value,
        (0.8 - 1.0 * overlap).abs(),
    )?;
    let fp = dataset(1, vec![image(1, &[(0, [0.0, 0.0, 0.2, 0.2])], &[(vec![0.6], [0.5, 0.5, 1.0, 1.0])])]);
    close(
        "la-ece false positive",
        la_ece(&fp, &Subset::full(&fp), &bins, 0.5).map_err(err)?.value,
        (0.6f64 - 0.0).abs(),
    )?;
    let miss = dataset(1, vec![image(1, &[(0, [0.0, 0.0, 0.2, 0.2])], &[(vec![0.9], [0.5, 0.5, 1.0, 1.0])])]);
    close(
        "la-ece0 zero overlap",
        la_ece0(&miss, &Subset::full(&miss), &bins).map_err(err)?.value,
        (0.9f64 - 0.0).abs(),
    )
}

fn ap_false_positive_first() -> Result<(), String> {
    let ds = dataset(
        1,
        vec![image(
            1,
            &[(0, [0.0, 0.0, 0.5, 0.5])],
            &[(vec![0.9], [0.6, 0.6, 1.0, 1.0]), (vec![0.8], [0.0, 0.0, 0.5, 0.5])],
        )],
    );
    let want = ap_oracle(&[false, true], 1);
    close("ap", average_precision(&ds, &Subset::full(&ds), 0.5).map_err(err)?, want)?;
    close("ap", want, 0.5)
}

fn one_object_at_iou_point_six() -> Dataset {
    dataset(1, vec![image(1, &[(0, [0.0, 0.0, 1.0, 1.0])], &[(vec![0.9], [0.0, 0.0, 0.6, 1.0])])])
}

fn coco_ap_iou_point_six() -> Result<(), String> {
    let ds = one_object_at_iou_point_six();
    // thresholds are (50 + 5k)/100; IoU is 60/100
    let passing = (0..10).filter(|k| 50 + 5 * k <= 60).count();
    let want = passing as f64 / 10.0;
    close("coco ap", coco_ap(&ds, &Subset::full(&ds)).map_err(err)?, want)?;
    close("im_reli", im_reli(&ds.images[0], &[0]).map_err(err)?, want)?;
    close("coco ap", want, 0.3)
}

fn lrp_examples() -> Result<(), String> {
    let empty = dataset(1, vec![image(1, &[(0, [0.0, 0.0, 1.0, 1.0])], &[])]);
    let (n_tp, n_fp, n_fn) = (0.0, 0.0, 1.0);
    close(
        "lrp no detections",
        lrp(&empty, &Subset::full(&empty), 0.5).map_err(err)?,
        (n_fp + n_fn) / (n_tp + n_fp + n_fn),
    )?;
    let one = dataset(1, vec![image(1, &[(0, [0.0, 0.0, 1.0, 1.0])], &[(vec![0.9], [0.0, 0.0, 0.75, 1.0])])]);
    let want = ((1.0 - 0.75) / (1.0 - 0.5)) / 1.0;
    close("lrp one tp", lrp(&one, &Subset::full(&one), 0.5).map_err(err)?, want)?;
    close("lrp one tp", want, 0.5)
}

fn nms_trace() -> Result<(), String> {
    let dets = vec![det(&[0.8, 0.2], [0.0, 0.0, 1.0, 1.0]), det(&[0.7, 0.3], [0.0, 0.0, 0.6, 1.0])];
    let overlap = iou(&dets[0].bbox, &dets[1].bbox);
    close("overlap", overlap, 0.6)?;
    let kept = PostProcessor::nms(0.5).map_err(err)?.apply(&dets);
    ensure("0.7 box suppressed by the 0.8 box", overlap > 0.5 && kept == vec![0])
}

fn threshold_fit_separated() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let images: Vec<ImageRecord> = (0..6)
        .map(|i| {
            let objects = [(0usize, [0.1, 0.1, 0.4, 0.4]), (1usize, [0.5, 0.5, 0.9, 0.9])];
            let mut dets: Vec<(Vec<f64>, [f64; 4])> = Vec::new();
            for (label, b) in objects {
                let c = rng.random_range(0.6..=1.0);
                let mut p = vec![0.0, 0.0];
                p[label] = c;
                p[1 - label] = 1.0 - c;
                dets.push((p, b));
                // the first negative sits exactly on the 0.2 bound
                let n = if label == 0 { 0.2 } else { rng.random_range(0.0..=0.2) };
                let mut q = vec![0.0, 0.0];
                q[1 - label] = n;
                dets.push((q, [b[0], b[1], b[2] - 0.02, b[3] - 0.02]));
            }
            image(i, &objects, &dets)
        })
        .collect();
    let val = dataset(2, images);
    let grid = GridSpec::default();
    let cfg = OceConfig::default();
    let fitted = fit_optimal(Family::Threshold, &val, &grid, &cfg).map_err(err)?;
    let mut best = (f64::INFINITY, f64::NAN);
    for &t in &grid.thresholds {
        let subset = Subset::from_fn(&val, |im| {
            (0..im.detections.len()).filter(|&q| im.detections[q].confidence() >= t).collect()
        });
        let v = oce(&val, &subset, &cfg).map_err(err)?.value;
        if v < best.0 - 1e-12 {
            best = (v, t);
        }
    }
    let t = fitted.kind.param();
    ensure(&format!("fitted {t} equals exhaustive argmin {}", best.1), t == best.1)?;
    close("fitted value", fitted.fit.as_ref().unwrap().value, best.0)?;
    ensure(&format!("fitted {t} in (0.2, 0.6]"), t > 0.2 && t <= 0.6)
}

fn topk_fit_exhaustive() -> Result<(), String> {
    let images: Vec<ImageRecord> = (0..5)
        .map(|i| {
            let objects = [
                (0usize, [0.05, 0.05, 0.3, 0.3]),
                (1usize, [0.4, 0.4, 0.7, 0.7]),
                (2usize, [0.7, 0.1, 0.95, 0.35]),
            ];
            let mut dets: Vec<(Vec<f64>, [f64; 4])> = Vec::new();
            for (label, b) in objects {
                let mut p = vec![0.0; 3];
                p[label] = 0.95;
                dets.push((p, b));
            }
            for k in 0..12 {
                let (label, b) = objects[k % 3];
                let mut p = vec![0.0; 3];
                p[(label + 1) % 3] = 0.5 - 0.01 * k as f64;
                dets.push((p, b));
            }
            image(i, &objects, &dets)
        })
        .collect();
    let val = dataset(3, images);
    let grid = GridSpec::default();
    let cfg = OceConfig::default();
    let fitted = fit_optimal(Family::TopK, &val, &grid, &cfg).map_err(err)?;
    let top = |k: usize| {
        Subset::from_fn(&val, |im| {
            let mut order: Vec<usize> = (0..im.detections.len()).collect();
            order.sort_by(|&a, &b| {
                im.detections[b]
                    .confidence()
                    .total_cmp(&im.detections[a].confidence())
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            order
        })
    };
    let mut best = (f64::INFINITY, 0usize);
    for &k in &grid.top_k {
        let v = oce(&val, &top(k), &cfg).map_err(err)?.value;
        if v < best.0 - 1e-12 {
            best = (v, k);
        }
    }
    let k = fitted.kind.param() as usize;
    ensure(&format!("fitted k {k} equals exhaustive argmin {}", best.1), k == best.1)?;
    let at = |k| oce(&val, &top(k), &cfg).map(|r| r.value).map_err(err);
    ensure("k=5 beats k=100", at(5)? < at(100)?)
}

fn uq_means() -> Result<(), String> {
    let a = det(&[0.6, 0.4], [0.0, 0.0, 1.0, 1.0]);
    let b = det(&[1.0, 0.0], [0.0, 0.0, 1.0, 1.0]);
    close("conf+", conf_plus([&a, &b]).value, (0.6 + 1.0) / 2.0)?;
    let z = det(&[0.0, 0.0], [0.0, 0.0, 1.0, 1.0]);
    let t = det(&[0.2, 0.0], [0.0, 0.0, 1.0, 1.0]);
    close("conf-", conf_minus([&z, &t]).value, (0.0 + 0.2) / 2.0)?;
    let im = image(
        1,
        &[],
        &[(vec![0.9, 0.1], [0.0, 0.0, 0.5, 0.5]), (vec![0.1, 0.05], [0.5, 0.5, 1.0, 1.0])],
    );
    let cfg = UqConfig {
        lambda: 5.0,
        negative_strategy: NegativeStrategy::EntireNegatives,
    };
    let s = contrastive_from_positives(&im, &[0], &cfg).map_err(err)?;
    close("contrastive", s.contrastive, 0.9 - 5.0 * 0.1)
}

fn confounding_selection() -> Result<(), String> {
    let p = det(&[0.9, 0.1], [0.0, 0.0, 1.0, 1.0]);
    let n1 = det(&[0.1, 0.1], [0.0, 0.0, 0.6, 1.0]);
    let n2 = det(&[0.1, 0.1], [0.0, 0.0, 0.3, 1.0]);
    let overlaps = [iou(&n1.bbox, &p.bbox), iou(&n2.bbox, &p.bbox)];
    let want: Vec<usize> = (0..2).filter(|&k| overlaps[k] >= 0.5).collect();
    let got = confounding_negatives(&[&p], &[&n1, &n2], 0.5);
    ensure("only the 0.6 negative", got == want && got == vec![0])
}

fn perfect_regime_recovers_positives() -> Result<(), String> {
    for seed in 0..20 {
        let out = generate(&SynthConfig {
            seed,
            num_images: 20,
            positive_calibration: PositiveCalibration::Perfect,
            ..SynthConfig::default()
        })
        .map_err(err)?;
        let splits = optimal_splits(&out.dataset, &MatchingCostConfig::default()).map_err(err)?;
        for (i, split) in splits.iter().enumerate() {
            let mut pairs: Vec<(usize, usize)> = split.pairs.iter().map(|p| (p.object_index, p.query_index)).collect();
            pairs.sort_unstable();
            let want: Vec<(usize, usize)> = out.intended_positives[i].iter().copied().enumerate().collect();
            ensure(&format!("seed {seed} image {i}"), pairs == want)?;
        }
    }
    Ok(())
}

fn pcc_textbook() -> Result<(), String> {
    let xs = [1.0, 2.0, 3.0, 4.0];
    let ys = [1.0, 3.0, 2.0, 4.0];
    close("pcc", pcc(&xs, &ys).map_err(err)?, textbook_pcc(&xs, &ys))
}

fn graded_models_rank() -> Result<(), String> {
    let models: Vec<Dataset> = [0.0, 0.1, 0.2, 0.3]
        .iter()
        .map(|&bias| {
            generate(&SynthConfig {
                seed: 4,
                num_images: 60,
                positive_calibration: PositiveCalibration::Overconfident { bias },
                ..SynthConfig::default()
            })
            .map(|o| o.dataset)
        })
        .collect::<detreli::Result<_>>()
        .map_err(err)?;
    let table = rank_models(
        &models,
        &[MetricSpec::new(ModelMetric::Oce, SubsetScheme::OptimalPositives)],
        &[MetricSpec::new(ModelMetric::Oce, SubsetScheme::FitOce(Family::Threshold))],
        &EvalSettings::default(),
    )
    .map_err(err)?;
    let r = table.pcc[0][0].ok_or("undefined correlation")?;
    ensure(&format!("OCE(fitted) vs OCE(optimal) pcc {r} > 0"), r > 0.0)
}

fn cli_select_uq_is_reproducible() -> Result<(), String> {
    let run_once = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
        let cfg = p("c.json");
        std::fs::write(&cfg, r#"{"synth": {"num_images": 20}}"#).map_err(|e| e.to_string())?;
        let steps: Vec<Vec<String>> = vec![
            vec!["synth".into(), "--config".into(), cfg.clone(), "--seed".into(), "9".into(), "--out".into(), p("a.json"), p("p.json")],
            vec!["select".into(), "--family".into(), "threshold".into(), "--val-ann".into(), p("a.json"), "--val-pred".into(), p("p.json"), "--out".into(), p("t.json")],
            vec!["uq".into(), "--ann".into(), p("a.json"), "--pred".into(), p("p.json"), "--proc".into(), p("t.json"), "--out".into(), p("u.jsonl")],
        ];
        for step in steps {
            let mut argv = vec!["detreli".to_string()];
            argv.extend(step);
            let (mut out, mut errs) = (Vec::new(), Vec::new());
            let code = detreli::cli::run(&argv, &mut out, &mut errs);
            ensure(&format!("{argv:?}: exit {code}: {}", String::from_utf8_lossy(&errs)), code == 0)?;
        }
        let read = |n: &str| std::fs::read(dir.path().join(n)).map_err(|e| e.to_string());
        Ok((read("t.json")?, read("u.jsonl")?))
    };
    let first = run_once()?;
    let second = run_once()?;
    ensure("byte-identical reruns", first == second)
}

pub fn derived_checks() -> Vec<Check> {
    vec![
        Check { name: "iou partial overlap", run: iou_partial_overlap },
        Check { name: "giou of disjoint boxes", run: giou_disjoint },
        Check { name: "xywh normalization", run: xywh_normalization },
        Check { name: "tiny_coco snapshot", run: tiny_coco_snapshot },
        Check { name: "coco results expansion", run: coco_results_expansion },
        Check { name: "matching cost", run: matching_cost_example },
        Check { name: "hungarian 2x2", run: hungarian_two_by_two },
        Check { name: "hungarian 5x7 vs enumeration", run: hungarian_random_five_by_seven },
        Check { name: "exact query is the positive", run: exact_query_is_positive },
        Check { name: "2 objects 5 queries vs enumeration", run: two_objects_five_queries },
        Check { name: "brier uniform", run: brier_uniform },
        Check { name: "oce ensemble", run: oce_ensemble },
        Check { name: "d-ece single bin", run: d_ece_single_bin },
        Check { name: "la-ece examples", run: la_ece_examples },
        Check { name: "ap with leading false positive", run: ap_false_positive_first },
        Check { name: "coco ap and im_reli at iou 0.6", run: coco_ap_iou_point_six },
        Check { name: "lrp examples", run: lrp_examples },
        Check { name: "nms suppression trace", run: nms_trace },
        Check { name: "threshold fit on separated data", run: threshold_fit_separated },
        Check { name: "topk fit vs exhaustive grid", run: topk_fit_exhaustive },
        Check { name: "confidence means and contrastive", run: uq_means },
        Check { name: "confounding selection", run: confounding_selection },
        Check { name: "perfect regime positives", run: perfect_regime_recovers_positives },
        Check { name: "pcc textbook formula", run: pcc_textbook },
        Check { name: "graded models ranking", run: graded_models_rank },
        Check { name: "cli select/uq reproducible", run: cli_select_uq_is_reproducible },
    ]
}

/// Runs every check and returns the failures.
pub fn failing_derived_checks() -> Vec<String> {
    derived_checks()
        .iter()
        .filter_map(|c| (c.run)().err().map(|e| format!("{}: {e}", c.name)))
        .collect()
}
