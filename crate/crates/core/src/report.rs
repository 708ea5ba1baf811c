//! Markdown and CSV tables summarizing a full evaluation run.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::{write_atomic, Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::harness::{
    evaluate_uq, pcc, rank_models, reliability_column, threshold_sweep, CorrelationRow, EvalSettings, ImageScorer,
    MetricSpec, ModelMetric, RankingTable, ReliabilityReference, SubsetScheme, SweepRow,
};
use crate::matching::optimal_split;
use crate::postprocess::{fit_optimal, Family, PostProcessor};
use crate::uq::{conf_minus, conf_plus, contrastive_from_positives, NegativeStrategy, UqConfig};
use crate::calib::oce;

/// One fitted post-processing scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeRow {
    pub family: String,
    pub param: f64,
    pub val_oce: f64,
    pub test_oce: f64,
    pub pcc_conf_plus: Option<f64>,
    pub pcc_contrastive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub images: usize,
    pub objects: usize,
    pub lambda: f64,
    pub uq: Vec<CorrelationRow>,
    pub schemes: Vec<SchemeRow>,
    pub sweep: Vec<SweepRow>,
    pub ranking: Option<RankingTable>,
    pub warnings: Vec<String>,
}

/// Inputs of [`build_report`]. Processors are fitted on `validation` (or on
/// `test` when it is absent) unless `processors` is given.
pub struct ReportInputs<'a> {
    pub test: &'a Dataset,
    pub validation: Option<&'a Dataset>,
    /// Additional models over the test images, for calibration ranking.
    pub models: &'a [Dataset],
    pub processors: Option<Vec<PostProcessor>>,
    pub settings: &'a EvalSettings,
    pub uq: UqConfig,
}

fn optimal_positions(image: &ImageRecord, inputs: &ReportInputs<'_>) -> Result<(Vec<usize>, Vec<usize>)> {
    let split = optimal_split(image, &inputs.settings.matching)?;
    Ok((split.positives, split.negatives))
}

pub fn build_report(inputs: &ReportInputs<'_>) -> Result<Report> {
    let test = inputs.test;
    let settings = inputs.settings;
    inputs.uq.validate()?;
    let mut warnings = Vec::new();
    let validation = match inputs.validation {
        Some(v) => v,
        None => {
            warnings.push("no validation set: processors fitted on the test set".to_string());
            test
        }
    };
    let processors = match &inputs.processors {
        Some(p) => p.clone(),
        None => Family::ALL
            .iter()
            .map(|&f| fit_optimal(f, validation, &settings.grid, &settings.oce))
            .collect::<Result<_>>()?,
    };
    let threshold = processors
        .iter()
        .find(|p| p.kind.family() == Family::Threshold)
        .cloned()
        .ok_or_else(|| Error::InvalidInput("report needs a threshold processor".into()))?;

    let lambda = inputs.uq.lambda;
    let uq_cfg = inputs.uq;
    let confounding = UqConfig {
        negative_strategy: NegativeStrategy::Confounding { delta: 0.5 },
        ..uq_cfg
    };
    let top100 = PostProcessor::top_k(100)?;
    let opt_plus = |im: &ImageRecord| -> Result<f64> {
        let (pos, _) = optimal_positions(im, inputs)?;
        Ok(conf_plus(pos.iter().map(|&q| &im.detections[q])).value)
    };
    let opt_minus = |im: &ImageRecord| -> Result<f64> {
        let (_, neg) = optimal_positions(im, inputs)?;
        Ok(conf_minus(neg.iter().map(|&q| &im.detections[q])).value)
    };
    let full_plus = |im: &ImageRecord| -> Result<f64> { Ok(conf_plus(im.detections.iter()).value) };
    let top_plus = |im: &ImageRecord| -> Result<f64> {
        Ok(conf_plus(top100.apply(&im.detections).iter().map(|&q| &im.detections[q])).value)
    };
    let fit_plus = |im: &ImageRecord| -> Result<f64> {
        Ok(conf_plus(threshold.apply(&im.detections).iter().map(|&q| &im.detections[q])).value)
    };
    let fit_contrastive =
        |im: &ImageRecord| -> Result<f64> { Ok(contrastive_from_positives(im, &threshold.apply(&im.detections), &uq_cfg)?.contrastive) };
    let fit_confounding = |im: &ImageRecord| -> Result<f64> {
        Ok(contrastive_from_positives(im, &threshold.apply(&im.detections), &confounding)?.contrastive)
    };
    let methods: Vec<(&str, &dyn ImageScorer)> = vec![
        ("Conf+ (optimal positives)", &opt_plus),
        ("Conf- (optimal negatives)", &opt_minus),
        ("Conf+ (full set)", &full_plus),
        ("Conf+ (top-100)", &top_plus),
        ("Conf+ (fitted threshold)", &fit_plus),
        ("ContrastiveConf (fitted threshold)", &fit_contrastive),
        ("ContrastiveConf (fitted threshold, confounding 0.5)", &fit_confounding),
    ];
    let uq = evaluate_uq(test, &methods, &ReliabilityReference::FullSet)?;

    let (kept, reli) = reliability_column(test, &ReliabilityReference::FullSet)?;
    let mut schemes = Vec::with_capacity(processors.len());
    for p in &processors {
        let val_oce = match &p.fit {
            Some(f) if f.objective == "oce" && inputs.validation.is_some() => f.value,
            _ => oce(validation, &p.apply_dataset(validation), &settings.oce)?.value,
        };
        let test_oce = oce(test, &p.apply_dataset(test), &settings.oce)?.value;
        let mut plus = Vec::with_capacity(kept.len());
        let mut contrast = Vec::with_capacity(kept.len());
        for &i in &kept {
            let im = &test.images[i];
            let score = contrastive_from_positives(im, &p.apply(&im.detections), &uq_cfg)?;
            plus.push(score.conf_plus);
            contrast.push(score.contrastive);
        }
        schemes.push(SchemeRow {
            family: p.kind.family().name().to_string(),
            param: p.kind.param(),
            val_oce,
            test_oce,
            pcc_conf_plus: pcc(&plus, &reli).ok(),
            pcc_contrastive: pcc(&contrast, &reli).ok(),
        });
    }

    let sweep = threshold_sweep(test, &settings.grid.thresholds, settings)?;

    let ranking = if inputs.models.len() >= 3 {
        let references: Vec<MetricSpec> = [ModelMetric::Oce, ModelMetric::DEce, ModelMetric::LaEce0]
            .into_iter()
            .map(|m| MetricSpec::new(m, SubsetScheme::OptimalPositives))
            .collect();
        let candidates: Vec<MetricSpec> = [ModelMetric::Oce, ModelMetric::DEce, ModelMetric::LaEce0]
            .into_iter()
            .flat_map(|m| {
                [
                    MetricSpec::new(m, SubsetScheme::FitOce(Family::Threshold)),
                    MetricSpec::new(m, SubsetScheme::Fixed(PostProcessor::threshold(0.5).expect("valid"))),
                    MetricSpec::new(m, SubsetScheme::Full),
                ]
            })
            .collect();
        let table = rank_models(inputs.models, &references, &candidates, settings)?;
        warnings.extend(table.warnings.iter().cloned());
        Some(table)
    } else {
        if !inputs.models.is_empty() {
            warnings.push(format!(
                "calibration ranking skipped: needs at least 3 models, got {}",
                inputs.models.len()
            ));
        }
        None
    };

    Ok(Report {
        images: test.images.len(),
        objects: test.num_objects(),
        lambda,
        uq,
        schemes,
        sweep,
        ranking,
        warnings,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl Report {
    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# Reliability report\n");
        let _ = writeln!(md, "{} images, {} objects, lambda = {}.\n", self.images, self.objects, self.lambda);
        for w in &self.warnings {
            let _ = writeln!(md, "> warning: {w}");
        }
        if !self.warnings.is_empty() {
            md.push('\n');
        }

        let _ = writeln!(md, "## Image-level uncertainty\n");
        let _ = writeln!(md, "| method | PCC with ImReli | samples | excluded |");
        let _ = writeln!(md, "|---|---|---|---|");
        for r in &self.uq {
            let _ = writeln!(md, "| {} | {} | {} | {} |", r.method, cell(r.pcc), r.samples, r.excluded);
        }

        let _ = writeln!(md, "\n## Post-processing schemes\n");
        let _ = writeln!(md, "| family | param | val OCE | test OCE | PCC Conf+ | PCC ContrastiveConf |");
        let _ = writeln!(md, "|---|---|---|---|---|---|");
        for s in &self.schemes {
            let _ = writeln!(
                md,
                "| {} | {} | {:.4} | {:.4} | {} | {} |",
                s.family,
                s.param,
                s.val_oce,
                s.test_oce,
                cell(s.pcc_conf_plus),
                cell(s.pcc_contrastive)
            );
        }

        let _ = writeln!(md, "\n## Threshold sweep\n");
        let _ = writeln!(md, "| threshold | AP | D-ECE | LaECE0 | LRP | OCE |");
        let _ = writeln!(md, "|---|---|---|---|---|---|");
        for r in &self.sweep {
            let _ = writeln!(
                md,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.threshold, r.coco_ap, r.d_ece, r.la_ece0, r.lrp, r.oce
            );
        }

        if let Some(t) = &self.ranking {
            let _ = writeln!(md, "\n## Calibration ranking across models\n");
            let _ = write!(md, "| candidate |");
            for r in &t.references {
                let _ = write!(md, " {r} |");
            }
            let _ = writeln!(md, "\n|---|{}", "---|".repeat(t.references.len()));
            for (c, row) in t.candidates.iter().zip(&t.pcc) {
                let _ = write!(md, "| {c} |");
                for v in row {
                    let _ = write!(md, " {} |", cell(*v));
                }
                md.push('\n');
            }
        }
        md
    }

    fn csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        }
        w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }

    fn ranking_csv(t: &RankingTable) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record(["candidate", "reference", "pcc"]).map_err(csv_err)?;
        for (c, row) in t.candidates.iter().zip(&t.pcc) {
            for (r, v) in t.references.iter().zip(row) {
                w.write_record([c.as_str(), r.as_str(), &v.map_or(String::new(), |x| x.to_string())])
                    .map_err(csv_err)?;
            }
        }
        w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }

    /// Writes `report.md`, `uq.csv`, `schemes.csv`, `threshold_sweep.csv`,
    /// `ranking.csv` (when available) and `report.json` into `dir`.
    /// `header` is merged into the JSON document.
    pub fn write_dir(&self, dir: &Path, header: serde_json::Map<String, serde_json::Value>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(dir.join("report.md"), self.to_markdown().as_bytes())?;
        write_atomic(dir.join("uq.csv"), &Self::csv(&self.uq)?)?;
        write_atomic(dir.join("schemes.csv"), &Self::csv(&self.schemes)?)?;
        write_atomic(dir.join("threshold_sweep.csv"), &Self::csv(&self.sweep)?)?;
        if let Some(t) = &self.ranking {
            write_atomic(dir.join("ranking.csv"), &Self::ranking_csv(t)?)?;
        }
        let mut doc = header;
        let body = serde_json::to_value(self).map_err(|e| Error::InvalidInput(format!("json: {e}")))?;
        if let serde_json::Value::Object(m) = body {
            doc.extend(m);
        }
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidInput(format!("json: {e}")))?;
        write_atomic(dir.join("report.json"), text.as_bytes())
    }
}
