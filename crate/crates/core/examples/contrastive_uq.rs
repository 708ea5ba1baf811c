//! Image-level uncertainty: how well does a per-image score track image
//! reliability? Contrasting positive against negative confidence helps when
//! negatives grow more confident on hard images.
//!
//! ```text
//! cargo run --release --example contrastive_uq
//! ```

use detreli::calib::OceConfig;
use detreli::data::ImageRecord;
use detreli::harness::{evaluate_uq, ImageScorer, ReliabilityReference};
use detreli::postprocess::{fit_optimal, Family, GridSpec};
use detreli::synth::{generate, SynthConfig};
use detreli::uq::{contrastive_conf, UqConfig};

fn main() -> detreli::Result<()> {
    let val = generate(&SynthConfig { seed: 10, ..Default::default() })?.dataset;
    let test = generate(&SynthConfig { seed: 11, ..Default::default() })?.dataset;
    let proc = fit_optimal(Family::Threshold, &val, &GridSpec::default(), &OceConfig::default())?;
    println!("threshold fitted on validation: {}", proc.kind.param());

    let scorers: Vec<(String, Box<dyn ImageScorer>)> = [0.0, 1.0, 5.0, 10.0]
        .into_iter()
        .map(|lambda| {
            let p = proc.clone();
            let cfg = UqConfig { lambda, ..Default::default() };
            let f = move |im: &ImageRecord| contrastive_conf(im, &p, &cfg).map(|s| s.contrastive);
            (format!("lambda={lambda}"), Box::new(f) as Box<dyn ImageScorer>)
        })
        .collect();
    let methods: Vec<(&str, &dyn ImageScorer)> = scorers.iter().map(|(n, s)| (n.as_str(), s.as_ref())).collect();

    for row in evaluate_uq(&test, &methods, &ReliabilityReference::FullSet)? {
        match row.pcc {
            Some(r) => println!("{:<11} PCC {r:+.3} over {} images", row.method, row.samples),
            None => println!("{:<11} undefined: {}", row.method, row.note.unwrap_or_default()),
        }
    }
    Ok(())
}
