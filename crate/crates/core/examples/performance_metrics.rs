//! AP and LRP of a detector at a few operating points.
//!
//! ```text
//! cargo run --release --example performance_metrics
//! ```

use detreli::data::Subset;
use detreli::perf::performance_summary;
use detreli::postprocess::PostProcessor;
use detreli::synth::{generate, SynthConfig};

fn main() -> detreli::Result<()> {
    let ds = generate(&SynthConfig::default())?.dataset;
    println!("{:<14} {:>7} {:>7} {:>7} {:>7}", "subset", "AP50", "AP75", "AP", "LRP");
    let mut rows = vec![("full".to_string(), Subset::full(&ds))];
    for t in [0.3, 0.6] {
        rows.push((format!("threshold {t}"), PostProcessor::threshold(t)?.apply_dataset(&ds)));
    }
    rows.push(("top-10".into(), PostProcessor::top_k(10)?.apply_dataset(&ds)));
    for (name, subset) in rows {
        let s = performance_summary(&ds, &subset, 0.5)?;
        println!("{name:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4}", s.ap50, s.ap75, s.coco_ap, s.lrp);
    }
    Ok(())
}
