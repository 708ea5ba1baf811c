//! Loading COCO annotations and detector output.
//!
//! Pass an annotation file and a COCO results file, or run without
//! arguments to use the bundled fixtures.
//!
//! ```text
//! cargo run --example load_coco -- instances.json results.json
//! ```

use std::path::PathBuf;

use detreli::data::{load_annotations, load_coco_results, predictions_to_json, Split};

fn main() -> detreli::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut args = std::env::args().skip(1);
    let ann = args.next().map(PathBuf::from).unwrap_or(fixtures.join("tiny_coco.json"));
    let res = args.next().map(PathBuf::from).unwrap_or(fixtures.join("tiny_results.json"));

    let mut dataset = load_annotations(&ann, Split::Test)?;
    println!("categories (dense index order):");
    for (i, c) in dataset.categories.iter().enumerate() {
        println!("  {i}: id {} {}", c.id, c.name);
    }
    load_coco_results(&mut dataset, &res)?;
    for im in &dataset.images {
        println!(
            "image {} ({}x{}): {} objects, {} detections",
            im.image_id,
            im.width,
            im.height,
            im.ground_truth.len(),
            im.detections.len()
        );
    }
    // Full-distribution prediction format, as consumed by the CLI.
    let json = predictions_to_json(&dataset);
    println!("prediction file is {} bytes", json.len());
    Ok(())
}
