//! Scores a checkpoint on a dataset split and prints the report as JSON.
//!
//! cargo run --release --example evaluate -- <checkpoint dir> <dataset dir> [train|test]
//!
//! The closed_loop example leaves a checkpoint and dataset under the
//! system temp directory.

use surfel_avatar::dataset::load_manifest;
use surfel_avatar::eval::evaluate;
use surfel_avatar::train::load_checkpoint;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = std::env::temp_dir().join("closed_loop");
    let ckpt = args.first().map_or_else(|| tmp.join("ckpt"), Into::into);
    let data = args.get(1).map_or_else(|| tmp.join("data"), Into::into);
    let split = args.get(2).map_or("test", String::as_str);

    let state = load_checkpoint(&ckpt)?;
    let manifest = load_manifest(&data)?;
    let report = evaluate(&state, &manifest, split, None)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
