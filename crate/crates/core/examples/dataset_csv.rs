//! Writes a synthetic dataset as CSV (`f0,…,label`), reads it back and
//! partitions it.
//!
//! ```text
//! cargo run --example dataset_csv
//! ```

use safl::data::{ClassificationTask, TargetKind};
use safl::partition::{self, PartitionSpec};
use safl::Dataset;

fn main() -> safl::Result<()> {
    let data = ClassificationTask {
        samples_per_class: 20,
        dim: 3,
        classes: 2,
        separation: 2.0,
        noise_std: 0.5,
    }
    .generate(9)?;

    let mut bytes = Vec::new();
    data.write_csv(&mut bytes)?;
    let text = String::from_utf8(bytes).expect("csv is utf-8");
    for line in text.lines().take(4) {
        println!("{line}");
    }

    let back = Dataset::read_csv(text.as_bytes(), TargetKind::Classification { classes: 2 })?;
    println!("read {} samples, {} features, {:?} classes", back.len(), back.dim(), back.classes());
    let shards = partition::partition(&back, &PartitionSpec::new(4, 8.0, 4.0, 1, 2))?;
    let sizes: Vec<usize> = shards.iter().map(Dataset::len).collect();
    println!("shard sizes {sizes:?}");
    Ok(())
}
