//! Label-skewed shards: 6 devices see at most 2 of 4 classes, 2 devices see
//! only class 0.
//!
//! ```text
//! cargo run --example partition_shards
//! ```

use safl::data::ClassificationTask;
use safl::partition::{self, PartitionSpec};

fn main() -> safl::Result<()> {
    let data = ClassificationTask {
        samples_per_class: 250,
        dim: 5,
        classes: 4,
        separation: 1.0,
        noise_std: 1.0,
    }
    .generate(3)?;

    let mixed = PartitionSpec::new(6, 40.0, 100.0, 2, 1);
    let biased = PartitionSpec {
        labels: Some(vec![0]),
        ..PartitionSpec::new(2, 40.0, 100.0, 1, 2)
    };
    let shards = partition::partition_groups(&data, &[mixed, biased])?;

    println!("device  size  per-class counts");
    for (k, shard) in shards.iter().enumerate() {
        let mut counts = [0usize; 4];
        for s in shard.iter() {
            counts[s.class()] += 1;
        }
        println!("{k:>6}  {:>4}  {counts:?}", shard.len());
    }
    Ok(())
}
