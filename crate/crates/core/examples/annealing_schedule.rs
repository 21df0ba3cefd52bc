//! The annealing probability `p_t = exp(−t/L)` and the masks it drives.
//!
//! ```text
//! cargo run --example annealing_schedule
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safl::anneal::{self, selection_probability};
use safl::ParamVector;

fn main() -> safl::Result<()> {
    println!("   t   L=5     L=20    L=100");
    for t in [0u64, 1, 5, 10, 20, 50, 100] {
        let p: Vec<String> = [5.0, 20.0, 100.0]
            .iter()
            .map(|&l| format!("{:.4}", selection_probability(t, l)))
            .collect();
        println!("{t:>4}  {}", p.join("  "));
    }

    // Each coordinate keeps ε of the global model with probability p.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, eps) = (0.4, 0.25);
    let mask = anneal::sample_mask(100_000, p, eps, &mut rng);
    let mean = mask.values().iter().sum::<f64>() / mask.len() as f64;
    println!("\nmask mean {mean:.4}, expected εp + 1 − p = {:.4}", eps * p + 1.0 - p);

    let z_bar = ParamVector::new(vec![1.0; 6]);
    let z_local = ParamVector::new(vec![-1.0; 6]);
    let u = anneal::sample_mask(6, p, eps, &mut rng);
    let mixed = anneal::mix(&u, &z_bar, &z_local)?;
    println!("mask  {:?}", u.values());
    println!("mixed {:?}", mixed.as_slice());
    Ok(())
}
