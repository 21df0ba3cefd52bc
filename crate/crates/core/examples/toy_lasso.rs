//! Two single-sample lasso devices whose averaged optima miss the joint
//! optimum.
//!
//! ```text
//! cargo run --example toy_lasso
//! ```

use safl::aggregate::{self, Update};
use safl::{Dataset, Objective, Sample};

fn main() -> safl::Result<()> {
    let obj = Objective::lasso(2, 1.0)?;
    let d1 = Dataset::new(vec![Sample::regression(vec![0.25, 0.0], -1.0)], None)?;
    let d2 = Dataset::new(vec![Sample::regression(vec![0.0, 1.5], 1.0)], None)?;

    let w1 = obj.optimum_oracle(&d1)?;
    let w2 = obj.optimum_oracle(&d2)?;
    let w_star = obj.optimum_oracle(&Dataset::union([&d1, &d2])?)?;
    println!("device 1 optimum  {:?}", w1.as_slice());
    println!("device 2 optimum  {:?}", w2.as_slice());
    println!("joint optimum     {:?}", w_star.as_slice());

    let updates = [
        Update { device: 0, model: &w1, samples: 1 },
        Update { device: 1, model: &w2, samples: 1 },
    ];
    let w_bar = aggregate::aggregate(&updates, &[0.5, 0.5])?;
    println!("averaged optimum  {:?}", w_bar.as_slice());
    println!("distance to joint optimum {:.6} (2/9 = {:.6})", w_star.dist(&w_bar), 2.0 / 9.0);
    Ok(())
}
