//! The two visit-process families: memory-embedded intervals and memoryless
//! Bernoulli thinning on a grid.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use visitbias::sim::{gen_intervals_memory, gen_visits_memoryless, MemoryScenario};

fn main() -> visitbias::Result<()> {
    let params = MemoryScenario::intercept_only().intervals;
    let baselines = vec![BTreeMap::new(); 5];
    let draws = gen_intervals_memory(&params, &baselines, 3)?;
    for (i, s) in draws.subjects.iter().enumerate() {
        println!("b = {:>6.3}: visits at {:?}", draws.effects[(i, 0)], s.times.iter().map(|t| t.round()).collect::<Vec<_>>());
    }

    let b = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
    let v = gen_visits_memoryless(|_| -3.0, &[1.0], &b, 1.0, 100.0, 3)?;
    for (bi, t) in b.iter().zip(&v.times) {
        println!("memoryless, b = {bi:>4}: {} visits", t.len());
    }
    Ok(())
}
