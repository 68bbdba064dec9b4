//! Runs every strategy on the builtin pack and prints the median final
//! running-average error per strategy.
//!
//! cargo run --release -p mt-core --example desk_scale -- [seeds] [budget] [strategies]

use std::time::Instant;

use mt_core::experiments::{median_final, parse_strategies, run_grid, ExperimentConfig, Strategy, DEFAULT_BOOTSTRAP_FRACTION};
use mt_core::learner::Hyperparams;
use mt_core::pack::Pack;

fn main() -> mt_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let budget: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(150);
    let strategies = match args.get(3) {
        Some(list) => parse_strategies(list).expect("strategy list"),
        None => Strategy::ALL.to_vec(),
    };
    let pack = Pack::builtin();
    let cfg = ExperimentConfig {
        budget,
        ..Default::default()
    };
    let started = Instant::now();
    let seeds: Vec<u64> = (0..seeds).collect();
    let runs = run_grid(
        &pack,
        &strategies,
        &seeds,
        DEFAULT_BOOTSTRAP_FRACTION,
        &Hyperparams::bootstrap(),
        &cfg,
    )?;
    for (s, m) in median_final(&runs) {
        let vars: usize = runs.iter().filter(|r| r.strategy == s).map(|r| r.variations.iter().sum::<usize>()).sum();
        println!("{s:8} median final running avg {m:.4}  variations {vars}");
    }
    for r in &runs {
        let last = r.curve.last().unwrap();
        println!("{} seed {} final err {:.4} ravg {:.4} offers {}", r.strategy, r.seed, last.error, last.running_avg, r.log.len());
    }
    println!("elapsed {:.1?}", started.elapsed());
    Ok(())
}
