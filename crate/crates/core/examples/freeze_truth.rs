//! Prints the reference LATE for a shipped scenario.
//!
//! `cargo run --release --example freeze_truth -- 2 10000000 20240601`

use drml_iv::simulation::{true_late, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let id: u8 = args.first().map_or(Ok(2), |s| s.parse())?;
    let draws: usize = args.get(1).map_or(Ok(10_000_000), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(20240601), |s| s.parse())?;
    let (v, se) = true_late(&ScenarioSpec::scenario(id)?, draws, seed)?;
    println!("{v:.17e} {se:.17e}");
    Ok(())
}
