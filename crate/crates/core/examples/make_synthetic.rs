//! Regenerates the bundled synthetic surgery dataset.
//!
//! `cargo run --release --example make_synthetic -- crates/core/data/synthetic_surgery.csv`
//!
//! Rows are emergency admissions. `operated` is the treatment, `adverse_event`
//! the binary outcome and `high_preference` a binary surgeon-preference
//! instrument. `frailty` is unobserved: it lowers the chance of surgery and
//! raises the risk of an adverse event. Treatment uptake is monotone in the
//! instrument by construction.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/data/synthetic_surgery.csv".into());
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(7_2024);
    let age_law = Normal::new(62.0, 14.0)?;
    let frailty_law = Normal::new(0.0, 1.0)?;
    let comorbidity_law = Poisson::new(1.2)?;
    let hospitals = ["north", "east", "south", "west", "central"];
    let hospital_pref = [0.4, -0.2, 0.1, -0.5, 0.3];

    let mut out = String::from(
        "adverse_event,operated,high_preference,age,female,comorbidities,emergency_admit,hospital\n",
    );
    for _ in 0..n {
        let age: f64 = age_law.sample(&mut rng);
        let age = age.clamp(18.0_f64, 95.0).round();
        let female = (rng.gen::<f64>() < 0.52) as u8;
        let draw: f64 = comorbidity_law.sample(&mut rng);
        let comorbidities = draw.min(6.0) as u8;
        let emergency = (rng.gen::<f64>() < 0.45) as u8;
        let h = rng.gen_range(0..hospitals.len());
        let frailty: f64 = frailty_law.sample(&mut rng);
        let a = (age - 62.0) / 14.0;

        let z = (rng.gen::<f64>() < expit(hospital_pref[h] + 0.2 * emergency as f64)) as u8;
        let base = -0.8 - 0.5 * a - 0.3 * comorbidities as f64 - 0.6 * frailty;
        let l0 = expit(base);
        let l1 = expit(base + 1.6);
        let a0 = (rng.gen::<f64>() < l0) as u8;
        let a1 = if a0 == 1 || rng.gen::<f64>() < (l1 - l0) / (1.0 - l0) { 1 } else { 0 };
        let operated = if z == 1 { a1 } else { a0 };

        let effect = -0.7 + 0.4 * a + 0.25 * comorbidities as f64;
        let risk = expit(-1.6 + 0.5 * a + 0.35 * comorbidities as f64 + 0.3 * emergency as f64
            + 0.7 * frailty + effect * operated as f64);
        let y = (rng.gen::<f64>() < risk) as u8;
        writeln!(
            out,
            "{y},{operated},{z},{age},{female},{comorbidities},{emergency},{}",
            hospitals[h]
        )?;
    }
    std::fs::write(&path, out)?;
    println!("wrote {n} rows to {path}");
    Ok(())
}
