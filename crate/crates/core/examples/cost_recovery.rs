//! How close do the learned costs get to the true one, modulo row and column
//! shifts, under heavy noise?
//!
//! ```text
//! cargo run --release --example cost_recovery -- [seed] [sigma]
//! ```

use riot::synth::{cost_recovery_experiment, SynthConfig};

fn main() -> riot::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let sigma = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.08);
    let cfg = SynthConfig { seed, noise_sigma: sigma, ..SynthConfig::cost_recovery() };
    let rec = cost_recovery_experiment(&cfg)?;

    println!("seed {seed}, sigma {sigma}");
    println!("d(C_riot, C0) = {:.6}   KL = {:.5}", rec.d_riot, rec.kl_riot);
    println!("d(C_iot,  C0) = {:.6}   KL = {:.5}", rec.d_iot, rec.kl_iot);

    let row = |name: &str, c: &riot::CostMatrix| {
        let v: Vec<String> = c.as_array().row(0).iter().take(6).map(|x| format!("{x:8.4}")).collect();
        println!("{name:>12}: {}", v.join(" "));
    };
    println!("first row, first six entries:");
    row("C0", &rec.c0);
    row("C~ riot", &rec.c_tilde_riot);
    row("C~ iot", &rec.c_tilde_iot);
    Ok(())
}
