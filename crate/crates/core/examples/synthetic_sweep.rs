//! Robustness sweep: KL(pi_0 || fit) for RIOT and IOT as the noise level grows.
//!
//! ```text
//! cargo run --release --example synthetic_sweep -- [repetitions] [seed]
//! ```

use std::time::Instant;

use riot::synth::{robustness_sweep, SynthConfig};

fn main() -> riot::Result<()> {
    let mut args = std::env::args().skip(1);
    let repetitions = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = SynthConfig { repetitions, seed, ..SynthConfig::robustness() };

    let start = Instant::now();
    let sweep = robustness_sweep(&cfg)?;
    println!("{:>8} {:>6} {:>22} {:>22} {:>12}", "sigma", "delta", "KL riot (mean±sd)", "KL iot (mean±sd)", "KL noisy");
    for c in &sweep.cells {
        println!(
            "{:>8.4} {:>6.3} {:>12.4e}±{:<9.2e} {:>12.4e}±{:<9.2e} {:>12.4e}{}",
            c.sigma,
            c.delta,
            c.kl_riot.mean,
            c.kl_riot.std,
            c.kl_iot.mean,
            c.kl_iot.std,
            c.kl_hat.mean,
            if c.incomplete { "  (incomplete)" } else { "" }
        );
    }
    let iot_fits = cfg.sigma_grid.len() * cfg.repetitions;
    println!("{} fits in {:.1?}", sweep.records.len() + iot_fits, start.elapsed());
    Ok(())
}
