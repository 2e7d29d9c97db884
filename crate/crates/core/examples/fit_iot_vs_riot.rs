//! One noisy draw of a synthetic market, fitted by IOT and by RIOT, scored by
//! KL divergence to the clean plan.
//!
//! ```text
//! cargo run --release --example fit_iot_vs_riot -- [seed] [sigma] [delta]
//! ```

use riot::synth::{single_instance_comparison, SynthConfig};
use riot::HyperParams;

fn main() -> riot::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let sigma = args.next().and_then(|s| s.parse().ok()).unwrap_or(8e-3);
    let delta = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.01);

    let base = SynthConfig::single_instance();
    let cfg = SynthConfig { seed, noise_sigma: sigma, hyper: HyperParams { delta, ..base.hyper.clone() }, ..base };
    let cmp = single_instance_comparison(&cfg)?;

    println!("seed {seed}, sigma {sigma}, delta {delta}");
    println!("KL(pi0 || riot)  = {:.6}", cmp.kl_riot);
    println!("KL(pi0 || iot)   = {:.6}", cmp.kl_iot);
    println!("KL(pi0 || noisy) = {:.6}", cmp.kl_hat);
    let ordered = cmp.kl_riot < cmp.kl_iot && cmp.kl_iot < cmp.kl_hat;
    println!("riot < iot < noisy: {ordered}");
    Ok(())
}
