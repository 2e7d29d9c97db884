//! Learn a cost on one market, then predict the matching on a new market with
//! different people and different marginals.

use riot::analysis::eval_matching;
use riot::riot::{predict_matching, riot_fit};
use riot::synth::{add_noise, generate_instance, SynthConfig};
use riot::{marginals, HyperParams};

fn main() -> riot::Result<()> {
    let cfg = SynthConfig { m: 12, n: 10, p: 4, q: 3, hyper: HyperParams { outer_iters: 100, ..HyperParams::default() }, ..SynthConfig::default() };
    let train = generate_instance(&cfg)?;
    let observed = add_noise(&train.pi0, 0.01, 1)?;
    let fit = riot_fit(&observed, &train.u, &train.v, &cfg.kernel, &train.c_u, &train.c_v, &cfg.hyper)?;
    println!("fit: {} iterations, final objective {:.5}", fit.iterations, fit.objective_trace.last().unwrap());

    // Same ground-truth interaction, new population.
    let test = generate_instance(&SynthConfig { seed: 99, ..cfg.clone() })?;
    let test_plan = riot::entropic::sinkhorn(
        &riot::kernel::kernel_cost(&test.u, &test.v, &train.a0, &cfg.kernel)?,
        &test.mu0,
        &test.nu0,
        cfg.hyper.lambda,
        1e-12,
        100_000,
    )?
    .plan;
    let m = marginals(&test_plan);
    let pred = predict_matching(&fit.a, &test.u, &test.v, &m.mu, &m.nu, &cfg.kernel, cfg.hyper.lambda)?;

    let metrics = eval_matching(&pred, &test_plan)?;
    println!("on the new market: rmse {:.2e}  mae {:.2e}  KL {:.2e}", metrics.rmse, metrics.mae, metrics.kl.unwrap_or(f64::NAN));
    Ok(())
}
