//! Learn the side costs together with the interaction matrix. Side costs stay
//! on the unit-mass metric set after every step.

use riot::joint::{joint_fit, metric_simplex_violation, JointOptions};
use riot::riot::riot_fit;
use riot::synth::{add_noise, generate_instance, SynthConfig};
use riot::{analysis::kl_divergence, HyperParams};

fn main() -> riot::Result<()> {
    let cfg = SynthConfig { m: 10, n: 8, p: 3, q: 3, hyper: HyperParams { delta: 0.05, outer_iters: 150, ..HyperParams::default() }, ..SynthConfig::default() };
    let inst = generate_instance(&cfg)?;
    let observed = add_noise(&inst.pi0, 0.05, 2)?;

    let plain = riot_fit(&observed, &inst.u, &inst.v, &cfg.kernel, &inst.c_u, &inst.c_v, &cfg.hyper)?;
    let joint = joint_fit(&observed, &inst.u, &inst.v, &cfg.kernel, &cfg.hyper, &JointOptions::default())?;

    println!("fixed side costs: KL(pi0 || fit) = {:.5}", kl_divergence(&inst.pi0, &plain.fitted_plan)?);
    println!("learned side costs: KL(pi0 || fit) = {:.5}", kl_divergence(&inst.pi0, &joint.fitted_plan)?);
    println!(
        "metric violation of learned C_u {:.1e}, C_v {:.1e}",
        metric_simplex_violation(joint.c_u.view()),
        metric_simplex_violation(joint.c_v.view())
    );
    println!("C_u row 0: {}", joint.c_u.as_array().row(0).iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" "));
    Ok(())
}
