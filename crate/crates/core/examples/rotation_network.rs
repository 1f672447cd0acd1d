//! Runs the rotation-compensation network forward and backward on the
//! splats of a synthetic avatar: identity at initialisation, non-trivial
//! once the last layer is perturbed.
//!
//! cargo run --release --example rotation_network

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use surfel_avatar::body::{make_mini_body, Body, MiniBodySpec};
use surfel_avatar::dataset::{ground_truth_avatar, synthetic_pose, SyntheticConfig};
use surfel_avatar::rcn::{rcn_backward, rcn_forward, RcnInput, RcnParams, THETA_DIM};

fn main() -> anyhow::Result<()> {
    let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::figure(), 0)?)?);
    let synth = SyntheticConfig::default();
    let avatar = ground_truth_avatar(body.clone(), &synth)?;
    let inputs: Vec<RcnInput> = avatar.splats.iter().map(RcnInput::from).collect();
    let theta = synthetic_pose(&body, 0.3, synth.arm_swing).theta_flat(THETA_DIM);

    let mut params = RcnParams::new(body.bundle.face_count(), 0);
    println!("{} parameters over {} tensors", params.value_count(), params.tensors().len());
    let (q, _) = rcn_forward(&params, &inputs, &theta)?;
    let off = q.iter().map(|q| 1.0 - q.w.abs()).fold(0.0, f64::max);
    println!("at initialisation: max 1-|w| over {} splats = {off:.2e}", q.len());

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for t in params.tensors_mut().into_iter().skip(11) {
        t.iter_mut().for_each(|x| *x = rng.gen_range(-0.05..0.05));
    }
    let (q, cache) = rcn_forward(&params, &inputs, &theta)?;
    let mean_angle = q.iter().map(|q| 2.0 * q.w.abs().min(1.0).acos()).sum::<f64>() / q.len() as f64;
    println!("perturbed: mean compensation angle {:.4} rad", mean_angle);

    // gradient of the summed w component
    let up = vec![[1.0, 0.0, 0.0, 0.0]; q.len()];
    let g = rcn_backward(&params, &cache, &up)?;
    for (i, t) in g.params.tensors().iter().enumerate() {
        let n = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("tensor {i:2}: {:7} values, gradient norm {n:.3e}", t.len());
    }
    Ok(())
}
