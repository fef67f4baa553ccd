use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::model::JumpKernel;

/// Consecutive rejections after which the envelope is considered broken.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Generator for Monte-Carlo run `run` of an experiment seeded with `seed`.
/// Each run owns an independent ChaCha stream, so runs can execute in any order.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Time until the next jump from `rho`: exponential with rate `lambda_bar(rho)`,
/// or `+inf` when the rate is zero.
pub fn sample_jump_time<R: Rng + ?Sized>(rho: f64, kernel: &JumpKernel, rng: &mut R) -> Result<f64> {
    let rate = kernel.intensity(rho);
    if rate < 0.0 || !rate.is_finite() {
        return Err(Error::Model(format!("jump intensity at rho = {rho} is {rate}")));
    }
    if rate == 0.0 {
        return Ok(f64::INFINITY);
    }
    let exp = Exp::new(rate).map_err(|e| Error::Model(e.to_string()))?;
    Ok(exp.sample(rng))
}

/// Post-jump parameter with density `lambda(theta, rho) / lambda_bar(rho)`, by rejection
/// against a uniform proposal on the box.
pub fn sample_post_jump_param<R: Rng + ?Sized>(rho: f64, kernel: &JumpKernel, rng: &mut R) -> Result<f64> {
    if !(kernel.intensity(rho) > 0.0) {
        return Err(Error::Model(format!("no jumps leave rho = {rho}: intensity is zero")));
    }
    let bx = kernel.param_box();
    let envelope = kernel.lambda_max();
    for _ in 0..MAX_REJECTIONS {
        let theta = bx.lo() + bx.measure() * rng.random::<f64>();
        if rng.random::<f64>() * envelope < kernel.density(theta, rho) {
            return Ok(theta);
        }
    }
    Err(Error::Model(format!(
        "rejection sampler exceeded {MAX_REJECTIONS} attempts at rho = {rho}; envelope {envelope} too loose"
    )))
}
