//! The diffusion pieces in isolation: the forward process at a few times,
//! and DDIM sampling with a predictor that always returns the same latent.

use candle_core::Tensor;

use difnd::diffusion::{ddim_sample, forward_noise, initial_noise, ConditionBundle, NoiseSchedule, ZeroPredictor};
use difnd::nn::device;

struct Fixed(Tensor);

impl ZeroPredictor for Fixed {
    fn predict(&self, z_t: &Tensor, _: Option<&ConditionBundle>, _: &[f64]) -> difnd::Result<Tensor> {
        Ok(self.0.broadcast_as(z_t.dims())?.contiguous()?)
    }
}

fn main() -> anyhow::Result<()> {
    let schedule = NoiseSchedule::default();
    let z0 = Tensor::new(&[[[1.0f64, -1.0, 0.5, 2.0]]], &device())?;
    let eps = initial_noise(&[42], 1, 4)?;
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let zt = forward_noise(&z0, t, &eps, &schedule)?;
        println!(
            "t={t:.2} γ={:.3} z_t={:?}",
            schedule.gamma(t),
            zt.flatten_all()?.to_vec1::<f64>()?
        );
    }
    let oracle = Fixed(z0.clone());
    for steps in [1, 2, 8, 50] {
        let z = ddim_sample(&oracle, None, &schedule, steps, &eps)?;
        let err = (z - &z0)?.abs()?.max_all()?.to_scalar::<f64>()?;
        println!("{steps:>2} DDIM steps: max error {err:.2e}");
    }
    Ok(())
}
