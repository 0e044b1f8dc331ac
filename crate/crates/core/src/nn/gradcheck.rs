//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{accumulate_backward, init_params, Architecture, ForwardCache, Gradients, ModelParams};
use crate::error::Result;
use crate::loss::LossKind;

const STEP: f64 = 1e-5;
const BATCH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the worst parameter.
    pub worst_param: usize,
    pub n_params: usize,
}

struct Problem {
    params: ModelParams,
    inputs: Vec<(Vec<f64>, Vec<f64>, f64)>,
    loss: LossKind,
}

impl Problem {
    fn new(arch: &Architecture, loss: LossKind, seed: u64) -> Result<Self> {
        let mut params = init_params(arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
        // Non-zero biases so their gradients are exercised.
        for layer in params.layers_mut() {
            for b in &mut layer.bias {
                *b += rng.gen_range(-0.3..0.3);
            }
        }
        let (nb, nc) = match arch {
            Architecture::Unconditional { input, .. } => (*input, 0),
            Architecture::Conditional {
                base_input,
                cond_input,
                ..
            } => (*base_input, *cond_input),
        };
        let mut inputs = Vec::with_capacity(BATCH);
        for _ in 0..BATCH {
            let base: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let cond: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pred = LossKind::outage_probability(&params.forward(&base, &cond, None)?);
            // Keep clear of the |gt - pred| kink of the exponential loss.
            let gt = loop {
                let g: f64 = rng.gen_range(0.0..1.0);
                if (g - pred).abs() > 0.05 {
                    break g;
                }
            };
            inputs.push((base, cond, gt));
        }
        Ok(Self { params, inputs, loss })
    }

    fn loss_at(&self, params: &ModelParams) -> Result<f64> {
        let mut total = 0.0;
        for (base, cond, gt) in &self.inputs {
            let out = params.forward(base, cond, None)?;
            total += self.loss.value_and_grad(&out, *gt)?.0;
        }
        Ok(total / self.inputs.len() as f64)
    }

    fn analytic(&self) -> Result<Gradients> {
        let mut grads = self.params.zeros_like();
        let mut cache = ForwardCache::default();
        for (base, cond, gt) in &self.inputs {
            let out = self.params.forward(base, cond, Some(&mut cache))?;
            let (_, d_out) = self.loss.value_and_grad(&out, *gt)?;
            let dlogits = super::head_backward(&out, &d_out);
            accumulate_backward(&self.params, &cache, &dlogits, &mut grads)?;
        }
        grads.scale(1.0 / self.inputs.len() as f64);
        Ok(grads)
    }
}

/// Max relative error between backprop and central differences on a small
/// random instance of `arch`.
pub fn grad_check(arch: &Architecture, loss: LossKind, seed: u64) -> Result<f64> {
    Ok(grad_check_with(arch, loss, seed, |_| {})?.max_relative_error)
}

/// As [`grad_check`], with a hook that may alter the analytic gradients
/// before comparison.
pub fn grad_check_with(
    arch: &Architecture,
    loss: LossKind,
    seed: u64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport> {
    let problem = Problem::new(arch, loss, seed)?;
    let mut grads = problem.analytic()?;
    tamper(&mut grads);
    let analytic = grads.flatten();
    let base = problem.params.flatten();
    let mut probe = problem.params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: 0,
        n_params: base.len(),
    };
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + STEP;
        probe.load_flat(&values)?;
        let plus = problem.loss_at(&probe)?;
        values[i] = base[i] - STEP;
        probe.load_flat(&values)?;
        let minus = problem.loss_at(&probe)?;
        values[i] = base[i];
        let numeric = (plus - minus) / (2.0 * STEP);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_param = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_unconditional(d_out: usize) -> Architecture {
        Architecture::Unconditional {
            input: 3,
            hidden: vec![4, 3],
            d_out,
        }
    }

    fn tiny_conditional(d_out: usize) -> Architecture {
        Architecture::Conditional {
            base_input: 3,
            cond_input: 2,
            base_hidden: vec![3],
            cond_hidden: vec![2],
            head_hidden: vec![2],
            d_out,
        }
    }

    #[test]
    fn instances_are_small() {
        for loss in [LossKind::exponential(), LossKind::cross_entropy()] {
            assert!(tiny_unconditional(loss.d_out()).n_params() <= 64);
            assert!(tiny_conditional(loss.d_out()).n_params() <= 64);
        }
    }

    #[test]
    fn passes_for_both_architectures_and_losses() {
        for loss in [LossKind::exponential(), LossKind::cross_entropy()] {
            for arch in [tiny_unconditional(loss.d_out()), tiny_conditional(loss.d_out())] {
                for seed in 0..3 {
                    let err = grad_check(&arch, loss, seed).unwrap();
                    assert!(err < 1e-5, "{arch} {loss} seed {seed}: {err}");
                }
            }
        }
    }

    #[test]
    fn corrupted_bias_gradient_is_detected() {
        let arch = tiny_conditional(2);
        let report = grad_check_with(&arch, LossKind::cross_entropy(), 1, |g| {
            let ModelParams::Conditional(n) = g else { unreachable!() };
            n.bias_head.bias[0] = n.bias_head.bias[0] * 1.5 + 0.1;
        })
        .unwrap();
        assert!(report.max_relative_error > 1e-2);
    }

    #[test]
    fn deterministic() {
        let arch = tiny_unconditional(1);
        let a = grad_check(&arch, LossKind::exponential(), 4).unwrap();
        assert_eq!(a, grad_check(&arch, LossKind::exponential(), 4).unwrap());
    }
}
