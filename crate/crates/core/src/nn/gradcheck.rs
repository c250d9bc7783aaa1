//! Central finite-difference verification of the hand-written backward
//! passes. Intended for `f64` modules with dropout disabled.

use rand::seq::index::sample;
use rand::SeedableRng;

use super::{Module, NnRng};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter tensor (all of them if smaller).
    pub samples_per_param: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is zero are judged on absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, samples_per_param: 8, seed: 0, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn set_coord<M: Module<f64>>(module: &mut M, param: usize, index: usize, value: f64) -> f64 {
    let mut params = module.params_mut();
    let slot = &mut params[param].1.value;
    let data = slot.as_slice_memory_order_mut().expect("parameters are contiguous");
    std::mem::replace(&mut data[index], value)
}

/// Compares the gradients produced by `backward` (which must run a forward
/// and accumulate into the module's gradient buffers) with central
/// differences of the scalar `loss`.
pub fn grad_check<M, L, B>(
    module: &mut M,
    mut loss: L,
    mut backward: B,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    M: Module<f64>,
    L: FnMut(&M) -> Result<f64>,
    B: FnMut(&mut M) -> Result<()>,
{
    module.zero_grad();
    backward(module)?;
    let analytic: Vec<(String, Vec<f64>)> = module
        .params()
        .into_iter()
        .map(|(name, p)| (name, p.grad.iter().copied().collect()))
        .collect();
    for (name, g) in &analytic {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in {name}")));
        }
    }

    let mut rng = NnRng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, checked: 0 };
    for (p, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = if n <= cfg.samples_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.samples_per_param).into_vec()
        };
        for idx in picks {
            let orig = set_coord(module, p, idx, 0.0);
            set_coord(module, p, idx, orig + cfg.step);
            let plus = loss(module)?;
            set_coord(module, p, idx, orig - cfg.step);
            let minus = loss(module)?;
            set_coord(module, p, idx, orig);
            let numeric = (plus - minus) / (2.0 * cfg.step);
            if !numeric.is_finite() {
                return Err(Error::Numerical(format!("non-finite difference at {name}[{idx}]")));
            }
            let err = relative_error(grad[idx], numeric, cfg.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{random_array, Linear};
    use ndarray::{Array2, Ix2};

    #[test]
    fn catches_a_wrong_gradient() {
        let mut rng = NnRng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(3, 2, &mut rng);
        let x: Array2<f64> = random_array(Ix2(4, 3), &mut rng);
        let loss = |m: &Linear<f64>| Ok(m.forward(x.view())?.0.sum());
        let bad = |m: &mut Linear<f64>| {
            let (y, cache) = m.forward(x.view())?;
            m.backward(&cache, (Array2::ones(y.dim()) * 2.0).view());
            Ok(())
        };
        let report = grad_check(&mut lin, loss, bad, &GradCheckConfig::default()).unwrap();
        assert!(report.max_relative_error > 0.4);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(0.0, 1e-9, 1e-6) - 1e-3).abs() < 1e-15);
    }
}
