use std::fmt;
use std::str::FromStr;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::{cast, ParamsMut, Scalar};
use crate::{Error, Result};

/// Which closed form the warmup schedule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// `sqrt(d_model) * min(sqrt(cs), cs * ws^-1.5)`, capped.
    #[default]
    Literal,
    /// `d_model^-0.5 * min(cs^-0.5, cs * ws^-1.5)`, capped.
    Noam,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Literal => "literal",
            ScheduleMode::Noam => "noam",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "literal" => Ok(ScheduleMode::Literal),
            "noam" => Ok(ScheduleMode::Noam),
            other => Err(format!("unknown schedule {other:?} (allowed: literal, noam)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub d_model: usize,
    pub cap: f64,
    pub mode: ScheduleMode,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { warmup_steps: 2048, d_model: 512, cap: 4e-4, mode: ScheduleMode::Literal }
    }
}

impl LrSchedule {
    /// Rate for step `cs` (1-based).
    pub fn rate(&self, cs: u64) -> Result<f64> {
        match self.mode {
            ScheduleMode::Literal => lrate(cs, self.warmup_steps, self.d_model, self.cap),
            ScheduleMode::Noam => lrate_noam(cs, self.warmup_steps, self.d_model, self.cap),
        }
    }
}

fn check_step(cs: u64, ws: u64) -> Result<()> {
    if cs < 1 {
        return Err(Error::Schedule(format!("step counter must be >= 1, got {cs}")));
    }
    if ws == 0 {
        return Err(Error::Schedule("warmup steps must be positive".into()));
    }
    Ok(())
}

/// `min(sqrt(d_model) * min(sqrt(cs), cs * ws^-1.5), cap)`, taken as written.
pub fn lrate(cs: u64, ws: u64, d_model: usize, cap: f64) -> Result<f64> {
    check_step(cs, ws)?;
    let cs = cs as f64;
    let arg1 = cs.sqrt();
    let arg2 = cs * (ws as f64).powf(-1.5);
    let lr = (d_model as f64).sqrt() * arg1.min(arg2);
    Ok(lr.min(cap))
}

/// Inverse-square-root warmup schedule, with the same cap.
pub fn lrate_noam(cs: u64, ws: u64, d_model: usize, cap: f64) -> Result<f64> {
    check_step(cs, ws)?;
    let cs = cs as f64;
    let arg1 = cs.powf(-0.5);
    let arg2 = cs * (ws as f64).powf(-1.5);
    let lr = (d_model as f64).powf(-0.5) * arg1.min(arg2);
    Ok(lr.min(cap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-6, weight_decay: 0.1 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !betas_ok || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay. Decay is applied to the parameter
/// before the moment update, and only to parameters flagged for decay.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: OptimizerConfig,
    moments: Vec<(ArrayD<F>, ArrayD<F>)>,
    step: u64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, moments: Vec::new(), step: 0 })
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Gradients are checked for
    /// finiteness before anything is modified.
    pub fn step(&mut self, params: &mut ParamsMut<'_, F>, lr: f64) -> Result<()> {
        for (name, p) in params.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in {name}")));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())))
                .collect();
        }
        if self.moments.len() != params.len()
            || self.moments.iter().zip(params.iter()).any(|((m, _), (_, p))| m.shape() != p.value.shape())
        {
            return Err(Error::shape("parameter set changed between optimizer steps"));
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2): (F, F) = (cast(c.beta1), cast(c.beta2));
        let one = F::one();
        let bias1: F = cast(1.0 - c.beta1.powi(self.step as i32));
        let bias2: F = cast(1.0 - c.beta2.powi(self.step as i32));
        let lr_f: F = cast(lr);
        let eps: F = cast(c.eps);
        let shrink: F = cast(1.0 - lr * c.weight_decay);

        for ((_, p), (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if p.decay {
                p.value.mapv_inplace(|x| x * shrink);
            }
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|x, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *x -= lr_f * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(params: &mut ParamsMut<'_, F>, max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .map(|(_, p)| p.grad.iter().map(|g| g.to_f64().unwrap().powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total.is_finite() {
        let scale: F = cast(max_norm / (total + 1e-12));
        for (_, p) in params.iter_mut() {
            p.grad.mapv_inplace(|g| g * scale);
        }
    }
    total
}
