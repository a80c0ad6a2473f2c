use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-cycle schedule with cosine annealing in both phases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycleConfig {
    pub max_lr: f64,
    pub total_steps: u64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycleConfig {
    pub fn new(total_steps: u64) -> Self {
        Self {
            max_lr: 2e-4,
            total_steps,
            pct_start: 0.1,
            div_factor: 10.0,
            final_div_factor: 100.0,
        }
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.initial_lr() / self.final_div_factor
    }

    /// Step at which the schedule reaches `max_lr`.
    pub fn peak_step(&self) -> u64 {
        let raw = (self.pct_start * self.total_steps as f64).round() as u64;
        raw.clamp(1, self.total_steps.saturating_sub(2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 3 {
            return Err(Error::Config(format!(
                "one-cycle schedule needs at least 3 steps, got {}",
                self.total_steps
            )));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::Config(format!("pct_start must be in (0, 1), got {}", self.pct_start)));
        }
        if !(self.max_lr > 0.0 && self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return Err(Error::Config("one-cycle rates and factors must be positive".into()));
        }
        Ok(())
    }
}

fn cos_anneal(start: f64, end: f64, pct: f64) -> f64 {
    end + (start - end) / 2.0 * ((PI * pct).cos() + 1.0)
}

pub fn onecycle_lr(step: u64, cfg: &OneCycleConfig) -> Result<f64> {
    cfg.validate()?;
    if step >= cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside one-cycle range [0, {})",
            cfg.total_steps
        )));
    }
    let peak = cfg.peak_step();
    let last = cfg.total_steps - 1;
    Ok(if step <= peak {
        cos_anneal(cfg.initial_lr(), cfg.max_lr, step as f64 / peak as f64)
    } else {
        cos_anneal(
            cfg.max_lr,
            cfg.final_lr(),
            (step - peak) as f64 / (last - peak) as f64,
        )
    })
}

/// Cosine annealing with warm restarts, evaluated at fractional epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineRestartConfig {
    pub init_lr: f64,
    pub t0: u32,
    pub t_mult: u32,
    pub eta_min: f64,
}

impl Default for CosineRestartConfig {
    fn default() -> Self {
        Self {
            init_lr: 2e-5,
            t0: 15,
            t_mult: 1,
            eta_min: 2e-7,
        }
    }
}

pub fn cosine_restart_lr(epoch: f64, cfg: &CosineRestartConfig) -> f64 {
    let epoch = epoch.max(0.0);
    let t0 = cfg.t0.max(1) as f64;
    let (t_cur, t_i) = if cfg.t_mult <= 1 {
        (epoch % t0, t0)
    } else {
        let mult = cfg.t_mult as f64;
        let n = ((epoch / t0 * (mult - 1.0) + 1.0).ln() / mult.ln()).floor();
        let start = t0 * (mult.powf(n) - 1.0) / (mult - 1.0);
        (epoch - start, t0 * mult.powf(n))
    };
    cfg.eta_min + (cfg.init_lr - cfg.eta_min) * (1.0 + (PI * t_cur / t_i).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onecycle_endpoints() {
        let cfg = OneCycleConfig::new(1000);
        assert!((onecycle_lr(0, &cfg).unwrap() - 2e-5).abs() < 1e-18);
        assert!((onecycle_lr(100, &cfg).unwrap() - 2e-4).abs() < 1e-18);
        assert!((onecycle_lr(999, &cfg).unwrap() - 2e-7).abs() < 1e-18);
        assert!(onecycle_lr(1000, &cfg).is_err());
    }

    #[test]
    fn onecycle_is_unimodal() {
        let cfg = OneCycleConfig::new(237);
        let lrs: Vec<f64> = (0..237).map(|s| onecycle_lr(s, &cfg).unwrap()).collect();
        let peak = cfg.peak_step() as usize;
        assert!(lrs[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[peak..].windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs[peak], cfg.max_lr);
    }

    #[test]
    fn onecycle_rejects_tiny_runs() {
        assert!(onecycle_lr(0, &OneCycleConfig::new(2)).is_err());
    }

    #[test]
    fn cosine_restart_points() {
        let cfg = CosineRestartConfig::default();
        assert_eq!(cosine_restart_lr(0.0, &cfg), 2e-5);
        assert_eq!(cosine_restart_lr(15.0, &cfg), 2e-5);
        assert!((cosine_restart_lr(7.5, &cfg) - 1.01e-5).abs() < 1e-12);
        for i in 0..400 {
            let lr = cosine_restart_lr(i as f64 * 0.173, &cfg);
            assert!(lr >= cfg.eta_min - 1e-18 && lr <= cfg.init_lr + 1e-18);
        }
    }

    #[test]
    fn cosine_restart_with_growing_periods() {
        let cfg = CosineRestartConfig {
            t0: 2,
            t_mult: 2,
            ..Default::default()
        };
        // periods: [0,2), [2,6), [6,14)
        assert!((cosine_restart_lr(2.0, &cfg) - cfg.init_lr).abs() < 1e-18);
        assert!((cosine_restart_lr(6.0, &cfg) - cfg.init_lr).abs() < 1e-18);
        let mid = cosine_restart_lr(4.0, &cfg);
        assert!((mid - (cfg.eta_min + 0.5 * (cfg.init_lr - cfg.eta_min))).abs() < 1e-15);
    }
}
