use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelVariant;
use crate::sga::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    WeakError,
    ConditionSweep,
    Divergence,
    MomentumDynamics,
    MsgdVsSnag,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::WeakError => "weak_error",
            ExperimentKind::ConditionSweep => "condition_sweep",
            ExperimentKind::Divergence => "divergence",
            ExperimentKind::MomentumDynamics => "momentum_dynamics",
            ExperimentKind::MsgdVsSnag => "msgd_vs_snag",
        }
    }
}

/// One experiment, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub spectrum: Option<Vec<f64>>,
    #[serde(default)]
    pub variant: Option<ModelVariant>,
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub basis_seed: u64,
    #[serde(default)]
    pub family: Option<Family>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub eta_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub mu_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub kappa_grid: Option<Vec<f64>>,
    pub horizon: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default = "yes")]
    pub exact: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    fn blank(experiment: ExperimentKind, horizon: f64) -> Self {
        ExperimentConfig {
            experiment,
            d: None,
            kappa: None,
            spectrum: None,
            variant: None,
            noise_scale: 1.0,
            basis_seed: 0,
            family: None,
            eta: None,
            eta_grid: None,
            mu: None,
            mu_grid: None,
            kappa_grid: None,
            horizon,
            x0: None,
            n_paths: None,
            exact: true,
            seed: 0,
            threads: None,
            out_dir: None,
        }
    }

    /// Desk-scale defaults for each experiment.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut c = match kind {
            ExperimentKind::WeakError => {
                let mut c = Self::blank(kind, 2.0);
                c.spectrum = Some(vec![1.0, 0.1]);
                c.eta_grid = Some(vec![0.1, 0.05, 0.025, 0.0125]);
                c.x0 = Some(vec![1.0, 1.0]);
                c.family = Some(Family::Sgd);
                c
            }
            ExperimentKind::ConditionSweep => {
                let mut c = Self::blank(kind, 0.0);
                c.d = Some(2);
                c.eta = Some(0.1);
                c.kappa_grid = Some(vec![10.0, 30.0, 100.0, 300.0, 1000.0]);
                c
            }
            ExperimentKind::Divergence => {
                let mut c = Self::blank(kind, 100.0);
                c.variant = Some(ModelVariant::EigenbasisScaled);
                c.spectrum = Some(vec![1.0, 0.01]);
                c.eta_grid = Some(vec![0.04, 0.025, 0.015, 0.005]);
                c.x0 = Some(vec![1.0, 1.0]);
                c.n_paths = Some(500);
                c.family = Some(Family::Sgd);
                c
            }
            ExperimentKind::MomentumDynamics => {
                let mut c = Self::blank(kind, 30.0);
                c.spectrum = Some(vec![1.0, 0.225625]);
                c.eta = Some(0.1);
                c.x0 = Some(vec![10.0, 10.0]);
                c.family = Some(Family::Msgd);
                c
            }
            ExperimentKind::MsgdVsSnag => {
                let mut c = Self::blank(kind, 150.0);
                c.eta = Some(0.1);
                c.mu = Some(0.2);
                c
            }
        };
        c.basis_seed = 1;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant.unwrap_or(ModelVariant::IsotropicShift)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive and finite, got {v}")))
            }
        };
        if let Some(grid) = &self.eta_grid {
            if grid.len() < 2 {
                return Err(Error::config("eta_grid", "needs at least two step sizes"));
            }
            for &e in grid {
                positive("eta_grid", e)?;
            }
            if grid.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::config("eta_grid", "must be strictly decreasing"));
            }
        }
        if let Some(e) = self.eta {
            positive("eta", e)?;
        }
        let max_eta = self
            .eta_grid
            .iter()
            .flatten()
            .chain(self.eta.iter())
            .copied()
            .fold(0.0, f64::max);
        if self.experiment != ExperimentKind::ConditionSweep && self.horizon < max_eta {
            return Err(Error::config(
                "horizon",
                format!("must be >= the largest eta ({max_eta})"),
            ));
        }
        if self.experiment != ExperimentKind::ConditionSweep {
            positive("horizon", self.horizon)?;
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::config("noise_scale", "must be >= 0"));
        }
        if let Some(s) = &self.spectrum {
            if s.is_empty() {
                return Err(Error::config("spectrum", "must not be empty"));
            }
            for &l in s {
                positive("spectrum", l)?;
            }
            if let Some(d) = self.d {
                if d != s.len() {
                    return Err(Error::config("d", "disagrees with the spectrum length"));
                }
            }
        }
        if let Some(k) = self.kappa {
            if !(k >= 1.0) {
                return Err(Error::config("kappa", "must be >= 1"));
            }
        }
        if let Some(grid) = &self.kappa_grid {
            if grid.len() < 3 || grid.iter().any(|&k| !(k >= 1.0) || !k.is_finite()) {
                return Err(Error::config("kappa_grid", "needs at least three values >= 1"));
            }
        }
        if let Some(mu) = self.mu {
            positive("mu", mu)?;
        }
        if let Some(grid) = &self.mu_grid {
            for &m in grid {
                positive("mu_grid", m)?;
            }
        }
        if let Some(n) = self.n_paths {
            if n < 2 {
                return Err(Error::config("n_paths", "must be >= 2"));
            }
        }
        if let Some(0) = self.threads {
            return Err(Error::config("threads", "must be >= 1"));
        }
        if let (Some(x0), Some(s)) = (&self.x0, &self.spectrum) {
            if x0.len() != s.len() {
                return Err(Error::config("x0", "length must match the spectrum"));
            }
        }
        match self.experiment {
            ExperimentKind::WeakError | ExperimentKind::Divergence => {
                if self.eta_grid.is_none() {
                    return Err(Error::config("eta_grid", "required for this experiment"));
                }
                if self.spectrum.is_none() {
                    return Err(Error::config("spectrum", "required for this experiment"));
                }
                if self.family.unwrap_or(Family::Sgd) != Family::Sgd {
                    return Err(Error::config("family", "only SGD is supported here"));
                }
            }
            ExperimentKind::ConditionSweep => {
                if self.kappa_grid.is_none() {
                    return Err(Error::config("kappa_grid", "required for this experiment"));
                }
                if self.eta.is_none() {
                    return Err(Error::config("eta", "required for this experiment"));
                }
            }
            ExperimentKind::MomentumDynamics => {
                if self.spectrum.is_none() {
                    return Err(Error::config("spectrum", "required for this experiment"));
                }
                if self.eta.is_none() {
                    return Err(Error::config("eta", "required for this experiment"));
                }
            }
            ExperimentKind::MsgdVsSnag => {
                if self.eta.is_none() {
                    return Err(Error::config("eta", "required for this experiment"));
                }
                if self.mu.is_none() {
                    return Err(Error::config("mu", "required for this experiment"));
                }
            }
        }
        if self.experiment == ExperimentKind::Divergence && self.variant() != ModelVariant::EigenbasisScaled {
            return Err(Error::config(
                "variant",
                "divergence runs on the eigenbasis_scaled model",
            ));
        }
        Ok(())
    }
}
