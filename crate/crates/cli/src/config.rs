//! Strict JSON run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use wdp::convolution::{Fn1, Fn2, KernelSpec};
use wdp::ito::TransformSpec;
use wdp::mc::RunManifest;
use wdp::paths::frozen_beta;
use wdp::{DriverSpec, SamplePath};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub driver: DriverConfig,
    pub kernel: KernelConfig,
    pub levels: Vec<u32>,
    pub n_paths: u64,
    pub probes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformConfig>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Brownian,
    Poisson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub kind: DriverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKindConfig {
    /// `G ≡ c`.
    Constant,
    /// Volterra kernel of fractional Brownian motion with Hurst index `H`.
    Fractional,
    /// `G(t, s) = β(t) f(s)` with a frozen Brownian path `β`.
    Product,
    /// `G(t, s) = ∫_s^t f(u, s) dβ_u`.
    Volterra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKindConfig,
    #[serde(default, rename = "H", skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_resolution: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub quadrature: f64,
    pub verdict_se_multiplier: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quadrature: 1e-8,
            verdict_se_multiplier: 3.0,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reads a run configuration, or the configuration stored in a run manifest.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let value = if value.get("tool_version").is_some() {
        let m: RunManifest = serde_json::from_value(value).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        m.config
    } else {
        value
    };
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.driver.seed.is_none() {
            return Err(cfg_err("missing key driver.seed"));
        }
        match self.driver.kind {
            DriverKind::Poisson => match self.driver.lambda {
                Some(l) if l > 0.0 && l.is_finite() => {}
                Some(l) => return Err(cfg_err(format!("driver.lambda must be positive, got {l}"))),
                None => return Err(cfg_err("missing key driver.lambda for a poisson driver")),
            },
            DriverKind::Brownian => {
                if self.driver.lambda.is_some() {
                    return Err(cfg_err("driver.lambda only applies to poisson drivers"));
                }
            }
        }
        if self.levels.is_empty() {
            return Err(cfg_err("levels must not be empty"));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("levels must be strictly increasing"));
        }
        if self.n_paths == 0 {
            return Err(cfg_err("n_paths must be at least 1"));
        }
        if self.probes.is_empty() || self.probes.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(cfg_err("probes must be a non-empty list of times in (0, 1]"));
        }
        let k = &self.kernel;
        let need = |o: bool, key: &str| if o { Ok(()) } else { Err(cfg_err(format!("missing key kernel.{key}"))) };
        match k.kind {
            KernelKindConfig::Constant => need(k.c.is_some(), "c")?,
            KernelKindConfig::Fractional => {
                need(k.hurst.is_some(), "H")?;
                need(k.c.is_some(), "c")?;
            }
            KernelKindConfig::Product | KernelKindConfig::Volterra => {
                need(k.beta_seed.is_some(), "beta_seed")?;
                need(k.f.is_some(), "f")?;
            }
        }
        if !(self.tolerances.quadrature > 0.0) || !(self.tolerances.verdict_se_multiplier > 0.0) {
            return Err(cfg_err("tolerances must be positive"));
        }
        if let Some(t) = &self.transform {
            t.build()?;
        }
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.driver.seed.expect("validated")
    }

    pub fn deepest_level(&self) -> u32 {
        *self.levels.last().expect("validated")
    }

    pub fn driver_spec(&self) -> DriverSpec<f64> {
        let seed = self.master_seed();
        match self.driver.kind {
            DriverKind::Brownian => DriverSpec::brownian(seed),
            DriverKind::Poisson => DriverSpec::poisson(self.driver.lambda.expect("validated"), seed),
        }
    }

    pub fn beta_resolution(&self) -> u32 {
        self.kernel.beta_resolution.unwrap_or(self.deepest_level())
    }

    /// The frozen integrator path of product and Volterra kernels.
    pub fn beta(&self) -> Result<Option<Arc<SamplePath<f64>>>, CliError> {
        match (self.kernel.kind, self.kernel.beta_seed) {
            (KernelKindConfig::Product | KernelKindConfig::Volterra, Some(seed)) => {
                Ok(Some(frozen_beta(seed, self.beta_resolution())?))
            }
            _ => Ok(None),
        }
    }

    pub fn kernel_spec(&self, beta: Option<Arc<SamplePath<f64>>>) -> Result<KernelSpec<f64>, CliError> {
        let k = &self.kernel;
        let mut spec = match k.kind {
            KernelKindConfig::Constant => KernelSpec::constant(k.c.expect("validated")),
            KernelKindConfig::Fractional => KernelSpec::fractional(k.hurst.expect("validated"), k.c.expect("validated"))?,
            KernelKindConfig::Product => {
                let name = k.f.as_deref().expect("validated");
                KernelSpec::product_beta_f(beta.expect("beta"), one_arg(name)?, &format!("product f={name}"))
            }
            KernelKindConfig::Volterra => {
                let name = k.f.as_deref().expect("validated");
                KernelSpec::volterra_beta(two_arg(name)?, beta.expect("beta"), &format!("volterra f={name}"))
            }
        };
        spec.rel_tol = self.tolerances.quadrature;
        Ok(spec)
    }
}

/// Named integrands `f(s)` of product kernels.
pub fn one_arg(name: &str) -> Result<Fn1<f64>, CliError> {
    Ok(match name {
        "one" => Arc::new(|_| 1.0),
        "identity" => Arc::new(|s| s),
        "exp" => Arc::new(|s: f64| (-s).exp()),
        other => return Err(cfg_err(format!("unknown kernel.f {other:?} (expected one, identity, exp)"))),
    })
}

/// Named integrands `f(u, s)` of Volterra kernels.
pub fn two_arg(name: &str) -> Result<Fn2<f64>, CliError> {
    Ok(match name {
        "one" => Arc::new(|_, _| 1.0),
        "product" => Arc::new(|u, s| u * s),
        other => return Err(cfg_err(format!("unknown kernel.f {other:?} (expected one, product)"))),
    })
}

impl TransformConfig {
    fn param(&self, key: &str) -> Result<f64, CliError> {
        self.params
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| cfg_err(format!("missing numeric key transform.params.{key}")))
    }

    fn only(&self, keys: &[&str]) -> Result<(), CliError> {
        match self.params.keys().find(|k| !keys.contains(&k.as_str())) {
            Some(k) => Err(cfg_err(format!("unknown key transform.params.{k} for {}", self.name))),
            None => Ok(()),
        }
    }

    pub fn build(&self) -> Result<TransformSpec<f64>, CliError> {
        match self.name.as_str() {
            "square" => {
                self.only(&[])?;
                Ok(TransformSpec::square())
            }
            "sine" => {
                self.only(&[])?;
                Ok(TransformSpec::sine())
            }
            "linear" => {
                self.only(&["a", "b"])?;
                Ok(TransformSpec::linear(self.param("a")?, self.param("b")?))
            }
            "constant" => {
                self.only(&["c"])?;
                Ok(TransformSpec::constant(self.param("c")?))
            }
            "smoothed_abs" => {
                self.only(&["epsilon"])?;
                Ok(TransformSpec::smoothed_abs(self.param("epsilon")?)?)
            }
            other => Err(cfg_err(format!(
                "unknown transform {other:?} (expected square, sine, linear, constant, smoothed_abs)"
            ))),
        }
    }
}
