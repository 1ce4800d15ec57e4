//! Run configuration: TOML file, flag overrides, and the config hash.
//!
//! The configuration captures everything that determines the numbers a run
//! produces: manifold, grid, driver recipe, rule, scheme, seed, path count
//! and z threshold. Execution details (output directory, thread count,
//! input files) deliberately live outside it, so the hash embedded in
//! every output file identifies the mathematical experiment and nothing
//! else; re-running with a different thread count reproduces files
//! bit-identically, hash included.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use manifold_roller_core::manifold::ManifoldKind;
use manifold_roller_core::path::JumpLaw;
use manifold_roller_core::rolling::Scheme;
use manifold_roller_core::ConnectionRuleKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `flat:<d>` or `sphere:<d>`.
    pub manifold: String,
    pub seed: u64,
    pub steps: usize,
    pub horizon: f64,
    /// `euclid`, `proj` or `geo`.
    pub rule: String,
    /// `euler` or `heun`.
    pub scheme: String,
    /// Monte Carlo path count.
    pub paths: usize,
    pub z_threshold: f64,
    pub driver: DriverSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifold: "sphere:2".into(),
            seed: 42,
            steps: 1000,
            horizon: 1.0,
            rule: "proj".into(),
            scheme: "euler".into(),
            paths: 10_000,
            z_threshold: 4.0,
            driver: DriverSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverSpec {
    /// `brownian`, `poisson`, `superposition` or `file`.
    pub kind: String,
    /// Input path when `kind = "file"`.
    pub file: Option<String>,
    pub poisson: PoissonSpec,
}

impl Default for DriverSpec {
    fn default() -> Self {
        DriverSpec {
            kind: "superposition".into(),
            file: None,
            poisson: PoissonSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonSpec {
    pub rate: f64,
    pub law: JumpLaw,
}

impl Default for PoissonSpec {
    fn default() -> Self {
        PoissonSpec {
            rate: 2.0,
            law: JumpLaw::FixedNorm { radius: 0.9 },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        Ok(cfg)
    }

    pub fn manifold_kind(&self) -> Result<ManifoldKind> {
        self.manifold
            .parse()
            .map_err(|e: String| anyhow::anyhow!("--manifold: {e}"))
    }

    pub fn rule_kind(&self) -> Result<ConnectionRuleKind> {
        match self.rule.as_str() {
            "euclid" => Ok(ConnectionRuleKind::EuclideanDiff),
            "proj" => Ok(ConnectionRuleKind::AmbientProjection),
            "geo" => Ok(ConnectionRuleKind::geodesic()),
            other => bail!("--rule must be euclid, proj or geo, got {other:?}"),
        }
    }

    pub fn scheme_kind(&self) -> Result<Scheme> {
        match self.scheme.as_str() {
            "euler" => Ok(Scheme::GeodesicEuler),
            "heun" => Ok(Scheme::GeodesicHeun),
            other => bail!("--scheme must be euler or heun, got {other:?}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.manifold_kind()?;
        self.rule_kind()?;
        self.scheme_kind()?;
        if self.steps == 0 {
            bail!("steps must be positive");
        }
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            bail!("horizon must be positive and finite");
        }
        match self.driver.kind.as_str() {
            "brownian" | "poisson" | "superposition" => {}
            "file" => {
                if self.driver.file.is_none() {
                    bail!("driver.kind = \"file\" needs driver.file");
                }
            }
            other => bail!(
                "driver.kind must be brownian, poisson, superposition or file, got {other:?}"
            ),
        }
        if self.driver.poisson.rate < 0.0 {
            bail!("poisson rate must be nonnegative");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding; embedded in every output.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn as_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
