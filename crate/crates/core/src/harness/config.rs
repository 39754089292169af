//! Run configuration: one TOML file covering the fundamental diagram, plant,
//! controller, disturbance, demand shapes, gates, scenarios and the sweep.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocation::Policy;
use crate::error::{Error, Result};
use crate::mpc::{DemandBaseline, MgcConfig};
use crate::nfd::NfdParams;
use crate::plant::{DisturbanceSpec, Gate, Plant, Trapezoid};

/// The bundled San Francisco configuration (synthetic gate data).
pub const SAN_FRANCISCO_TOML: &str = include_str!("../../configs/san_francisco.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Controller period `T` (h).
    pub period_hours: f64,
    pub substeps: usize,
    pub overflow_fraction: f64,
    pub demand_baseline: DemandBaseline,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            period_hours: 0.05,
            substeps: 10,
            overflow_fraction: 0.9,
            demand_baseline: DemandBaseline::Nominal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub horizons: Vec<usize>,
    /// Horizons from this value on are expected to perform alike.
    pub stable_from: usize,
    /// Allowed relative TTS spread among the stable horizons.
    pub tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            horizons: vec![1, 2, 3, 5, 8, 9, 10, 12, 15, 20, 25],
            stable_from: 10,
            tolerance: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Initial accumulation (veh).
    pub n0: f64,
    /// Initial queues as a fraction of storage.
    #[serde(default)]
    pub queue_fraction: f64,
    /// `"none"` or a key of the `[demand]` table.
    #[serde(default = "none_tag")]
    pub demand: String,
    /// Scenario length in periods.
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: Policy,
}

fn none_tag() -> String {
    "none".to_string()
}

fn default_policy() -> Policy {
    Policy::Mgc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub nfd: NfdParams,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub controller: MgcConfig,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub demand: BTreeMap<String, Trapezoid>,
    pub gates: Vec<Gate>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Config::parse(&text, path)
    }

    pub fn san_francisco() -> Config {
        Config::parse(SAN_FRANCISCO_TOML, Path::new("<bundled san_francisco.toml>"))
            .expect("bundled configuration is valid")
    }

    /// Parses and validates; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Config> {
        let config_err = |message: String| Error::Config {
            path: origin.to_path_buf(),
            message,
        };
        let mut cfg: Config = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.controller.demand_baseline = cfg.plant.demand_baseline;
        cfg.validate().map_err(|e| match e {
            Error::Config { .. } => e,
            other => config_err(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.nfd.validate()?;
        if self.gates.is_empty() {
            return Err(Error::invalid("gates", "at least one gate is required"));
        }
        for (i, g) in self.gates.iter().enumerate() {
            if g.id != i + 1 {
                return Err(Error::invalid(format!("gates[{i}].id"), format!("expected {}, found {}", i + 1, g.id)));
            }
            g.validate()?;
        }
        self.plant()?;
        self.controller.validate()?;
        self.disturbance.validate()?;
        for (name, shape) in &self.demand {
            if name == "none" {
                return Err(Error::invalid("demand.none", "`none` is reserved for zero demand"));
            }
            if !(0.0..=1.0).contains(&shape.level) {
                return Err(Error::invalid(format!("demand.{name}.level"), "must lie in [0, 1]"));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !names.insert(&s.name) {
                return Err(Error::invalid(format!("scenario {}", s.name), "duplicate name"));
            }
            if !(0.0..=self.nfd.n_max).contains(&s.n0) {
                return Err(Error::invalid(format!("scenario {}.n0", s.name), format!("must lie in [0, {}]", self.nfd.n_max)));
            }
            if !(0.0..=1.0).contains(&s.queue_fraction) {
                return Err(Error::invalid(format!("scenario {}.queue_fraction", s.name), "must lie in [0, 1]"));
            }
            if s.horizon == 0 {
                return Err(Error::invalid(format!("scenario {}.horizon", s.name), "must be at least 1"));
            }
            let shape = self.shape(&s.demand)?;
            if shape.len() > s.horizon {
                return Err(Error::invalid(
                    format!("scenario {}.demand", s.name),
                    "demand pulse is longer than the scenario",
                ));
            }
        }
        if self.sweep.horizons.is_empty() || self.sweep.horizons.contains(&0) {
            return Err(Error::invalid("sweep.horizons", "need a nonempty list of positive horizons"));
        }
        if !(self.sweep.tolerance > 0.0) {
            return Err(Error::invalid("sweep.tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<Plant> {
        Plant::new(
            self.nfd.clone(),
            self.gates.clone(),
            self.plant.overflow_fraction,
            self.plant.period_hours,
            self.plant.substeps,
        )
    }

    /// Demand shape for a scenario tag; `"none"` is the empty pulse.
    pub fn shape(&self, tag: &str) -> Result<Trapezoid> {
        if tag == "none" {
            return Ok(Trapezoid::zero());
        }
        self.demand
            .get(tag)
            .copied()
            .ok_or_else(|| Error::invalid("demand", format!("unknown demand profile `{tag}`")))
    }

    pub fn scenario(&self, name: &str) -> Result<&ScenarioConfig> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::invalid("scenario", format!("no scenario named `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::cap_ratios;

    #[test]
    fn bundled_config_loads() {
        let cfg = Config::san_francisco();
        assert_eq!(cfg.gates.len(), 15);
        assert!(cfg.gates[..11].iter().all(|g| g.cycle == 90.0));
        assert!(cfg.gates[11..].iter().all(|g| g.cycle == 60.0));
        assert_eq!(cfg.scenarios.len(), 12);
        assert_eq!(cfg.controller.horizon, 15);
        assert_eq!(cfg.sweep.horizons.len(), 11);
    }

    #[test]
    fn storages_reproduce_published_ratios() {
        let published = [6.2, 5.3, 8.0, 4.8, 4.6, 5.3, 5.3, 5.3, 14.4, 13.1, 5.3, 5.0, 4.1, 4.1, 9.1];
        let r = cap_ratios(&Config::san_francisco().gates);
        for (ri, p) in r.iter().zip(published) {
            assert!((100.0 * ri - p).abs() < 0.05, "{} vs {p}", 100.0 * ri);
        }
    }

    #[test]
    fn nominal_flows_balance_output_at_set_point() {
        let cfg = Config::san_francisco();
        let total: f64 = cfg.gates.iter().map(|g| g.q_nom).sum();
        let out = cfg.nfd.output(4000.0).unwrap();
        assert!((total - out).abs() / out < 1e-3);
    }

    fn without_line(key: &str) -> String {
        let mut removed = false;
        SAN_FRANCISCO_TOML
            .lines()
            .filter(|l| {
                if !removed && l.starts_with(key) {
                    removed = true;
                    false
                } else {
                    true
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn missing_q_min_is_rejected() {
        let err = Config::parse(&without_line("q_min"), Path::new("x.toml")).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("q_min"), "{err}");
    }

    #[test]
    fn invariant_violation_names_the_field() {
        let text = SAN_FRANCISCO_TOML.replacen("q_min = 900.0", "q_min = 901.0", 1);
        let err = Config::parse(&text, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("gate 1.q_min"), "{err}");
    }

    #[test]
    fn unknown_keys_and_profiles_are_rejected() {
        let text = SAN_FRANCISCO_TOML.replacen("[controller]", "[controller]\nhorizn = 3", 1);
        assert!(Config::parse(&text, Path::new("x.toml")).is_err());
        let text = SAN_FRANCISCO_TOML.replacen("demand = \"high\"", "demand = \"extreme\"", 1);
        assert!(Config::parse(&text, Path::new("x.toml")).is_err());
    }
}
