//! Gate demand profiles and the congested-regime network disturbance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Gate;
use crate::error::{Error, Result};

/// Trapezoidal demand pulse, in controller periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid {
    pub ramp_up: usize,
    pub plateau: usize,
    pub ramp_down: usize,
    /// Plateau level as a fraction of the saturation flow.
    pub level: f64,
}

impl Trapezoid {
    pub fn zero() -> Trapezoid {
        Trapezoid {
            ramp_up: 0,
            plateau: 0,
            ramp_down: 0,
            level: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.ramp_up + self.plateau + self.ramp_down
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0 || self.level == 0.0
    }
}

/// Demand series (veh/h) of one gate: linear ramp to `level * S`, plateau,
/// linear ramp back down, then zeros up to `horizon` samples.
///
/// Ramp samples exclude both endpoints, so a ramp of `r` steps climbs in
/// increments of `1 / (r + 1)` of the plateau.
pub fn make_trapezoid(gate: &Gate, shape: &Trapezoid, horizon: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&shape.level) {
        return Err(Error::invalid("demand.level", "must lie in [0, 1]"));
    }
    if shape.len() > horizon {
        return Err(Error::invalid(
            "demand shape",
            format!("ramps and plateau ({}) exceed the horizon ({horizon})", shape.len()),
        ));
    }
    let peak = shape.level * gate.saturation_flow;
    let mut series = Vec::with_capacity(horizon);
    let up = shape.ramp_up as f64 + 1.0;
    series.extend((1..=shape.ramp_up).map(|j| peak * j as f64 / up));
    series.extend(std::iter::repeat_n(peak, shape.plateau));
    let down = shape.ramp_down as f64 + 1.0;
    series.extend((1..=shape.ramp_down).rev().map(|j| peak * j as f64 / down));
    series.resize(horizon, 0.0);
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DisturbanceSpec {
    Zero,
    /// Uniform noise in `[-half_range, half_range]` veh/h whenever the
    /// accumulation exceeds `threshold` veh.
    CongestedRandom { half_range: f64, threshold: f64 },
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        DisturbanceSpec::CongestedRandom {
            half_range: 5000.0,
            threshold: 6000.0,
        }
    }
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Result<()> {
        if let DisturbanceSpec::CongestedRandom { half_range, threshold } = *self {
            if !(half_range >= 0.0 && half_range.is_finite()) {
                return Err(Error::invalid("disturbance.half_range", "must be finite and >= 0"));
            }
            if !threshold.is_finite() {
                return Err(Error::invalid("disturbance.threshold", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Network disturbance (veh/h) at period `step` given accumulation `n`.
///
/// Each step draws from its own ChaCha stream, so the value depends only on
/// `(seed, step)` and not on how many draws happened before.
pub fn make_disturbance(spec: &DisturbanceSpec, seed: u64, step: usize, n: f64) -> f64 {
    match *spec {
        DisturbanceSpec::Zero => 0.0,
        DisturbanceSpec::CongestedRandom { half_range, threshold } => {
            if n <= threshold || half_range == 0.0 {
                return 0.0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(step as u64);
            rng.random_range(-half_range..=half_range)
        }
    }
}

/// Gate demands over a scenario plus the disturbance model.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// `gate_demand[k][o]` in veh/h.
    pub gate_demand: Vec<Vec<f64>>,
    pub disturbance: DisturbanceSpec,
    pub seed: u64,
}

impl DemandProfile {
    /// Demands at period `k`; past the end of the series the last row holds.
    pub fn at(&self, k: usize) -> &[f64] {
        let last = self.gate_demand.len().saturating_sub(1);
        &self.gate_demand[k.min(last)]
    }

    pub fn disturbance_at(&self, k: usize, n: f64) -> f64 {
        make_disturbance(&self.disturbance, self.seed, k, n)
    }

    /// Stacks demands for periods `k..k + len`.
    pub fn window(&self, k: usize, len: usize) -> Vec<&[f64]> {
        (k..k + len).map(|j| self.at(j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate() -> Gate {
        Gate::from_greens(1, 200.0, 1800.0, 90.0, [15.0, 45.0, 75.0], 0).unwrap()
    }

    #[test]
    fn zero_level_gives_zero_series() {
        let shape = Trapezoid { ramp_up: 3, plateau: 4, ramp_down: 3, level: 0.0 };
        assert!(make_trapezoid(&gate(), &shape, 20).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn plateau_at_quarter_saturation() {
        let shape = Trapezoid { ramp_up: 5, plateau: 15, ramp_down: 5, level: 0.25 };
        let s = make_trapezoid(&gate(), &shape, 40).unwrap();
        assert_eq!(s.len(), 40);
        assert_eq!(s[5..20], [450.0; 15]);
        assert!((s[0] - 75.0).abs() < 1e-12);
        assert!((s[24] - 75.0).abs() < 1e-12);
        assert!(s[25..].iter().all(|&d| d == 0.0));
        assert!(s[..5].windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rectangular_pulse() {
        let shape = Trapezoid { ramp_up: 0, plateau: 3, ramp_down: 0, level: 0.5 };
        assert_eq!(make_trapezoid(&gate(), &shape, 5).unwrap(), vec![900.0, 900.0, 900.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_shapes() {
        let long = Trapezoid { ramp_up: 5, plateau: 15, ramp_down: 5, level: 0.25 };
        assert!(make_trapezoid(&gate(), &long, 24).is_err());
        let over = Trapezoid { level: 1.5, ..long };
        assert!(make_trapezoid(&gate(), &over, 40).is_err());
    }

    #[test]
    fn disturbance_threshold_and_range() {
        let spec = DisturbanceSpec::default();
        assert_eq!(make_disturbance(&spec, 7, 0, 3000.0), 0.0);
        assert_eq!(make_disturbance(&spec, 7, 0, 6000.0), 0.0);
        for k in 0..200 {
            let d = make_disturbance(&spec, 7, k, 7000.0);
            assert!((-5000.0..=5000.0).contains(&d));
            assert_eq!(d, make_disturbance(&spec, 7, k, 7000.0));
        }
        assert_ne!(make_disturbance(&spec, 7, 0, 7000.0), make_disturbance(&spec, 8, 0, 7000.0));
        let flat = DisturbanceSpec::CongestedRandom { half_range: 0.0, threshold: 6000.0 };
        assert_eq!(make_disturbance(&flat, 7, 3, 9000.0), 0.0);
        assert_eq!(make_disturbance(&DisturbanceSpec::Zero, 7, 3, 9000.0), 0.0);
    }

    #[test]
    fn profile_holds_last_row() {
        let p = DemandProfile {
            gate_demand: vec![vec![1.0], vec![2.0]],
            disturbance: DisturbanceSpec::Zero,
            seed: 0,
        };
        assert_eq!(p.at(5), &[2.0]);
        assert_eq!(p.window(0, 3), vec![&[1.0][..], &[2.0], &[2.0]]);
    }
}
