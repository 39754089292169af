//! Splitting a global perimeter flow among gates, and the no-control policy.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{Command, Controller, MgcConfig, Siso};
use crate::plant::{DemandProfile, Gate, NetworkState, Plant};
use crate::qp::{self, QpProblem, QpStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Mgc,
    Cap,
    Oap,
    None,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Mgc, Policy::Cap, Policy::Oap, Policy::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Mgc => "mgc",
            Policy::Cap => "cap",
            Policy::Oap => "oap",
            Policy::None => "none",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Policy> {
        match s.to_ascii_lowercase().as_str() {
            "mgc" => Ok(Policy::Mgc),
            "cap" => Ok(Policy::Cap),
            "oap" => Ok(Policy::Oap),
            "none" | "no-control" => Ok(Policy::None),
            other => Err(Error::invalid("policy", format!("unknown policy `{other}` (mgc | cap | oap | none)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub q: Vec<f64>,
    /// Part of `q_G` that could not be placed because of upper bounds (veh/h).
    pub wasted: f64,
    /// Flow released beyond `q_G` because of lower bounds (veh/h).
    pub deficit: f64,
    pub policy: Policy,
}

impl AllocationResult {
    fn from_clipped(q: Vec<f64>, q_g: f64, policy: Policy) -> AllocationResult {
        let total: f64 = q.iter().sum();
        AllocationResult {
            q,
            wasted: (q_g - total).max(0.0),
            deficit: (total - q_g).max(0.0),
            policy,
        }
    }
}

/// Storage share of every gate. The last ratio is `1 - sum(others)` so the
/// ratios sum to one exactly.
pub fn cap_ratios(gates: &[Gate]) -> Vec<f64> {
    let total: f64 = gates.iter().map(|g| g.storage).sum();
    let mut r: Vec<f64> = gates.iter().map(|g| g.storage / total).collect();
    if let Some((last, rest)) = r.split_last_mut() {
        *last = 1.0 - rest.iter().sum::<f64>();
    }
    r
}

/// Capacity-based allocation: `q_o = q_hat_o + r_o (q_G - sum q_hat)`, then
/// clipped to the gate bounds.
pub fn cap_allocate(q_g: f64, gates: &[Gate]) -> AllocationResult {
    let q_hat: f64 = gates.iter().map(|g| g.q_nom).sum();
    let excess = q_g - q_hat;
    let q = cap_ratios(gates)
        .iter()
        .zip(gates)
        .map(|(r, g)| (g.q_nom + r * excess).clamp(g.q_min, g.q_max))
        .collect();
    AllocationResult::from_clipped(q, q_g, Policy::Cap)
}

/// Optimisation-based allocation: minimize `1/2 sum (q_o - q_hat_o)^2 / q_hat_o`
/// subject to `sum q = q_G` and the gate bounds.
pub fn oap_allocate(q_g: f64, gates: &[Gate]) -> Result<AllocationResult> {
    if gates.iter().any(|g| !(g.q_nom > 0.0)) {
        return Err(Error::invalid("q_nom", "OAP weights need q_nom > 0"));
    }
    let lo: f64 = gates.iter().map(|g| g.q_min).sum();
    let hi: f64 = gates.iter().map(|g| g.q_max).sum();
    if q_g <= lo {
        let q = gates.iter().map(|g| g.q_min).collect();
        return Ok(AllocationResult::from_clipped(q, q_g, Policy::Oap));
    }
    if q_g >= hi {
        let q = gates.iter().map(|g| g.q_max).collect();
        return Ok(AllocationResult::from_clipped(q, q_g, Policy::Oap));
    }
    let q_hat: f64 = gates.iter().map(|g| g.q_nom).sum();
    let scale = q_g / q_hat;
    let closed: Vec<f64> = gates.iter().map(|g| g.q_nom * scale).collect();
    if closed.iter().zip(gates).all(|(q, g)| *q >= g.q_min && *q <= g.q_max) {
        return Ok(AllocationResult::from_clipped(closed, q_g, Policy::Oap));
    }

    let ng = gates.len();
    let h = DMatrix::from_diagonal(&DVector::from_iterator(ng, gates.iter().map(|g| 1.0 / g.q_nom)));
    let f = DVector::from_element(ng, -1.0);
    let mut l = DMatrix::zeros(2 * ng, ng);
    let mut w = DVector::zeros(2 * ng);
    for (o, g) in gates.iter().enumerate() {
        l[(o, o)] = 1.0;
        w[o] = g.q_max;
        l[(ng + o, o)] = -1.0;
        w[ng + o] = -g.q_min;
    }
    let problem = QpProblem::new(h, f, l, w)
        .with_equalities(DMatrix::from_element(1, ng, 1.0), DVector::from_element(1, q_g));
    let sol = qp::solve(&problem, &SolverOptions::default())?;
    if sol.status != QpStatus::Optimal {
        return Err(match sol.status {
            QpStatus::Infeasible => Error::Infeasible,
            _ => Error::MaxIterations { iterations: sol.iterations },
        });
    }
    let q = sol
        .u
        .iter()
        .zip(gates)
        .map(|(q, g)| q.clamp(g.q_min, g.q_max))
        .collect();
    Ok(AllocationResult::from_clipped(q, q_g, Policy::Oap))
}

/// OAP without bounds through the stationarity system
/// `[diag(1/q_hat) 1; 1' 0] [q; nu] = [1; q_G]`, solved with a pseudoinverse.
pub fn oap_pseudoinverse(q_g: f64, q_hat: &[f64]) -> Result<Vec<f64>> {
    let n = q_hat.len();
    let mut k = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::from_element(n + 1, 1.0);
    for (o, &q) in q_hat.iter().enumerate() {
        k[(o, o)] = 1.0 / q;
        k[(o, n)] = 1.0;
        k[(n, o)] = 1.0;
    }
    rhs[n] = q_g;
    let pinv = k
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|_| Error::invalid("oap system", "pseudoinverse failed"))?;
    let mut sol = &pinv * &rhs;
    // one refinement step; the system mixes 1/q_hat and unit entries
    let resid = &rhs - &k * &sol;
    sol += &pinv * resid;
    Ok(sol.rows(0, n).iter().copied().collect())
}

/// Uncontrolled operation: every gate runs its maximum green.
pub fn no_control(gates: &[Gate]) -> AllocationResult {
    AllocationResult {
        q: gates.iter().map(|g| g.q_max).collect(),
        wasted: 0.0,
        deficit: 0.0,
        policy: Policy::None,
    }
}

/// Single-region controller followed by CAP or OAP.
#[derive(Debug, Clone)]
pub struct AllocationController {
    pub siso: Siso,
    pub policy: Policy,
    gates: Vec<Gate>,
}

impl AllocationController {
    pub fn new(plant: &Plant, config: &MgcConfig, policy: Policy) -> Result<AllocationController> {
        if !matches!(policy, Policy::Cap | Policy::Oap) {
            return Err(Error::invalid("policy", "allocation controller needs cap or oap"));
        }
        Ok(AllocationController {
            siso: Siso::new(&plant.nfd, &plant.gates, plant.period, config)?,
            policy,
            gates: plant.gates.clone(),
        })
    }
}

impl Controller for AllocationController {
    fn name(&self) -> &str {
        self.policy.as_str()
    }

    fn command(&mut self, _k: usize, state: &NetworkState, _demand: &DemandProfile) -> Result<Command> {
        let (q_g, diag) = self.siso.siso_step(state.n, 0.0)?;
        let alloc = match self.policy {
            Policy::Cap => cap_allocate(q_g, &self.gates),
            _ => oap_allocate(q_g, &self.gates)?,
        };
        Ok(Command {
            flows: alloc.q,
            diagnostics: Some(diag),
        })
    }
}

#[derive(Debug, Clone)]
pub struct NoControl {
    gates: Vec<Gate>,
}

impl NoControl {
    pub fn new(gates: &[Gate]) -> NoControl {
        NoControl { gates: gates.to_vec() }
    }
}

impl Controller for NoControl {
    fn name(&self) -> &str {
        "none"
    }

    fn command(&mut self, _k: usize, _state: &NetworkState, _demand: &DemandProfile) -> Result<Command> {
        Ok(Command {
            flows: no_control(&self.gates).q,
            diagnostics: None,
        })
    }
}
