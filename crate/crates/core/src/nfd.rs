//! Network fundamental diagram of the protected area.
//!
//! The circulating flow is a cubic without constant term, fitted on
//! `[0, n_max]`. Trip completions are the circulating flow scaled by the
//! ratio of average link length to average trip length. All flows are in
//! veh/h and accumulations in veh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfdParams {
    /// Cubic coefficient (veh/h per veh^3).
    pub a3: f64,
    /// Quadratic coefficient (veh/h per veh^2); carries its sign.
    pub a2: f64,
    /// Linear coefficient (1/h).
    pub a1: f64,
    /// Largest accumulation the fit is valid for (veh).
    pub n_max: f64,
    /// Average trip length (km).
    pub trip_length: f64,
    /// Average link length (km).
    pub link_length: f64,
    /// Maximum exit flow (veh/h). `None` means unbounded.
    #[serde(default)]
    pub exit_cap: Option<f64>,
}

impl NfdParams {
    /// Downtown San Francisco fit: `4.128e-7 n^3 - 0.0136 n^2 + 113.264 n` on
    /// `[0, 13000]` veh, trip length 1.75 km, link length 0.25 km.
    pub fn san_francisco() -> Self {
        NfdParams {
            a3: 4.128e-7,
            a2: -0.0136,
            a1: 113.264,
            n_max: 13_000.0,
            trip_length: 1.75,
            link_length: 0.25,
            exit_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a3, self.a2, self.a1, self.n_max, self.trip_length, self.link_length];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("nfd", "coefficients and lengths must be finite"));
        }
        if self.n_max <= 0.0 {
            return Err(Error::invalid("nfd.n_max", "must be positive"));
        }
        if self.trip_length <= 0.0 || self.link_length <= 0.0 {
            return Err(Error::invalid("nfd.trip_length/link_length", "must be positive"));
        }
        if self.link_length > self.trip_length {
            return Err(Error::invalid(
                "nfd.link_length",
                "must not exceed the average trip length",
            ));
        }
        if let Some(cap) = self.exit_cap {
            if !(cap > 0.0) {
                return Err(Error::invalid("nfd.exit_cap", "must be positive when given"));
            }
        }
        Ok(())
    }

    /// `l / L`, the fraction of circulating flow that completes trips.
    pub fn output_scale(&self) -> f64 {
        self.link_length / self.trip_length
    }

    fn check_domain(&self, n: f64) -> Result<()> {
        if n.is_nan() || n < 0.0 || n > self.n_max {
            return Err(Error::Domain {
                quantity: "accumulation",
                value: n,
                lo: 0.0,
                hi: self.n_max,
            });
        }
        Ok(())
    }

    /// Total circulating flow `O_c(n)` in veh/h.
    pub fn circulating_flow(&self, n: f64) -> Result<f64> {
        self.check_domain(n)?;
        Ok(((self.a3 * n + self.a2) * n + self.a1) * n)
    }

    /// Trip-completion flow `O(n) = (l/L) O_c(n)`.
    pub fn output(&self, n: f64) -> Result<f64> {
        Ok(self.output_scale() * self.circulating_flow(n)?)
    }

    /// Exit flow of the protected network, `min(exit_cap, O(n))`.
    pub fn capped_outflow(&self, n: f64) -> Result<f64> {
        let out = self.output(n)?;
        Ok(match self.exit_cap {
            Some(cap) => out.min(cap),
            None => out,
        })
    }

    /// Whether the exit cap binds at `n`.
    pub fn cap_active(&self, n: f64) -> Result<bool> {
        let out = self.output(n)?;
        Ok(matches!(self.exit_cap, Some(cap) if out >= cap))
    }

    /// `dO/dn` in 1/h (derivative of the uncapped output).
    pub fn slope(&self, n: f64) -> Result<f64> {
        self.check_domain(n)?;
        let d = (3.0 * self.a3 * n + 2.0 * self.a2) * n + self.a1;
        Ok(self.output_scale() * d)
    }

    /// Slope of the capped outflow: zero where the exit cap binds.
    pub fn capped_slope(&self, n: f64) -> Result<f64> {
        if self.cap_active(n)? {
            Ok(0.0)
        } else {
            self.slope(n)
        }
    }

    /// Accumulation at which circulating flow peaks, i.e. the smaller
    /// stationary point of the cubic that is a maximum inside `(0, n_max)`.
    pub fn critical_accumulation(&self) -> Result<f64> {
        // dO_c/dn = qa n^2 + qb n + qc
        let (qa, qb, qc) = (3.0 * self.a3, 2.0 * self.a2, self.a1);
        let mut roots = Vec::with_capacity(2);
        if qa == 0.0 {
            if qb != 0.0 {
                roots.push(-qc / qb);
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let q = -0.5 * (qb + qb.signum() * sq);
                if q != 0.0 {
                    roots.push(q / qa);
                    roots.push(qc / q);
                } else {
                    roots.push(-qb / (2.0 * qa));
                }
            }
        }
        roots
            .into_iter()
            .filter(|&r| r > 0.0 && r < self.n_max)
            // second derivative negative => maximum
            .filter(|&r| 6.0 * self.a3 * r + 2.0 * self.a2 < 0.0)
            .min_by(|a, b| a.total_cmp(b))
            .ok_or(Error::NoInteriorMaximum { n_max: self.n_max })
    }
}
