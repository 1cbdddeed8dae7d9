//! Perception latency to maximum safe speed.
//!
//! A vehicle flying at `V` towards an obstacle seen at depth `Z` must collect
//! `N` detections, react, and then move sideways by the bloated radius `R_b`
//! at lateral acceleration `A_max`:
//!
//! `½ · A_max · (Z/V − N·τ_p − τ_A)² ≥ R_b`
//!
//! which gives `V = Z / (√(2·R_b/A_max) + N·τ_p + τ_A)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub obstacle_radius: f64,
    pub robot_radius: f64,
    pub margin: f64,
    /// Sensing depth `Z`, m.
    pub depth: f64,
    /// Maximum lateral acceleration, m/s².
    pub max_accel: f64,
    /// Moment of inertia of the reference vehicle, kg·m².
    pub inertia: f64,
    /// Maximum moment of the reference vehicle, N·m.
    pub max_moment: f64,
    pub gravity: f64,
    /// Diagonal length of this vehicle, m.
    pub length: f64,
    /// Length of the vehicle `inertia` and `max_moment` describe, m.
    pub reference_length: f64,
    /// Perception latency per inference, s.
    pub tau_p: f64,
    pub detection_rate: f64,
    /// Required confidence of detecting the obstacle at least once.
    pub detection_confidence: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            obstacle_radius: 0.25,
            robot_radius: 0.15,
            margin: 0.1,
            depth: 3.5,
            max_accel: 2.0 * GRAVITY,
            inertia: 0.003,
            max_moment: 0.4,
            gravity: GRAVITY,
            length: 0.21,
            reference_length: 0.21,
            tau_p: 1.0 / 10.8,
            detection_rate: 0.9,
            detection_confidence: 0.99,
        }
    }
}

impl VehicleParams {
    /// Small vehicle preset used for the latency-versus-detection-rate
    /// comparison: 9 cm frame, 15 cm bloated radius, 91% confidence. The
    /// depth is meant to be set with [`VehicleParams::with_anchor_speed`].
    pub fn small_vehicle() -> Self {
        VehicleParams {
            obstacle_radius: 0.08,
            robot_radius: 0.045,
            margin: 0.025,
            length: 0.09,
            detection_confidence: 0.91,
            ..Default::default()
        }
    }

    pub fn bloated_radius(&self) -> f64 {
        self.obstacle_radius + self.robot_radius + self.margin
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("obstacle_radius", self.obstacle_radius),
            ("robot_radius", self.robot_radius),
            ("margin", self.margin),
            ("depth", self.depth),
            ("max_accel", self.max_accel),
            ("inertia", self.inertia),
            ("max_moment", self.max_moment),
            ("gravity", self.gravity),
            ("length", self.length),
            ("reference_length", self.reference_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tau_p >= 0.0 && self.tau_p.is_finite()) {
            return Err(Error::arg(format!("tau_p must be non-negative, got {}", self.tau_p)));
        }
        check_rate("detection_rate", self.detection_rate)?;
        check_rate("detection_confidence", self.detection_confidence)
    }

    /// Actuation latency of this vehicle, Mach-scaled from the reference.
    pub fn actuation_latency(&self) -> f64 {
        let reference = actuation_latency(self.inertia, self.max_accel, self.max_moment, self.gravity);
        mach_scale_latency(reference, self.reference_length, self.length)
    }

    /// Same vehicle with `depth` chosen so that the current latency and
    /// detection rate give exactly `speed`.
    pub fn with_anchor_speed(&self, speed: f64) -> Result<Self> {
        let v1 = max_safe_speed(&VehicleParams { depth: 1.0, ..self.clone() })?.speed;
        Ok(VehicleParams {
            depth: speed / v1,
            ..self.clone()
        })
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::arg(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

/// Smallest `N ≥ 1` with `(1 − DR)^N ≤ 1 − DR_s`.
pub fn required_observations(dr: f64, dr_s: f64) -> Result<u32> {
    check_rate("detection rate", dr)?;
    check_rate("detection confidence", dr_s)?;
    let ratio = (1.0 - dr_s).ln() / (1.0 - dr).ln();
    // exact powers such as 0.1² = 0.01 land a hair above the integer
    Ok((ratio - 1e-9).ceil().max(1.0) as u32)
}

/// Time for a bang-bang roll to the bank angle `atan(A_max/g)`:
/// `2·√(I·atan(A_max/g)/M_max)`.
pub fn actuation_latency(inertia: f64, max_accel: f64, max_moment: f64, gravity: f64) -> f64 {
    2.0 * (inertia * (max_accel / gravity).atan() / max_moment).sqrt()
}

/// Actuation latency scales linearly with vehicle size.
pub fn mach_scale_latency(tau_ref: f64, length_ref: f64, length: f64) -> f64 {
    tau_ref * length / length_ref
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedPoint {
    pub speed: f64,
    pub observations: u32,
    pub tau_a: f64,
    /// `√(2·R_b/A_max)`, the lateral dodge time.
    pub dodge_time: f64,
    /// Set when the latency budget `N·τ_p + τ_A` exceeds the dodge time.
    pub latency_dominated: bool,
}

pub fn max_safe_speed(p: &VehicleParams) -> Result<SpeedPoint> {
    p.validate()?;
    let n = required_observations(p.detection_rate, p.detection_confidence)?;
    let tau_a = p.actuation_latency();
    let dodge_time = (2.0 * p.bloated_radius() / p.max_accel).sqrt();
    let latency = n as f64 * p.tau_p + tau_a;
    Ok(SpeedPoint {
        speed: p.depth / (dodge_time + latency),
        observations: n,
        tau_a,
        dodge_time,
        latency_dominated: latency > dodge_time,
    })
}

/// Which quantity varies along the third grid axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFamily {
    Length,
    Depth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedGrid {
    pub tau_p: Vec<f64>,
    pub detection_rates: Vec<f64>,
    pub lengths: Vec<f64>,
    pub depths: Vec<f64>,
}

impl Default for SpeedGrid {
    fn default() -> Self {
        SpeedGrid {
            tau_p: (1..=20).map(|i| i as f64 * 0.01).collect(),
            detection_rates: vec![0.7, 0.8, 0.9],
            lengths: vec![0.1, 0.21, 0.35, 0.5],
            depths: vec![2.0, 3.5, 5.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub family: CurveFamily,
    pub detection_rate: f64,
    pub tau_p: f64,
    pub length: f64,
    pub depth: f64,
    pub observations: u32,
    pub speed: f64,
    pub latency_dominated: bool,
}

/// Speed over `τ_p × DR × L` and `τ_p × DR × Z`; everything else from `base`.
pub fn speed_curves(base: &VehicleParams, grid: &SpeedGrid) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    let mut push = |family, p: VehicleParams| -> Result<()> {
        let s = max_safe_speed(&p)?;
        out.push(CurvePoint {
            family,
            detection_rate: p.detection_rate,
            tau_p: p.tau_p,
            length: p.length,
            depth: p.depth,
            observations: s.observations,
            speed: s.speed,
            latency_dominated: s.latency_dominated,
        });
        Ok(())
    };
    for &dr in &grid.detection_rates {
        for &length in &grid.lengths {
            for &tau_p in &grid.tau_p {
                push(CurveFamily::Length, VehicleParams { detection_rate: dr, length, tau_p, ..base.clone() })?;
            }
        }
        for &depth in &grid.depths {
            for &tau_p in &grid.tau_p {
                push(CurveFamily::Depth, VehicleParams { detection_rate: dr, depth, tau_p, ..base.clone() })?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_table() {
        assert_eq!(required_observations(0.9, 0.99).unwrap(), 2);
        assert_eq!(required_observations(0.99, 0.9).unwrap(), 1);
        assert_eq!(required_observations(0.7, 0.99).unwrap(), 4);
        assert_eq!(required_observations(0.7, 0.91).unwrap(), 2);
        assert!(required_observations(1.0, 0.9).unwrap_err().is_argument());
        assert!(required_observations(0.5, 0.0).unwrap_err().is_argument());
    }

    #[test]
    fn actuation_values() {
        assert!((actuation_latency(0.01, GRAVITY, 1.0, GRAVITY) - 0.17725).abs() < 1e-5);
        assert_eq!(actuation_latency(0.01, 0.0, 1.0, GRAVITY), 0.0);
        // I·atan(A/g)/M = 0.01
        let i = 0.01 / 1.0f64.atan();
        assert!((actuation_latency(i, GRAVITY, 1.0, GRAVITY) - 0.2).abs() < 1e-12);
        assert!((mach_scale_latency(0.1, 0.2, 0.2) - 0.1).abs() < 1e-15);
        assert!((mach_scale_latency(0.1, 0.2, 0.4) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn reference_speed() {
        // Z=3.5, R_b=0.3, A=20, N=1, τ_p=0.01, τ_A=0.05
        let dodge = (2.0 * 0.3 / 20.0f64).sqrt();
        let v = 3.5 / (dodge + 0.01 + 0.05);
        assert!((v - 15.01).abs() < 0.01);
        let mut p = VehicleParams {
            obstacle_radius: 0.1,
            robot_radius: 0.1,
            margin: 0.1,
            max_accel: 20.0,
            tau_p: 0.01,
            detection_rate: 0.99,
            detection_confidence: 0.9,
            ..Default::default()
        };
        // pick the reference vehicle so that τ_A = 0.05
        p.inertia = (0.025f64).powi(2) * p.max_moment / (20.0 / GRAVITY).atan();
        let s = max_safe_speed(&p).unwrap();
        assert!((s.tau_a - 0.05).abs() < 1e-12);
        assert!((s.speed - v).abs() < 1e-9);
        let doubled = max_safe_speed(&VehicleParams { depth: 7.0, ..p }).unwrap();
        assert!((doubled.speed - 2.0 * v).abs() < 1e-9);
    }

    #[test]
    fn anchor_calibration() {
        let p = VehicleParams::small_vehicle().with_anchor_speed(9.0).unwrap();
        assert!((max_safe_speed(&p).unwrap().speed - 9.0).abs() < 1e-9);
    }

    #[test]
    fn curves_decrease_with_latency() {
        let rows = speed_curves(&VehicleParams::default(), &SpeedGrid::default()).unwrap();
        assert_eq!(rows.len(), 3 * (4 + 3) * 20);
        for w in rows.windows(2) {
            let same = w[0].family == w[1].family
                && w[0].detection_rate == w[1].detection_rate
                && w[0].length == w[1].length
                && w[0].depth == w[1].depth;
            if same {
                assert!(w[1].speed < w[0].speed);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = VehicleParams { depth: 0.0, ..Default::default() };
        assert!(max_safe_speed(&p).unwrap_err().is_argument());
        let p = VehicleParams { tau_p: -1.0, ..Default::default() };
        assert!(max_safe_speed(&p).unwrap_err().is_argument());
    }
}
