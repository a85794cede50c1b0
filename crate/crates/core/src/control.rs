//! Decentralized voltage controller.
//!
//! Each node combines a passifying input, which compensates the filter
//! resistance and injects damping proportional to `V̇` with the adaptive gain
//! `L_s Π/V²`, with a stabilizing input that shapes the closed-loop storage
//! around the reference:
//!
//! ```text
//! u = R_s I_s + V* - L_s K₁ (V - V*) - L_s (Π [V]⁻² + K₂) V̇ + L_s μ
//! ```
//!
//! Nothing in this module takes load or line parameters. The voltage rate is
//! supplied as a measurement, or estimated from the measured voltage with a
//! robust exact differentiator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{check_voltage, DguParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMode {
    /// `V̇` measured directly (capacitor current over capacitance).
    #[default]
    Oracle,
    /// `V̇` estimated by the first-order sliding-mode differentiator.
    Levant,
}

/// Differentiator gains: `λ₀`, `λ₁` and a per-node bound `L` on `|V̈|`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevantGains {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lipschitz: DVector<f64>,
}

impl LevantGains {
    pub const DEFAULT_LAMBDA0: f64 = 1.5;
    pub const DEFAULT_LAMBDA1: f64 = 1.1;

    pub fn with_lipschitz(lipschitz: DVector<f64>) -> Self {
        Self {
            lambda0: Self::DEFAULT_LAMBDA0,
            lambda1: Self::DEFAULT_LAMBDA1,
            lipschitz,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub k1: DVector<f64>,
    pub k2: DVector<f64>,
    /// Per-node upper bound on the constant-power demand, in W.
    pub pi: DVector<f64>,
    pub v_star: DVector<f64>,
    pub derivative_mode: DerivativeMode,
    pub levant: LevantGains,
}

impl ControllerConfig {
    /// Oracle-mode configuration with the same gains at every node.
    pub fn uniform(n: usize, k1: f64, k2: f64, pi: f64, v_star: DVector<f64>) -> Self {
        Self {
            k1: DVector::from_element(n, k1),
            k2: DVector::from_element(n, k2),
            pi: DVector::from_element(n, pi),
            v_star,
            derivative_mode: DerivativeMode::Oracle,
            levant: LevantGains::with_lipschitz(DVector::from_element(n, 1.0)),
        }
    }

    pub fn n(&self) -> usize {
        self.v_star.len()
    }

    /// Check `K₁ ⪰ 0`, `K₂ ≻ 0`, `Π ⪰ 0`, `V* > 0` and the differentiator gains.
    ///
    /// `Π ⪰ [P*]` cannot be checked here: the loads are unknown to the controller.
    pub fn validate(&self, n: usize) -> Result<()> {
        for (what, len) in [
            ("K1", self.k1.len()),
            ("K2", self.k2.len()),
            ("Pi", self.pi.len()),
            ("V_star", self.v_star.len()),
            ("levant L", self.levant.lipschitz.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        let bad = |what: &str, i: usize, v: f64| {
            Err(Error::InvalidConfig(format!("{what}[{i}] = {v} out of range")))
        };
        for i in 0..n {
            if !(self.k1[i] >= 0.0 && self.k1[i].is_finite()) {
                return bad("K1", i, self.k1[i]);
            }
            if !(self.k2[i] > 0.0 && self.k2[i].is_finite()) {
                return bad("K2", i, self.k2[i]);
            }
            if !(self.pi[i] >= 0.0 && self.pi[i].is_finite()) {
                return bad("Pi", i, self.pi[i]);
            }
            if !(self.v_star[i] > 0.0 && self.v_star[i].is_finite()) {
                return bad("V_star", i, self.v_star[i]);
            }
            if self.derivative_mode == DerivativeMode::Levant && !(self.levant.lipschitz[i] > 0.0)
            {
                return bad("levant L", i, self.levant.lipschitz[i]);
            }
        }
        if self.derivative_mode == DerivativeMode::Levant
            && !(self.levant.lambda0 > 0.0 && self.levant.lambda1 > 0.0)
        {
            return Err(Error::InvalidConfig("levant gains must be positive".into()));
        }
        Ok(())
    }
}

/// Internal states of one differentiator per node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevantState {
    pub z0: DVector<f64>,
    pub z1: DVector<f64>,
    initialized: bool,
}

impl LevantState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start from a known signal value with zero derivative estimate.
    pub fn initialized_at(f: &DVector<f64>) -> Self {
        Self {
            z0: f.clone(),
            z1: DVector::zeros(f.len()),
            initialized: true,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// One explicit-Euler step of the first-order robust exact differentiator
///
/// ```text
/// w   = z₁ - λ₀ L^{1/2} |z₀ - f|^{1/2} sign(z₀ - f)
/// ż₀  = w
/// ż₁  = -λ₁ L sign(z₁ - w)
/// ```
///
/// and returns `z₁` after the update. An uninitialized state is first set to `z₀ = f, z₁ = 0`.
pub fn levant_step(
    state: &mut LevantState,
    measured: &DVector<f64>,
    dt: f64,
    gains: &LevantGains,
) -> DVector<f64> {
    if !state.initialized || state.z0.len() != measured.len() {
        *state = LevantState::initialized_at(measured);
    }
    for i in 0..measured.len() {
        let l = gains.lipschitz[i];
        let e = state.z0[i] - measured[i];
        let w = state.z1[i] - gains.lambda0 * l.sqrt() * e.abs().sqrt() * sign(e);
        let z1_dot = -gains.lambda1 * l * sign(state.z1[i] - w);
        state.z0[i] += dt * w;
        state.z1[i] += dt * z1_dot;
    }
    state.z1.clone()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Passifying input `R_s I_s - L_s Π [V]⁻² V̇`.
pub fn u_pbc(
    dgus: &[DguParams],
    i_s: &DVector<f64>,
    v: &DVector<f64>,
    v_dot: &DVector<f64>,
    ctrl: &ControllerConfig,
) -> Result<DVector<f64>> {
    let mut u = DVector::zeros(dgus.len());
    for (i, d) in dgus.iter().enumerate() {
        check_voltage(v[i], i)?;
        u[i] = d.r_s * i_s[i] - d.l_s * ctrl.pi[i] / (v[i] * v[i]) * v_dot[i];
    }
    Ok(u)
}

/// Stabilizing input `-L_s K₁ (V - V*) - L_s K₂ V̇ + V*`.
pub fn u_stab(
    dgus: &[DguParams],
    v: &DVector<f64>,
    v_dot: &DVector<f64>,
    ctrl: &ControllerConfig,
) -> DVector<f64> {
    DVector::from_iterator(
        dgus.len(),
        dgus.iter().enumerate().map(|(i, d)| {
            -d.l_s * ctrl.k1[i] * (v[i] - ctrl.v_star[i]) - d.l_s * ctrl.k2[i] * v_dot[i]
                + ctrl.v_star[i]
        }),
    )
}

/// Local measurements available to the controllers.
#[derive(Debug, Clone, Copy)]
pub struct Measurement<'a> {
    pub i_s: &'a DVector<f64>,
    pub v: &'a DVector<f64>,
    /// Measured `V̇`; required in oracle mode, ignored in Levant mode.
    pub v_dot: Option<&'a DVector<f64>>,
}

/// Full law with an external port `μ`: `L_s μ + u_PBC + u_Stab`.
pub fn control_with_port(
    dgus: &[DguParams],
    i_s: &DVector<f64>,
    v: &DVector<f64>,
    v_dot: &DVector<f64>,
    mu: &DVector<f64>,
    ctrl: &ControllerConfig,
) -> Result<DVector<f64>> {
    let mut u = u_pbc(dgus, i_s, v, v_dot, ctrl)? + u_stab(dgus, v, v_dot, ctrl);
    for (i, d) in dgus.iter().enumerate() {
        u[i] += d.l_s * mu[i];
    }
    Ok(u)
}

/// Controller output with `μ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    pub v_dot_used: DVector<f64>,
}

/// Evaluate the decentralized law. In Levant mode the differentiator state is
/// advanced by `dt` using the measured voltage before the law is applied.
pub fn control_law(
    dgus: &[DguParams],
    meas: Measurement<'_>,
    ctrl: &ControllerConfig,
    levant: &mut LevantState,
    dt: f64,
) -> Result<ControlOutput> {
    let n = dgus.len();
    for (i, &vi) in meas.v.iter().enumerate() {
        check_voltage(vi, i)?;
    }
    let v_dot_used = match ctrl.derivative_mode {
        DerivativeMode::Oracle => meas
            .v_dot
            .cloned()
            .ok_or_else(|| Error::InvalidConfig("oracle mode needs a measured voltage rate".into()))?,
        DerivativeMode::Levant => {
            if !(dt > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "levant mode needs dt > 0, got {dt}"
                )));
            }
            levant_step(levant, meas.v, dt, &ctrl.levant)
        }
    };
    let u = control_with_port(
        dgus,
        meas.i_s,
        meas.v,
        &v_dot_used,
        &DVector::zeros(n),
        ctrl,
    )?;
    Ok(ControlOutput { u, v_dot_used })
}

/// Baseline without damping injection: `R_s I_s + V* - L_s K₁ (V - V*)`.
/// Equal to [`control_law`] with `Π = 0` and `K₂ = 0`.
pub fn comparison_controller(
    dgus: &[DguParams],
    i_s: &DVector<f64>,
    v: &DVector<f64>,
    ctrl: &ControllerConfig,
) -> DVector<f64> {
    DVector::from_iterator(
        dgus.len(),
        dgus.iter().enumerate().map(|(i, d)| {
            d.r_s * i_s[i] + ctrl.v_star[i] - d.l_s * ctrl.k1[i] * (v[i] - ctrl.v_star[i])
        }),
    )
}
