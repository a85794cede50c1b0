//! Equilibria of the network, either from a voltage reference (direct
//! substitution) or from a constant input (Newton on the node voltages).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{check_voltage, open_loop_rhs, Network, NetworkState, V_MIN};

/// Nominal bus voltage used as the default Newton starting point.
pub const NOMINAL_VOLTAGE: f64 = 380.0;

pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub i_s: DVector<f64>,
    pub i_t: DVector<f64>,
    pub v: DVector<f64>,
    /// Input that holds the network at this point.
    pub u: DVector<f64>,
    /// `‖Q ẋ‖∞` at the equilibrium, in volts/amperes.
    pub residual: f64,
}

impl Equilibrium {
    pub fn state(&self) -> NetworkState {
        NetworkState::new(self.i_s.clone(), self.i_t.clone(), self.v.clone())
    }
}

/// Residual of the algebraic equilibrium equations, `‖Q f(x, u)‖∞`.
fn algebraic_residual(net: &Network, state: &NetworkState, u: &DVector<f64>) -> Result<f64> {
    let d = open_loop_rhs(net, state, u)?;
    let mut r: f64 = 0.0;
    for (i, dg) in net.dgus().iter().enumerate() {
        r = r.max((d.i_s[i] * dg.l_s).abs()).max((d.v[i] * dg.c_s).abs());
    }
    for (k, l) in net.lines().iter().enumerate() {
        r = r.max((d.i_t[k] * l.l_t).abs());
    }
    Ok(r)
}

/// Equilibrium with `V̄ = V*`:
/// `Ī_t = -R_t⁻¹ Bᵀ V*`, `Ī_s = -B Ī_t + I_l(V*)`, `ū = V* + R_s Ī_s`.
pub fn equilibrium_from_vstar(net: &Network, v_star: &DVector<f64>) -> Result<Equilibrium> {
    if v_star.len() != net.n() {
        return Err(Error::DimensionMismatch {
            what: "V_star",
            expected: net.n(),
            got: v_star.len(),
        });
    }
    for (i, &v) in v_star.iter().enumerate() {
        check_voltage(v, i)?;
    }
    let drop = net.line_voltage_drop(v_star);
    let i_t = DVector::from_iterator(
        net.m(),
        net.lines().iter().zip(drop.iter()).map(|(l, d)| -d / l.r_t),
    );
    let i_s = -net.node_injection(&i_t) + net.load_currents(v_star)?;
    let u = DVector::from_iterator(
        net.n(),
        net.dgus()
            .iter()
            .enumerate()
            .map(|(i, d)| v_star[i] + d.r_s * i_s[i]),
    );
    let state = NetworkState::new(i_s, i_t, v_star.clone());
    let residual = algebraic_residual(net, &state, &u)?;
    Ok(Equilibrium {
        i_s: state.i_s,
        i_t: state.i_t,
        v: state.v,
        u,
        residual,
    })
}

/// Reduced equilibrium equations in `V`:
/// `f(V) = R_s⁻¹(u - V) - B R_t⁻¹ Bᵀ V - I_l(V)`.
fn reduced_residual(net: &Network, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let drop = net.line_voltage_drop(v);
    let i_t = DVector::from_iterator(
        net.m(),
        net.lines().iter().zip(drop.iter()).map(|(l, d)| d / l.r_t),
    );
    let lap = net.node_injection(&i_t);
    let il = net.load_currents(v)?;
    Ok(DVector::from_iterator(
        net.n(),
        net.dgus()
            .iter()
            .enumerate()
            .map(|(i, d)| (u[i] - v[i]) / d.r_s - lap[i] - il[i]),
    ))
}

/// Analytic Jacobian: `-R_s⁻¹ - B R_t⁻¹ Bᵀ - diag(Z⁻¹ - P*/V²)`.
fn reduced_jacobian(net: &Network, v: &DVector<f64>) -> DMatrix<f64> {
    let n = net.n();
    let mut j = DMatrix::zeros(n, n);
    for (i, (d, load)) in net.dgus().iter().zip(net.loads()).enumerate() {
        j[(i, i)] = -1.0 / d.r_s - load.incremental_conductance(v[i]);
    }
    for l in net.lines() {
        let g = 1.0 / l.r_t;
        j[(l.from, l.from)] -= g;
        j[(l.to, l.to)] -= g;
        j[(l.from, l.to)] += g;
        j[(l.to, l.from)] += g;
    }
    j
}

/// Equilibrium reached by damped Newton from `v_init` for constant input `u_star`.
///
/// Each Newton step is halved until the iterate stays above `V_MIN` and the
/// residual norm does not grow. With constant-power loads there are generally
/// several equilibria; the one returned is the one this iteration lands on,
/// which for a start at or above nominal voltage is the high-voltage branch.
pub fn equilibrium_from_ustar(
    net: &Network,
    u_star: &DVector<f64>,
    v_init: Option<&DVector<f64>>,
) -> Result<Equilibrium> {
    let n = net.n();
    if u_star.len() != n {
        return Err(Error::DimensionMismatch {
            what: "u_star",
            expected: n,
            got: u_star.len(),
        });
    }
    let mut v = match v_init {
        Some(v0) => v0.clone(),
        None => DVector::from_element(n, NOMINAL_VOLTAGE),
    };
    for (i, &vi) in v.iter().enumerate() {
        check_voltage(vi, i)?;
    }
    // Residual is a current; compare against the tolerance scaled by typical source conductance.
    let mut f = reduced_residual(net, u_star, &v)?;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITERATIONS {
        if scaled_norm(net, &f) < NEWTON_TOLERANCE {
            converged = true;
            break;
        }
        let j = reduced_jacobian(net, &v);
        let step = j.lu().solve(&(-&f)).ok_or(Error::NewtonDivergence {
            iterations: 0,
            residual: f.amax(),
        })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &v + &step * alpha;
            if trial.iter().all(|&x| x > V_MIN) {
                let ft = reduced_residual(net, u_star, &trial)?;
                if ft.norm() <= f.norm() * (1.0 - 1e-4 * alpha) || alpha < 1e-6 {
                    v = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            let node = v
                .iter()
                .zip(step.iter())
                .position(|(a, b)| a + b <= V_MIN)
                .unwrap_or(0);
            return Err(Error::NonPositiveVoltage {
                node,
                value: v[node] + step[node],
            });
        }
    }
    if !converged && scaled_norm(net, &f) >= NEWTON_TOLERANCE {
        return Err(Error::NewtonDivergence {
            iterations: NEWTON_MAX_ITERATIONS,
            residual: scaled_norm(net, &f),
        });
    }
    let drop = net.line_voltage_drop(&v);
    let i_t = DVector::from_iterator(
        net.m(),
        net.lines().iter().zip(drop.iter()).map(|(l, d)| -d / l.r_t),
    );
    let i_s = DVector::from_iterator(
        n,
        net.dgus()
            .iter()
            .enumerate()
            .map(|(i, d)| (u_star[i] - v[i]) / d.r_s),
    );
    let state = NetworkState::new(i_s, i_t, v);
    let residual = algebraic_residual(net, &state, u_star)?;
    Ok(Equilibrium {
        i_s: state.i_s,
        i_t: state.i_t,
        v: state.v,
        u: u_star.clone(),
        residual,
    })
}

/// Residual expressed as a voltage: each node's current mismatch times `R_s`.
fn scaled_norm(net: &Network, f: &DVector<f64>) -> f64 {
    net.dgus()
        .iter()
        .zip(f.iter())
        .map(|(d, fi)| (fi * d.r_s).abs())
        .fold(0.0, f64::max)
}

/// Both open-loop equilibrium voltages of a single isolated node, i.e. the
/// positive roots of `(1 + R_s Z⁻¹)V² - (u - R_s I*)V + R_s P* = 0`, in
/// descending order. Empty when no positive real root exists.
pub fn scalar_equilibrium_voltages(net: &Network, u: f64) -> Result<Vec<f64>> {
    if net.n() != 1 || net.m() != 0 {
        return Err(Error::NetworkNotScalar {
            n: net.n(),
            m: net.m(),
        });
    }
    let d = net.dgus()[0];
    let load = net.loads()[0];
    let a = 1.0 + d.r_s * load.z_inv;
    let b = -(u - d.r_s * load.i_const);
    let c = d.r_s * load.p_const;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Ok(vec![]);
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots.
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots: Vec<f64> = if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / a, c / q]
    };
    roots.retain(|&r| r > V_MIN);
    roots.sort_by(|x, y| y.partial_cmp(x).unwrap());
    roots.dedup();
    Ok(roots)
}
