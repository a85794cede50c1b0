//! Storage functions of the network and their dissipation identities.
//!
//! | storage    | value                                                        | rate along solutions                                   |
//! |------------|--------------------------------------------------------------|--------------------------------------------------------|
//! | energy     | `½‖I_s‖²_{L_s} + ½‖I_t‖²_{L_t} + ½‖V‖²_{C_s}`                 | `-‖I_t‖²_{R_t} - ‖I_s‖²_{R_s} - ‖V‖²_{Z⁻¹} - 1ᵀP* - VᵀI* + uᵀI_s` |
//! | bregman    | same, shifted to `(Ī_s, Ī_t, V*)`                            | `-… - ‖V-V*‖²_{G_B(V)} + (u-ū)ᵀ(I_s-Ī_s)`               |
//! | krasovskii | `½‖İ_s‖²_{L_s} + ½‖İ_t‖²_{L_t} + ½‖V̇‖²_{C_s}`                | `-‖İ_t‖²_{R_t} - ‖İ_s‖²_{R_s} - ‖V̇‖²_{G_K(V)} + u̇ᵀİ_s`   |
//! | P_A        | `½‖V‖²_{L_s⁻¹} + ½‖R_tI_t+BᵀV‖²_{L_t⁻¹} + ½‖I_s+BI_t-I_l‖²_{C_s⁻¹}` | `-‖İ_t‖²_{R_t} - ‖V̇‖²_{G_Π(V)} + υᵀV̇`           |
//! | S_d        | P_A + S_a                                                     | `-‖İ_t‖²_{R_t} - ‖V̇‖²_{G_Π(V)+K₂} + μᵀV̇`              |
//!
//! Dissipation audits compare these predicted rates against central
//! differences of the storage evaluated along a recorded trajectory.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::control::{u_pbc, u_stab, ControllerConfig};
use crate::error::{Error, Result};
use crate::network::{conductance_matrices, open_loop_rhs, Network, NetworkState, V_MIN};
use crate::simulation::Trajectory;
use crate::steady_state::{equilibrium_from_vstar, Equilibrium};

/// Floor used when forming relative errors, so equilibria do not produce 0/0.
pub const RELATIVE_FLOOR: f64 = 1e-12;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

fn weighted_sq(x: &DVector<f64>, w: impl Iterator<Item = f64>) -> f64 {
    x.iter().zip(w).map(|(x, w)| w * x * x).sum()
}

pub fn energy(net: &Network, s: &NetworkState) -> f64 {
    0.5 * (weighted_sq(&s.i_s, net.dgus().iter().map(|d| d.l_s))
        + weighted_sq(&s.i_t, net.lines().iter().map(|l| l.l_t))
        + weighted_sq(&s.v, net.dgus().iter().map(|d| d.c_s)))
}

pub fn energy_rate(net: &Network, s: &NetworkState, u: &DVector<f64>) -> f64 {
    let loads = net.loads();
    -weighted_sq(&s.i_t, net.lines().iter().map(|l| l.r_t))
        - weighted_sq(&s.i_s, net.dgus().iter().map(|d| d.r_s))
        - weighted_sq(&s.v, loads.iter().map(|l| l.z_inv))
        - loads.iter().map(|l| l.p_const).sum::<f64>()
        - s.v.iter().zip(loads).map(|(v, l)| v * l.i_const).sum::<f64>()
        + u.dot(&s.i_s)
}

fn shifted(s: &NetworkState, eq: &Equilibrium) -> NetworkState {
    NetworkState::new(&s.i_s - &eq.i_s, &s.i_t - &eq.i_t, &s.v - &eq.v)
}

/// Energy of the deviation from an equilibrium.
pub fn bregman(net: &Network, s: &NetworkState, eq: &Equilibrium) -> f64 {
    energy(net, &shifted(s, eq))
}

pub fn bregman_rate(net: &Network, s: &NetworkState, eq: &Equilibrium, u: &DVector<f64>) -> Result<f64> {
    let d = shifted(s, eq);
    let g = conductance_matrices(net, &s.v, &DVector::zeros(net.n()), &eq.v)?;
    Ok(-weighted_sq(&d.i_t, net.lines().iter().map(|l| l.r_t))
        - weighted_sq(&d.i_s, net.dgus().iter().map(|d| d.r_s))
        - weighted_sq(&d.v, g.bregman.iter().cloned())
        + (u - &eq.u).dot(&d.i_s))
}

/// Energy of the state derivative for input `u`.
pub fn krasovskii(net: &Network, s: &NetworkState, u: &DVector<f64>) -> Result<f64> {
    Ok(energy(net, &open_loop_rhs(net, s, u)?))
}

pub fn krasovskii_rate(
    net: &Network,
    s: &NetworkState,
    u: &DVector<f64>,
    u_dot: &DVector<f64>,
) -> Result<f64> {
    let d = open_loop_rhs(net, s, u)?;
    let g = conductance_matrices(net, &s.v, &DVector::zeros(net.n()), &s.v)?;
    Ok(-weighted_sq(&d.i_t, net.lines().iter().map(|l| l.r_t))
        - weighted_sq(&d.i_s, net.dgus().iter().map(|d| d.r_s))
        - weighted_sq(&d.v, g.krasovskii.iter().cloned())
        + u_dot.dot(&d.i_s))
}

/// Generalized mixed potential of the passifying family member, written out as three norms.
pub fn passivity_potential(net: &Network, s: &NetworkState) -> Result<f64> {
    let line_term = net.line_voltage_drop(&s.v);
    let line_term = DVector::from_iterator(
        net.m(),
        net.lines()
            .iter()
            .enumerate()
            .map(|(k, l)| l.r_t * s.i_t[k] + line_term[k]),
    );
    let node_term = &s.i_s + net.node_injection(&s.i_t) - net.load_currents(&s.v)?;
    Ok(0.5
        * (weighted_sq(&s.v, net.dgus().iter().map(|d| 1.0 / d.l_s))
            + weighted_sq(&line_term, net.lines().iter().map(|l| 1.0 / l.l_t))
            + weighted_sq(&node_term, net.dgus().iter().map(|d| 1.0 / d.c_s))))
}

/// Shaping term `½‖V-V*‖²_{K₁} - VᵀL_s⁻¹V* + ½‖V*‖²_{L_s⁻¹}`.
pub fn shaping_storage(net: &Network, v: &DVector<f64>, ctrl: &ControllerConfig) -> f64 {
    net.dgus()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let e = v[i] - ctrl.v_star[i];
            0.5 * ctrl.k1[i] * e * e - v[i] * ctrl.v_star[i] / d.l_s
                + 0.5 * ctrl.v_star[i] * ctrl.v_star[i] / d.l_s
        })
        .sum()
}

/// Closed-loop storage `S_d = P_A + S_a`, evaluated in the completed-square form
/// `½‖V-V*‖²_{L_s⁻¹+K₁} + ½‖R_tI_t+BᵀV‖²_{L_t⁻¹} + ½‖I_s+BI_t-I_l(V)‖²_{C_s⁻¹}`.
pub fn closed_loop_storage(net: &Network, s: &NetworkState, ctrl: &ControllerConfig) -> Result<f64> {
    let drop = net.line_voltage_drop(&s.v);
    let line_term = DVector::from_iterator(
        net.m(),
        net.lines()
            .iter()
            .enumerate()
            .map(|(k, l)| l.r_t * s.i_t[k] + drop[k]),
    );
    let node_term = &s.i_s + net.node_injection(&s.i_t) - net.load_currents(&s.v)?;
    let e = &s.v - &ctrl.v_star;
    Ok(0.5
        * (weighted_sq(
            &e,
            net.dgus().iter().enumerate().map(|(i, d)| 1.0 / d.l_s + ctrl.k1[i]),
        ) + weighted_sq(&line_term, net.lines().iter().map(|l| 1.0 / l.l_t))
            + weighted_sq(&node_term, net.dgus().iter().map(|d| 1.0 / d.c_s))))
}

/// Predicted `dS_d/dt` for external port `μ`.
pub fn closed_loop_storage_rate(
    net: &Network,
    s: &NetworkState,
    ctrl: &ControllerConfig,
    mu: &DVector<f64>,
) -> Result<f64> {
    let (i_t_dot, v_dot, g_pi) = rates_and_gpi(net, s, ctrl)?;
    Ok(-weighted_sq(&i_t_dot, net.lines().iter().map(|l| l.r_t))
        - weighted_sq(&v_dot, g_pi.iter().zip(ctrl.k2.iter()).map(|(g, k)| g + k))
        + mu.dot(&v_dot))
}

/// Predicted `dP_A/dt` for port input `υ`.
pub fn passivity_potential_rate(
    net: &Network,
    s: &NetworkState,
    ctrl: &ControllerConfig,
    upsilon: &DVector<f64>,
) -> Result<f64> {
    let (i_t_dot, v_dot, g_pi) = rates_and_gpi(net, s, ctrl)?;
    Ok(-weighted_sq(&i_t_dot, net.lines().iter().map(|l| l.r_t))
        - weighted_sq(&v_dot, g_pi.iter().cloned())
        + upsilon.dot(&v_dot))
}

fn rates_and_gpi(
    net: &Network,
    s: &NetworkState,
    ctrl: &ControllerConfig,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    // İ_t and V̇ do not depend on the input.
    let d = open_loop_rhs(net, s, &DVector::zeros(net.n()))?;
    let g = conductance_matrices(net, &s.v, &ctrl.pi, &ctrl.v_star)?;
    Ok((d.i_t, d.v, g.pi))
}

/// Port inputs implied by a recorded input `u`: `υ = L_s⁻¹(u - u_PBC)` and
/// `μ = L_s⁻¹(u - u_PBC - u_Stab)`, both evaluated with the true `V̇`.
pub fn implied_ports(
    net: &Network,
    s: &NetworkState,
    u: &DVector<f64>,
    ctrl: &ControllerConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let v_dot = net.voltage_rate(s)?;
    let pbc = u_pbc(net.dgus(), &s.i_s, &s.v, &v_dot, ctrl)?;
    let stab = u_stab(net.dgus(), &s.v, &v_dot, ctrl);
    let l_s = net.l_s();
    let upsilon = (u - &pbc).component_div(&l_s);
    let mu = (u - pbc - stab).component_div(&l_s);
    Ok((upsilon, mu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Memberships {
    /// All voltages positive.
    pub in_x: bool,
    /// Additionally `G_B(V) ⪰ 0`.
    pub in_x_b: bool,
    /// Additionally `G_K(V) ⪰ 0` and `u > 0`.
    pub in_x_k: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageReport {
    pub s_energy: f64,
    pub s_bregman: f64,
    pub s_krasovskii: f64,
    pub p_a: f64,
    pub s_a: f64,
    pub s_d: f64,
    pub memberships: Memberships,
    /// Smallest diagonal entry of `G_B`, `G_K`, `G_Π`.
    pub conductance_min: [f64; 3],
}

/// Evaluate every storage function at `state` with input `u`.
pub fn storage_report(
    net: &Network,
    state: &NetworkState,
    eq: &Equilibrium,
    ctrl: &ControllerConfig,
    u: &DVector<f64>,
) -> Result<StorageReport> {
    net.check_state(state)?;
    let in_x = state.in_positive_domain();
    if !in_x {
        let node = state.v.iter().position(|&v| v <= V_MIN).unwrap_or(0);
        return Err(Error::NonPositiveVoltage {
            node,
            value: state.v[node],
        });
    }
    let g = conductance_matrices(net, &state.v, &ctrl.pi, &ctrl.v_star)?;
    let min = |v: &DVector<f64>| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let p_a = passivity_potential(net, state)?;
    let s_a = shaping_storage(net, &state.v, ctrl);
    Ok(StorageReport {
        s_energy: energy(net, state),
        s_bregman: bregman(net, state, eq),
        s_krasovskii: krasovskii(net, state, u)?,
        p_a,
        s_a,
        s_d: closed_loop_storage(net, state, ctrl)?,
        memberships: Memberships {
            in_x,
            in_x_b: min(&g.bregman) >= 0.0,
            in_x_k: min(&g.krasovskii) >= 0.0 && u.iter().all(|&x| x > 0.0),
        },
        conductance_min: [min(&g.bregman), min(&g.krasovskii), min(&g.pi)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageId {
    Energy,
    Bregman,
    Krasovskii,
    PassivityPotential,
    ClosedLoop,
}

impl StorageId {
    pub fn name(&self) -> &'static str {
        match self {
            StorageId::Energy => "energy",
            StorageId::Bregman => "bregman",
            StorageId::Krasovskii => "kras",
            StorageId::PassivityPotential => "pa",
            StorageId::ClosedLoop => "sd",
        }
    }
}

impl fmt::Display for StorageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StorageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "energy" => StorageId::Energy,
            "bregman" => StorageId::Bregman,
            "kras" | "krasovskii" => StorageId::Krasovskii,
            "pa" => StorageId::PassivityPotential,
            "sd" => StorageId::ClosedLoop,
            other => return Err(Error::InvalidConfig(format!("unknown storage '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationSample {
    pub t: f64,
    pub storage: f64,
    pub ds_dt_numeric: f64,
    pub ds_dt_predicted: f64,
    pub supply: f64,
    pub residual: f64,
}

/// Three-point derivative at the middle of an unevenly spaced triple.
pub fn central_difference(t: [f64; 3], f: [f64; 3]) -> f64 {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    -h2 / (h1 * (h1 + h2)) * f[0] + (h2 - h1) / (h1 * h2) * f[1] + h1 / (h2 * (h1 + h2)) * f[2]
}

fn central_difference_vec(t: [f64; 3], f: [&DVector<f64>; 3]) -> DVector<f64> {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    let (a, b, c) = (
        -h2 / (h1 * (h1 + h2)),
        (h2 - h1) / (h1 * h2),
        h1 / (h2 * (h1 + h2)),
    );
    f[0] * a + f[1] * b + f[2] * c
}

/// Storage value at one recorded sample, with the loads in force at that time.
pub fn storage_value(
    which: StorageId,
    net: &Network,
    s: &NetworkState,
    u: &DVector<f64>,
    ctrl: &ControllerConfig,
) -> Result<f64> {
    match which {
        StorageId::Energy => Ok(energy(net, s)),
        StorageId::Bregman => Ok(bregman(net, s, &equilibrium_from_vstar(net, &ctrl.v_star)?)),
        StorageId::Krasovskii => krasovskii(net, s, u),
        StorageId::PassivityPotential => passivity_potential(net, s),
        StorageId::ClosedLoop => closed_loop_storage(net, s, ctrl),
    }
}

/// Storage time series along a trajectory.
pub fn storage_series(
    net: &Network,
    traj: &Trajectory,
    which: StorageId,
    ctrl: &ControllerConfig,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(traj.len());
    let mut seg_net = traj.network_at(net, traj.times.first().copied().unwrap_or(0.0))?;
    let mut seg_loads = seg_net.loads().to_vec();
    let mut eq_cache: Option<Equilibrium> = None;
    for k in 0..traj.len() {
        let loads = traj.loads_at(traj.times[k]);
        if loads != seg_loads.as_slice() {
            seg_loads = loads.to_vec();
            seg_net = net.with_loads(seg_loads.clone())?;
            eq_cache = None;
        }
        let s = &traj.states[k];
        let value = match which {
            StorageId::Bregman => {
                if eq_cache.is_none() {
                    eq_cache = Some(equilibrium_from_vstar(&seg_net, &ctrl.v_star)?);
                }
                bregman(&seg_net, s, eq_cache.as_ref().unwrap())
            }
            other => storage_value(other, &seg_net, s, &traj.inputs[k], ctrl)?,
        };
        out.push(value);
    }
    Ok(out)
}

/// Compare central differences of a storage series with its predicted rate.
///
/// Samples whose difference stencil straddles a load change are skipped: the
/// storage is discontinuous there. The Bregman storage is re-anchored at the
/// equilibrium of the loads in force at each sample.
pub fn dissipation_audit(
    net: &Network,
    traj: &Trajectory,
    which: StorageId,
    ctrl: &ControllerConfig,
) -> Result<Vec<DissipationSample>> {
    let len = traj.len();
    if len < 3 {
        return Err(Error::InsufficientSamples { got: len });
    }
    let series = storage_series(net, traj, which, ctrl)?;
    let mut out = Vec::with_capacity(len - 2);
    let mut seg_net = traj.network_at(net, traj.times[0])?;
    let mut eq = equilibrium_from_vstar(&seg_net, &ctrl.v_star).ok();
    for k in 1..len - 1 {
        let t = [traj.times[k - 1], traj.times[k], traj.times[k + 1]];
        if traj.straddles_event(t[0], t[2]) {
            continue;
        }
        if traj.loads_at(t[1]) != seg_net.loads() {
            seg_net = traj.network_at(net, t[1])?;
            eq = equilibrium_from_vstar(&seg_net, &ctrl.v_star).ok();
        }
        let s = &traj.states[k];
        let u = &traj.inputs[k];
        let numeric = central_difference(t, [series[k - 1], series[k], series[k + 1]]);
        let (predicted, supply) = match which {
            StorageId::Energy => (energy_rate(&seg_net, s, u), u.dot(&s.i_s)),
            StorageId::Bregman => {
                let eq = eq.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("no equilibrium at the reference voltage".into())
                })?;
                (
                    bregman_rate(&seg_net, s, eq, u)?,
                    (u - &eq.u).dot(&(&s.i_s - &eq.i_s)),
                )
            }
            StorageId::Krasovskii => {
                let u_dot = central_difference_vec(
                    t,
                    [&traj.inputs[k - 1], &traj.inputs[k], &traj.inputs[k + 1]],
                );
                let i_s_dot = open_loop_rhs(&seg_net, s, u)?.i_s;
                (
                    krasovskii_rate(&seg_net, s, u, &u_dot)?,
                    u_dot.dot(&i_s_dot),
                )
            }
            StorageId::PassivityPotential => {
                let (upsilon, _) = implied_ports(&seg_net, s, u, ctrl)?;
                let v_dot = seg_net.voltage_rate(s)?;
                (
                    passivity_potential_rate(&seg_net, s, ctrl, &upsilon)?,
                    upsilon.dot(&v_dot),
                )
            }
            StorageId::ClosedLoop => {
                let (_, mu) = implied_ports(&seg_net, s, u, ctrl)?;
                let v_dot = seg_net.voltage_rate(s)?;
                (
                    closed_loop_storage_rate(&seg_net, s, ctrl, &mu)?,
                    mu.dot(&v_dot),
                )
            }
        };
        out.push(DissipationSample {
            t: t[1],
            storage: series[k],
            ds_dt_numeric: numeric,
            ds_dt_predicted: predicted,
            supply,
            residual: numeric - predicted,
        });
    }
    Ok(out)
}

/// Per-node conductance signs at one uniform voltage level.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPoint {
    pub v: f64,
    pub bregman_nonneg: Vec<bool>,
    pub krasovskii_nonneg: Vec<bool>,
    pub pi_nonneg: Vec<bool>,
}

impl RegionPoint {
    pub fn in_x_b(&self) -> bool {
        self.bregman_nonneg.iter().all(|&b| b)
    }

    pub fn in_x_k(&self) -> bool {
        self.krasovskii_nonneg.iter().all(|&b| b)
    }
}

/// Evaluate the conductance signs with every node at voltage `v` for each `v` in the grid.
pub fn set_membership_region(
    net: &Network,
    ctrl: &ControllerConfig,
    v_grid: &[f64],
) -> Result<Vec<RegionPoint>> {
    let n = net.n();
    v_grid
        .iter()
        .map(|&v| {
            let vv = DVector::from_element(n, v);
            let g = conductance_matrices(net, &vv, &ctrl.pi, &ctrl.v_star)?;
            Ok(RegionPoint {
                v,
                bregman_nonneg: g.bregman.iter().map(|&x| x >= 0.0).collect(),
                krasovskii_nonneg: g.krasovskii.iter().map(|&x| x >= 0.0).collect(),
                pi_nonneg: g.pi.iter().map(|&x| x >= 0.0).collect(),
            })
        })
        .collect()
}

/// Voltage above which `G_B ≥ 0` and `G_K ≥ 0` hold at one node.
/// `None` means the set is empty (pure constant-power load).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionBoundary {
    pub bregman: Option<f64>,
    pub krasovskii: Option<f64>,
}

pub fn region_boundary(load: &crate::network::ZipLoad, v_star: f64) -> RegionBoundary {
    if load.p_const == 0.0 {
        return RegionBoundary {
            bregman: Some(0.0),
            krasovskii: Some(0.0),
        };
    }
    if load.z_inv == 0.0 {
        return RegionBoundary {
            bregman: None,
            krasovskii: None,
        };
    }
    RegionBoundary {
        bregman: Some(load.p_const / (load.z_inv * v_star)),
        krasovskii: Some((load.p_const / load.z_inv).sqrt()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DguParams, ZipLoad};

    fn scalar(load: ZipLoad) -> Network {
        Network::new(
            vec![DguParams {
                r_s: 0.01,
                l_s: 1.12e-3,
                c_s: 6.8e-3,
            }],
            vec![],
            vec![load],
        )
        .unwrap()
    }

    fn illustrative_ctrl() -> ControllerConfig {
        ControllerConfig::uniform(1, 1.0, 5.0, 1e4, DVector::from_element(1, 380.0))
    }

    #[test]
    fn equilibrium_zeroes_shifted_storages() {
        let net = scalar(ZipLoad::new(0.04, 10.0, 5e3));
        let ctrl = illustrative_ctrl();
        let eq = equilibrium_from_vstar(&net, &ctrl.v_star).unwrap();
        let r = storage_report(&net, &eq.state(), &eq, &ctrl, &eq.u).unwrap();
        assert_eq!(r.s_bregman, 0.0);
        assert!(r.s_d.abs() < 1e-20);
        assert!(r.s_krasovskii < 1e-20);
        assert!(r.memberships.in_x && r.memberships.in_x_b && r.memberships.in_x_k);
    }

    #[test]
    fn illustrative_case_two_is_outside_both_sets() {
        let net = scalar(ZipLoad::new(0.04, 10.0, 6.5e3));
        let ctrl = illustrative_ctrl();
        let eq = equilibrium_from_vstar(&net, &ctrl.v_star).unwrap();
        let r = storage_report(&net, &eq.state(), &eq, &ctrl, &eq.u).unwrap();
        assert!(!r.memberships.in_x_b && !r.memberships.in_x_k);
        assert!(r.conductance_min[2] >= 0.0);
    }

    #[test]
    fn krasovskii_boundary_scalar() {
        let b = region_boundary(&ZipLoad::new(0.04, 10.0, 5e3), 380.0);
        assert!((b.krasovskii.unwrap() - 353.55).abs() < 0.01);
        let pure = region_boundary(&ZipLoad::pure_power(5e3), 380.0);
        assert_eq!(pure.bregman, None);
        assert_eq!(pure.krasovskii, None);
    }

    #[test]
    fn pure_power_node_has_empty_bregman_set() {
        let net = scalar(ZipLoad::pure_power(5e3));
        let ctrl = illustrative_ctrl();
        let grid: Vec<f64> = (1..=200).map(|k| k as f64 * 5.0).collect();
        let pts = set_membership_region(&net, &ctrl, &grid).unwrap();
        assert!(pts.iter().all(|p| !p.in_x_b() && !p.in_x_k()));
        // Pi >= P*: G_Pi stays nonnegative everywhere.
        assert!(pts.iter().all(|p| p.pi_nonneg[0]));
    }

    #[test]
    fn central_difference_is_exact_for_quadratics() {
        let f = |t: f64| 3.0 * t * t - 2.0 * t + 1.0;
        let t = [0.1, 0.13, 0.2];
        let d = central_difference(t, [f(t[0]), f(t[1]), f(t[2])]);
        assert!((d - (6.0 * 0.13 - 2.0)).abs() < 1e-10);
    }

    #[test]
    fn storage_id_parsing() {
        for id in [
            StorageId::Energy,
            StorageId::Bregman,
            StorageId::Krasovskii,
            StorageId::PassivityPotential,
            StorageId::ClosedLoop,
        ] {
            assert_eq!(id.name().parse::<StorageId>().unwrap(), id);
        }
        assert!("nope".parse::<StorageId>().is_err());
    }

    #[test]
    fn audit_needs_three_samples() {
        let net = scalar(ZipLoad::new(0.04, 10.0, 5e3));
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            load_schedule: vec![(0.0, net.loads().to_vec())],
            ..Default::default()
        };
        assert!(matches!(
            dissipation_audit(&net, &traj, StorageId::Energy, &illustrative_ctrl()),
            Err(Error::InsufficientSamples { got: 2 })
        ));
    }
}
