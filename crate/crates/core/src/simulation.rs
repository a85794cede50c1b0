//! Time integration of the open- and closed-loop network with timed load
//! changes.
//!
//! Fixed-step classical RK4 is the default. Events split the step so that the
//! integrator never straddles a load change: load currents use the pre-event
//! parameters for `t < t_event` and the post-event ones from `t_event` on.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{
    comparison_controller, control_law, ControllerConfig, DerivativeMode, LevantState, Measurement,
};
use crate::error::{Error, Result};
use crate::network::{rhs_with_voltage_rate, Network, NetworkState, ZipLoad, V_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rk4,
    Rk45,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    /// Fixed step for RK4; initial step for RK45.
    pub dt: f64,
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Record every `record_stride`-th step.
    pub record_stride: usize,
}

impl SimConfig {
    pub const DEFAULT_DT: f64 = 1e-5;

    pub fn rk4(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            method: Method::Rk4,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            record_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidConfig(format!("t_end must be > 0, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.method == Method::Rk45 && !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be > 0".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Additive change of one node's load.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadDelta {
    pub node: usize,
    #[serde(default)]
    pub dz_inv: f64,
    #[serde(default)]
    pub di_const: f64,
    #[serde(default)]
    pub dp_const: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Event {
    pub time: f64,
    pub deltas: Vec<LoadDelta>,
}

impl Event {
    pub fn apply(&self, loads: &[ZipLoad]) -> Result<Vec<ZipLoad>> {
        let mut out = loads.to_vec();
        for d in &self.deltas {
            let load = out.get_mut(d.node).ok_or(Error::InvalidConfig(format!(
                "event at t = {} references node {}",
                self.time, d.node
            )))?;
            load.z_inv += d.dz_inv;
            load.i_const += d.di_const;
            load.p_const += d.dp_const;
        }
        Ok(out)
    }
}

/// What drives the network input.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive {
    /// Open loop with a constant input.
    Constant(DVector<f64>),
    /// The decentralized passivity-based law.
    Controller(ControllerConfig),
    /// Baseline without damping injection.
    Comparison(ControllerConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventMarker {
    pub time: f64,
    /// Index of the first sample recorded with the post-event loads.
    pub sample: usize,
}

/// Recorded run. `inputs[k]` and `v_dot_used[k]` belong to `states[k]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<NetworkState>,
    pub inputs: Vec<DVector<f64>>,
    pub v_dot_used: Vec<DVector<f64>>,
    pub events: Vec<EventMarker>,
    /// Loads in force from each start time on; the first entry starts at 0.
    pub load_schedule: Vec<(f64, Vec<ZipLoad>)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&NetworkState> {
        self.states.last()
    }

    /// Loads in force at time `t` (post-event loads from the event time on).
    pub fn loads_at(&self, t: f64) -> &[ZipLoad] {
        let mut current = &self.load_schedule[0].1;
        for (start, loads) in &self.load_schedule[1..] {
            if t >= *start {
                current = loads;
            }
        }
        current
    }

    /// Network with the loads in force at `t`.
    pub fn network_at(&self, base: &Network, t: f64) -> Result<Network> {
        base.with_loads(self.loads_at(t).to_vec())
    }

    /// True when samples `a < b` are separated by a load change.
    pub fn straddles_event(&self, t_a: f64, t_b: f64) -> bool {
        self.load_schedule[1..]
            .iter()
            .any(|(start, _)| *start > t_a && *start <= t_b)
    }
}

/// Evaluates the input and the closed-loop vector field on one load segment.
struct Plant<'a> {
    net: Network,
    drive: &'a Drive,
    /// Voltage rate estimate held over the current step in Levant mode.
    held_v_dot: Option<DVector<f64>>,
}

impl<'a> Plant<'a> {
    fn input(&self, state: &NetworkState, v_dot: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        match self.drive {
            Drive::Constant(u) => Ok((u.clone(), v_dot.clone())),
            Drive::Comparison(ctrl) => {
                for (i, &v) in state.v.iter().enumerate() {
                    crate::network::check_voltage(v, i)?;
                }
                Ok((
                    comparison_controller(self.net.dgus(), &state.i_s, &state.v, ctrl),
                    v_dot.clone(),
                ))
            }
            Drive::Controller(ctrl) => {
                let measured = self.held_v_dot.as_ref().unwrap_or(v_dot);
                // The held estimate is passed as a measurement so the law itself stays stateless here.
                let mut oracle_ctrl;
                let ctrl = if ctrl.derivative_mode == DerivativeMode::Levant {
                    oracle_ctrl = ctrl.clone();
                    oracle_ctrl.derivative_mode = DerivativeMode::Oracle;
                    &oracle_ctrl
                } else {
                    ctrl
                };
                let out = control_law(
                    self.net.dgus(),
                    Measurement {
                        i_s: &state.i_s,
                        v: &state.v,
                        v_dot: Some(measured),
                    },
                    ctrl,
                    &mut LevantState::new(),
                    0.0,
                )?;
                Ok((out.u, out.v_dot_used))
            }
        }
    }

    fn rhs(&self, state: &NetworkState) -> Result<NetworkState> {
        let v_dot = self.net.voltage_rate(state)?;
        let (u, _) = self.input(state, &v_dot)?;
        Ok(rhs_with_voltage_rate(&self.net, state, &u, v_dot))
    }

    fn sample(&self, state: &NetworkState) -> Result<(DVector<f64>, DVector<f64>)> {
        let v_dot = self.net.voltage_rate(state)?;
        self.input(state, &v_dot)
    }
}

fn rk4_step(plant: &Plant<'_>, x: &NetworkState, h: f64) -> Result<NetworkState> {
    let k1 = plant.rhs(x)?;
    let k2 = plant.rhs(&x.axpy(0.5 * h, &k1))?;
    let k3 = plant.rhs(&x.axpy(0.5 * h, &k2))?;
    let k4 = plant.rhs(&x.axpy(h, &k3))?;
    let mut out = x.axpy(h / 6.0, &k1);
    out = out.axpy(h / 3.0, &k2);
    out = out.axpy(h / 3.0, &k3);
    Ok(out.axpy(h / 6.0, &k4))
}

// Dormand–Prince 5(4) tableau (autonomous system, so the nodes are not needed).
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step; returns the 5th-order solution and the scaled error norm.
fn dopri_step(
    plant: &Plant<'_>,
    x: &NetworkState,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(NetworkState, f64)> {
    let mut k: Vec<NetworkState> = Vec::with_capacity(7);
    for row in &DP_A {
        let mut xs = x.clone();
        for (j, kj) in k.iter().enumerate() {
            if row[j] != 0.0 {
                xs = xs.axpy(h * row[j], kj);
            }
        }
        k.push(plant.rhs(&xs)?);
    }
    let mut x5 = x.clone();
    let mut x4 = x.clone();
    for s in 0..7 {
        if DP_B5[s] != 0.0 {
            x5 = x5.axpy(h * DP_B5[s], &k[s]);
        }
        if DP_B4[s] != 0.0 {
            x4 = x4.axpy(h * DP_B4[s], &k[s]);
        }
    }
    let (a, b, c) = (x.to_vector(), x5.to_vector(), x4.to_vector());
    let mut err: f64 = 0.0;
    for i in 0..a.len() {
        let scale = abs_tol + rel_tol * a[i].abs().max(b[i].abs());
        err = err.max(((b[i] - c[i]) / scale).abs());
    }
    Ok((x5, err))
}

struct Recorder {
    traj: Trajectory,
}

impl Recorder {
    fn push(&mut self, plant: &Plant<'_>, t: f64, x: &NetworkState) -> Result<()> {
        if let Some(&last) = self.traj.times.last() {
            if t <= last {
                return Ok(());
            }
        }
        let (u, v_dot) = plant.sample(x)?;
        self.traj.times.push(t);
        self.traj.states.push(x.clone());
        self.traj.inputs.push(u);
        self.traj.v_dot_used.push(v_dot);
        Ok(())
    }
}

fn first_violation(x: &NetworkState) -> Option<usize> {
    x.v.iter().position(|&v| !(v > V_MIN))
}

/// Integrate the network from `x0` over `[0, t_end]`.
///
/// Leaving the positive-voltage domain is reported as [`Error::DomainExit`],
/// carrying the trajectory recorded up to that point.
pub fn simulate(
    net: &Network,
    drive: &Drive,
    x0: &NetworkState,
    sim: &SimConfig,
    events: &[Event],
) -> Result<Trajectory> {
    sim.validate()?;
    net.check_state(x0)?;
    match drive {
        Drive::Constant(u) if u.len() != net.n() => {
            return Err(Error::DimensionMismatch {
                what: "u",
                expected: net.n(),
                got: u.len(),
            })
        }
        Drive::Controller(c) | Drive::Comparison(c) => c.validate(net.n())?,
        _ => {}
    }
    if let Some(node) = first_violation(x0) {
        return Err(Error::NonPositiveVoltage {
            node,
            value: x0.v[node],
        });
    }
    let mut events: Vec<Event> = events.to_vec();
    events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    for e in &events {
        if !(e.time > 0.0 && e.time < sim.t_end) {
            return Err(Error::InvalidConfig(format!(
                "event time {} outside (0, {})",
                e.time, sim.t_end
            )));
        }
    }

    let levant_gains = match drive {
        Drive::Controller(c) if c.derivative_mode == DerivativeMode::Levant => Some(c.levant.clone()),
        _ => None,
    };
    let mut levant = LevantState::initialized_at(&x0.v);

    let mut plant = Plant {
        net: net.clone(),
        drive,
        held_v_dot: levant_gains.as_ref().map(|_| levant.z1.clone()),
    };
    let mut rec = Recorder {
        traj: Trajectory {
            load_schedule: vec![(0.0, net.loads().to_vec())],
            ..Default::default()
        },
    };
    rec.push(&plant, 0.0, x0)?;

    let mut x = x0.clone();
    let mut t = 0.0;
    let mut next_event = 0;
    let mut steps: usize = 0;
    let mut h_adapt = sim.dt;
    let time_eps = 1e-9 * sim.dt;

    let exit = |rec: &mut Recorder, time: f64, node: usize| Error::DomainExit {
        time,
        node,
        partial: Box::new(std::mem::take(&mut rec.traj)),
    };

    while t < sim.t_end - time_eps {
        // Target of this step: next grid point (RK4) or t + h (RK45), clipped at events and t_end.
        let mut target = match sim.method {
            Method::Rk4 => ((steps + 1) as f64 * sim.dt).min(sim.t_end),
            Method::Rk45 => (t + h_adapt).min(sim.t_end),
        };
        let mut hits_event = false;
        if next_event < events.len() && events[next_event].time <= target + time_eps {
            target = events[next_event].time;
            hits_event = true;
        }
        let h = target - t;

        if let Some(gains) = &levant_gains {
            let est = crate::control::levant_step(&mut levant, &x.v, h, gains);
            plant.held_v_dot = Some(est);
        }

        let stepped = match sim.method {
            Method::Rk4 => rk4_step(&plant, &x, h).map(|x| (x, h)),
            Method::Rk45 => {
                let mut h_try = h;
                loop {
                    let (xn, err) = match dopri_step(&plant, &x, h_try, sim.rel_tol, sim.abs_tol) {
                        Ok(r) => r,
                        // A stage left the domain: retry with a smaller step before giving up.
                        Err(Error::NonPositiveVoltage { .. }) if h_try > 1e-12 => (x.clone(), f64::INFINITY),
                        Err(e) => break Err(e),
                    };
                    if err <= 1.0 {
                        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                        h_adapt = (h_try * factor).max(1e-12);
                        break Ok((xn, h_try));
                    }
                    if h_try <= 1e-12 {
                        break Err(Error::NonFiniteState { time: t });
                    }
                    h_try *= (0.9 * err.powf(-0.25)).clamp(0.1, 0.5);
                    if !err.is_finite() {
                        h_try = h_try.min(h * 0.5);
                    }
                }
            }
        };
        let (x_new, h_taken) = match stepped {
            Ok(r) => r,
            Err(Error::NonPositiveVoltage { node, .. }) => return Err(exit(&mut rec, t, node)),
            Err(e) => return Err(e),
        };
        let partial_rk45 = sim.method == Method::Rk45 && h_taken < h;
        let t_new = if partial_rk45 { t + h_taken } else { target };

        if !x_new.is_finite() {
            return Err(Error::NonFiniteState { time: t_new });
        }
        if let Some(node) = first_violation(&x_new) {
            return Err(exit(&mut rec, t_new, node));
        }
        x = x_new;
        t = t_new;

        let on_grid = match sim.method {
            Method::Rk4 => (t - (steps + 1) as f64 * sim.dt).abs() <= time_eps || t >= sim.t_end - time_eps,
            Method::Rk45 => true,
        };
        if on_grid {
            steps += 1;
        }

        if hits_event && !partial_rk45 {
            let e = &events[next_event];
            let loads = e.apply(plant.net.loads())?;
            plant.net = plant.net.with_loads(loads.clone())?;
            rec.traj.load_schedule.push((e.time, loads));
            next_event += 1;
            // Always keep a sample right after the change, even off-stride.
            rec.push(&plant, t, &x)?;
            rec.traj.events.push(EventMarker {
                time: e.time,
                sample: rec.traj.times.len() - 1,
            });
        }
        if (on_grid && steps.is_multiple_of(sim.record_stride)) || t >= sim.t_end - time_eps {
            rec.push(&plant, t, &x)?;
        }
    }
    Ok(rec.traj)
}

/// Closed-loop vector field with the controller in oracle mode.
pub fn closed_loop_rhs(
    net: &Network,
    ctrl: &ControllerConfig,
    state: &NetworkState,
) -> Result<NetworkState> {
    let mut oracle = ctrl.clone();
    oracle.derivative_mode = DerivativeMode::Oracle;
    let drive = Drive::Controller(oracle);
    let plant = Plant {
        net: net.clone(),
        drive: &drive,
        held_v_dot: None,
    };
    plant.rhs(state)
}

/// Vector field of a controlled single node at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub i_s: f64,
    pub v: f64,
    pub di_s: f64,
    pub dv: f64,
}

/// Evaluate the closed-loop `(dI_s/dt, dV/dt)` of a single-node network on a
/// `resolution × resolution` grid over `i_s_range × v_range`.
pub fn vector_field_grid(
    net: &Network,
    ctrl: &ControllerConfig,
    i_s_range: (f64, f64),
    v_range: (f64, f64),
    resolution: usize,
) -> Result<Vec<FieldPoint>> {
    if net.n() != 1 || net.m() != 0 {
        return Err(Error::NetworkNotScalar {
            n: net.n(),
            m: net.m(),
        });
    }
    if resolution < 2 {
        return Err(Error::InvalidConfig("resolution must be >= 2".into()));
    }
    let lerp = |(a, b): (f64, f64), k: usize| a + (b - a) * k as f64 / (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for iv in 0..resolution {
        let v = lerp(v_range, iv);
        for ii in 0..resolution {
            let i_s = lerp(i_s_range, ii);
            let st = NetworkState::from_slices(&[i_s], &[], &[v]);
            let d = closed_loop_rhs(net, ctrl, &st)?;
            out.push(FieldPoint {
                i_s,
                v,
                di_s: d.i_s[0],
                dv: d.v[0],
            });
        }
    }
    Ok(out)
}
