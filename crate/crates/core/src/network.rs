//! DC network model: distributed generation units (DGUs) with RLC output
//! filters, RL power lines, and ZIP loads at every node.
//!
//! The state is stacked as `x = [I_s; I_t; V]` with `n` source currents, `m`
//! line currents and `n` node voltages. Open-loop dynamics:
//!
//! ```text
//! -L_s dI_s/dt = R_s I_s + V - u
//! -L_t dI_t/dt = R_t I_t + Bᵀ V
//!  C_s dV/dt   = I_s + B I_t - I_l(V)
//! ```
//!
//! with `B` the node-edge incidence matrix and `I_l` the ZIP load current.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voltages at or below this value are treated as outside the positive domain.
pub const V_MIN: f64 = 1e-6;

/// Filter parameters of one DGU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DguParams {
    pub r_s: f64,
    pub l_s: f64,
    pub c_s: f64,
}

/// An RL line between two nodes. `from` is the positive end, `to` the negative end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub r_t: f64,
    pub l_t: f64,
    pub from: usize,
    pub to: usize,
}

/// Parallel constant-impedance, constant-current and constant-power load.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZipLoad {
    /// Conductance `Z⁻¹` in S.
    pub z_inv: f64,
    /// Constant current `I*` in A.
    pub i_const: f64,
    /// Constant power `P*` in W.
    pub p_const: f64,
}

impl ZipLoad {
    pub fn new(z_inv: f64, i_const: f64, p_const: f64) -> Self {
        Self {
            z_inv,
            i_const,
            p_const,
        }
    }

    pub fn pure_power(p_const: f64) -> Self {
        Self::new(0.0, 0.0, p_const)
    }

    /// Load current `Z⁻¹ v + I* + P*/v`.
    pub fn current(&self, v: f64) -> Result<f64> {
        zip_current(self, v, 0)
    }

    /// Incremental conductance `dI_l/dv = Z⁻¹ - P*/v²`.
    pub fn incremental_conductance(&self, v: f64) -> f64 {
        self.z_inv - self.p_const / (v * v)
    }

    fn validate(&self, node: usize) -> Result<()> {
        for (what, value) in [
            ("Z_inv", self.z_inv),
            ("I_const", self.i_const),
            ("P_const", self.p_const),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeParameter {
                    what,
                    owner: format!("load {node}"),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Load current drawn by a ZIP load at voltage `v`; `node` is only used for error reporting.
pub fn zip_current(load: &ZipLoad, v: f64, node: usize) -> Result<f64> {
    check_voltage(v, node)?;
    Ok(load.z_inv * v + load.i_const + load.p_const / v)
}

#[inline]
pub(crate) fn check_voltage(v: f64, node: usize) -> Result<()> {
    if v > V_MIN {
        Ok(())
    } else {
        Err(Error::NonPositiveVoltage { node, value: v })
    }
}

/// Stacked network state `(I_s, I_t, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub i_s: DVector<f64>,
    pub i_t: DVector<f64>,
    pub v: DVector<f64>,
}

impl NetworkState {
    pub fn new(i_s: DVector<f64>, i_t: DVector<f64>, v: DVector<f64>) -> Self {
        Self { i_s, i_t, v }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(m), DVector::zeros(n))
    }

    pub fn from_slices(i_s: &[f64], i_t: &[f64], v: &[f64]) -> Self {
        Self::new(
            DVector::from_column_slice(i_s),
            DVector::from_column_slice(i_t),
            DVector::from_column_slice(v),
        )
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    pub fn m(&self) -> usize {
        self.i_t.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.n() + self.m()
    }

    /// Stack into `[I_s; I_t; V]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let (n, m) = (self.n(), self.m());
        let mut x = DVector::zeros(2 * n + m);
        x.rows_mut(0, n).copy_from(&self.i_s);
        x.rows_mut(n, m).copy_from(&self.i_t);
        x.rows_mut(n + m, n).copy_from(&self.v);
        x
    }

    pub fn from_vector(n: usize, m: usize, x: &DVector<f64>) -> Self {
        assert_eq!(x.len(), 2 * n + m, "state vector length");
        Self::new(
            x.rows(0, n).into_owned(),
            x.rows(n, m).into_owned(),
            x.rows(n + m, n).into_owned(),
        )
    }

    /// Membership in the positive-voltage set.
    pub fn in_positive_domain(&self) -> bool {
        self.v.iter().all(|&v| v > V_MIN)
    }

    pub fn is_finite(&self) -> bool {
        self.i_s
            .iter()
            .chain(self.i_t.iter())
            .chain(self.v.iter())
            .all(|x| x.is_finite())
    }

    /// `self + h * other`, used by the integrators.
    pub fn axpy(&self, h: f64, other: &NetworkState) -> NetworkState {
        NetworkState::new(
            &self.i_s + &other.i_s * h,
            &self.i_t + &other.i_t * h,
            &self.v + &other.v * h,
        )
    }
}

/// A connected DC network with fixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dgus: Vec<DguParams>,
    lines: Vec<LineParams>,
    loads: Vec<ZipLoad>,
    incidence: DMatrix<f64>,
}

impl Network {
    /// Validate parameters and build the incidence matrix. Line `k` contributes
    /// `+1` at `from` and `-1` at `to` in column `k`.
    pub fn new(dgus: Vec<DguParams>, lines: Vec<LineParams>, loads: Vec<ZipLoad>) -> Result<Self> {
        let n = dgus.len();
        if n == 0 {
            return Err(Error::InvalidConfig("network needs at least one node".into()));
        }
        if loads.len() != n {
            return Err(Error::DimensionMismatch {
                what: "loads",
                expected: n,
                got: loads.len(),
            });
        }
        for (i, d) in dgus.iter().enumerate() {
            for (what, value) in [("R_s", d.r_s), ("L_s", d.l_s), ("C_s", d.c_s)] {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(Error::NonPositiveParameter {
                        what,
                        owner: format!("node {i}"),
                        value,
                    });
                }
            }
        }
        for (i, load) in loads.iter().enumerate() {
            load.validate(i)?;
        }
        let m = lines.len();
        let mut incidence = DMatrix::zeros(n, m);
        for (k, line) in lines.iter().enumerate() {
            for (what, value) in [("R_t", line.r_t), ("L_t", line.l_t)] {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(Error::NonPositiveParameter {
                        what,
                        owner: format!("line {k}"),
                        value,
                    });
                }
            }
            for node in [line.from, line.to] {
                if node >= n {
                    return Err(Error::UnknownNode { line: k, node, n });
                }
            }
            if line.from == line.to {
                return Err(Error::SelfLoop {
                    line: k,
                    node: line.from,
                });
            }
            incidence[(line.from, k)] = 1.0;
            incidence[(line.to, k)] = -1.0;
        }
        let components = count_components(n, &lines);
        if components != 1 {
            return Err(Error::DisconnectedGraph { components });
        }
        Ok(Self {
            dgus,
            lines,
            loads,
            incidence,
        })
    }

    pub fn n(&self) -> usize {
        self.dgus.len()
    }

    pub fn m(&self) -> usize {
        self.lines.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.n() + self.m()
    }

    pub fn dgus(&self) -> &[DguParams] {
        &self.dgus
    }

    pub fn lines(&self) -> &[LineParams] {
        &self.lines
    }

    pub fn loads(&self) -> &[ZipLoad] {
        &self.loads
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// Same network with a different set of loads.
    pub fn with_loads(&self, loads: Vec<ZipLoad>) -> Result<Self> {
        if loads.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "loads",
                expected: self.n(),
                got: loads.len(),
            });
        }
        for (i, load) in loads.iter().enumerate() {
            load.validate(i)?;
        }
        Ok(Self {
            loads,
            ..self.clone()
        })
    }

    pub fn r_s(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.dgus.iter().map(|d| d.r_s))
    }

    pub fn l_s(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.dgus.iter().map(|d| d.l_s))
    }

    pub fn c_s(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.dgus.iter().map(|d| d.c_s))
    }

    pub fn r_t(&self) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.lines.iter().map(|l| l.r_t))
    }

    pub fn l_t(&self) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.lines.iter().map(|l| l.l_t))
    }

    /// `Bᵀ V`: voltage difference across each line (positive end minus negative end).
    pub fn line_voltage_drop(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.lines.iter().map(|l| v[l.from] - v[l.to]))
    }

    /// `B I_t`: net current injected into each node by the lines.
    pub fn node_injection(&self, i_t: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for (k, l) in self.lines.iter().enumerate() {
            out[l.from] += i_t[k];
            out[l.to] -= i_t[k];
        }
        out
    }

    /// Load current at every node.
    pub fn load_currents(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n());
        for (i, load) in self.loads.iter().enumerate() {
            out[i] = zip_current(load, v[i], i)?;
        }
        Ok(out)
    }

    /// Voltage derivative `C_s⁻¹ (I_s + B I_t - I_l(V))`. Does not depend on the input.
    pub fn voltage_rate(&self, state: &NetworkState) -> Result<DVector<f64>> {
        let il = self.load_currents(&state.v)?;
        let inj = self.node_injection(&state.i_t);
        Ok(DVector::from_iterator(
            self.n(),
            (0..self.n()).map(|i| (state.i_s[i] + inj[i] - il[i]) / self.dgus[i].c_s),
        ))
    }

    pub fn check_state(&self, state: &NetworkState) -> Result<()> {
        for (what, expected, got) in [
            ("I_s", self.n(), state.i_s.len()),
            ("I_t", self.m(), state.i_t.len()),
            ("V", self.n(), state.v.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }
}

fn count_components(n: usize, lines: &[LineParams]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for l in lines {
        let (a, b) = (find(&mut parent, l.from), find(&mut parent, l.to));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components
}

/// Open-loop vector field `(dI_s/dt, dI_t/dt, dV/dt)` for input `u`.
pub fn open_loop_rhs(net: &Network, state: &NetworkState, u: &DVector<f64>) -> Result<NetworkState> {
    net.check_state(state)?;
    if u.len() != net.n() {
        return Err(Error::DimensionMismatch {
            what: "u",
            expected: net.n(),
            got: u.len(),
        });
    }
    let v_dot = net.voltage_rate(state)?;
    Ok(rhs_with_voltage_rate(net, state, u, v_dot))
}

/// Same as [`open_loop_rhs`] when the voltage rate has already been evaluated.
pub(crate) fn rhs_with_voltage_rate(
    net: &Network,
    state: &NetworkState,
    u: &DVector<f64>,
    v_dot: DVector<f64>,
) -> NetworkState {
    let i_s_dot = DVector::from_iterator(
        net.n(),
        net.dgus
            .iter()
            .enumerate()
            .map(|(i, d)| (-d.r_s * state.i_s[i] - state.v[i] + u[i]) / d.l_s),
    );
    let i_t_dot = DVector::from_iterator(
        net.m(),
        net.lines.iter().enumerate().map(|(k, l)| {
            (-l.r_t * state.i_t[k] - (state.v[l.from] - state.v[l.to])) / l.l_t
        }),
    );
    NetworkState::new(i_s_dot, i_t_dot, v_dot)
}

/// Diagonals of the three equivalent-conductance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Conductances {
    /// `Z⁻¹ - [P*][V]⁻¹[V*]⁻¹`
    pub bregman: DVector<f64>,
    /// `Z⁻¹ - [P*][V]⁻²`
    pub krasovskii: DVector<f64>,
    /// `Z⁻¹ + (Π - [P*])[V]⁻²`
    pub pi: DVector<f64>,
}

pub fn conductance_matrices(
    net: &Network,
    v: &DVector<f64>,
    pi: &DVector<f64>,
    v_star: &DVector<f64>,
) -> Result<Conductances> {
    let n = net.n();
    for (what, got) in [("V", v.len()), ("Pi", pi.len()), ("V_star", v_star.len())] {
        if got != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got,
            });
        }
    }
    let mut out = Conductances {
        bregman: DVector::zeros(n),
        krasovskii: DVector::zeros(n),
        pi: DVector::zeros(n),
    };
    for (i, load) in net.loads.iter().enumerate() {
        check_voltage(v[i], i)?;
        check_voltage(v_star[i], i)?;
        out.bregman[i] = load.z_inv - load.p_const / (v[i] * v_star[i]);
        out.krasovskii[i] = load.z_inv - load.p_const / (v[i] * v[i]);
        out.pi[i] = load.z_inv + (pi[i] - load.p_const) / (v[i] * v[i]);
    }
    Ok(out)
}
