//! Brayton–Moser gradient form of the network and the generalized family of
//! (Q_A, P_A) pairs built from it.
//!
//! The network dynamics read `Q ẋ = ∇P(x) + B̃ u` with `Q = diag(-L_s, -L_t, C_s)`,
//! `B̃ = [-I; 0; 0]` and the mixed potential
//!
//! ```text
//! P(I, V) = Iᵀ Γ V + F(I) - G(V),   Γ = [I_n  B]ᵀ
//! F(I)    = ½‖I_t‖²_{R_t} (+ ½‖I_s‖²_{R_s} for the full variant)
//! G(V)    = ½‖V‖²_{Z⁻¹} + P*ᵀ ln V + I*ᵀ V
//! ```
//!
//! A family member is fixed by `(λ, M, Q₀, D)`; with `A(x) = λI + ∇²P(x) M`:
//!
//! ```text
//! Q_A = A (Q - B̃ Q₀),  P_A = λP + ½ ∇Pᵀ M ∇P,  B̃_A = A B̃ D
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{check_voltage, Network, NetworkState};

/// Smallest singular value of `A(x)` accepted as full rank.
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialVariant {
    /// Resistive content includes the filter resistances `R_s`.
    Full,
    /// `R_s` term dropped; used together with the `R_s I_s` feedforward of the passifying input.
    Reduced,
}

/// Mixed potential of a network.
#[derive(Debug, Clone, Copy)]
pub struct MixedPotential<'a> {
    net: &'a Network,
    variant: PotentialVariant,
}

impl<'a> MixedPotential<'a> {
    pub fn new(net: &'a Network, variant: PotentialVariant) -> Self {
        Self { net, variant }
    }

    pub fn full(net: &'a Network) -> Self {
        Self::new(net, PotentialVariant::Full)
    }

    pub fn reduced(net: &'a Network) -> Self {
        Self::new(net, PotentialVariant::Reduced)
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn variant(&self) -> PotentialVariant {
        self.variant
    }

    /// Coupling matrix `Γ = [I_n  B]ᵀ`, of size `(n+m) × n`.
    pub fn gamma(&self) -> DMatrix<f64> {
        let (n, m) = (self.net.n(), self.net.m());
        let mut g = DMatrix::zeros(n + m, n);
        g.view_mut((0, 0), (n, n)).fill_with_identity();
        g.view_mut((n, 0), (m, n))
            .copy_from(&self.net.incidence().transpose());
        g
    }

    pub fn resistive_content(&self, i_s: &DVector<f64>, i_t: &DVector<f64>) -> f64 {
        let lines: f64 = self
            .net
            .lines()
            .iter()
            .zip(i_t.iter())
            .map(|(l, i)| 0.5 * l.r_t * i * i)
            .sum();
        match self.variant {
            PotentialVariant::Full => {
                lines
                    + self
                        .net
                        .dgus()
                        .iter()
                        .zip(i_s.iter())
                        .map(|(d, i)| 0.5 * d.r_s * i * i)
                        .sum::<f64>()
            }
            PotentialVariant::Reduced => lines,
        }
    }

    pub fn resistive_cocontent(&self, v: &DVector<f64>) -> Result<f64> {
        let mut g = 0.0;
        for (i, (load, &vi)) in self.net.loads().iter().zip(v.iter()).enumerate() {
            check_voltage(vi, i)?;
            g += 0.5 * load.z_inv * vi * vi + load.p_const * vi.ln() + load.i_const * vi;
        }
        Ok(g)
    }

    pub fn value(&self, state: &NetworkState) -> Result<f64> {
        self.net.check_state(state)?;
        let cocontent = self.resistive_cocontent(&state.v)?;
        let coupling =
            state.i_s.dot(&state.v) + state.i_t.dot(&self.net.line_voltage_drop(&state.v));
        Ok(coupling + self.resistive_content(&state.i_s, &state.i_t) - cocontent)
    }

    /// `∇ₓP` stacked as `[∂/∂I_s; ∂/∂I_t; ∂/∂V]`.
    pub fn gradient(&self, state: &NetworkState) -> Result<DVector<f64>> {
        self.net.check_state(state)?;
        let net = self.net;
        let (n, m) = (net.n(), net.m());
        let il = net.load_currents(&state.v)?;
        let drop = net.line_voltage_drop(&state.v);
        let inj = net.node_injection(&state.i_t);
        let mut g = DVector::zeros(2 * n + m);
        for (i, d) in net.dgus().iter().enumerate() {
            g[i] = state.v[i];
            if self.variant == PotentialVariant::Full {
                g[i] += d.r_s * state.i_s[i];
            }
            g[n + m + i] = state.i_s[i] + inj[i] - il[i];
        }
        for (k, l) in net.lines().iter().enumerate() {
            g[n + k] = l.r_t * state.i_t[k] + drop[k];
        }
        Ok(g)
    }

    /// Analytic Hessian. Only the V-V block depends on the state, through `P*/V²`.
    pub fn hessian(&self, state: &NetworkState) -> Result<DMatrix<f64>> {
        self.net.check_state(state)?;
        let net = self.net;
        let (n, m) = (net.n(), net.m());
        let mut h = DMatrix::zeros(2 * n + m, 2 * n + m);
        for (i, (d, load)) in net.dgus().iter().zip(net.loads()).enumerate() {
            check_voltage(state.v[i], i)?;
            if self.variant == PotentialVariant::Full {
                h[(i, i)] = d.r_s;
            }
            h[(i, n + m + i)] = 1.0;
            h[(n + m + i, i)] = 1.0;
            h[(n + m + i, n + m + i)] = -load.incremental_conductance(state.v[i]);
        }
        for (k, l) in net.lines().iter().enumerate() {
            h[(n + k, n + k)] = l.r_t;
            h[(n + k, n + m + l.from)] = 1.0;
            h[(n + k, n + m + l.to)] = -1.0;
            h[(n + m + l.from, n + k)] = 1.0;
            h[(n + m + l.to, n + k)] = -1.0;
        }
        Ok(h)
    }

    /// `Q = diag(-L_s, -L_t, C_s)` as a vector of diagonal entries.
    pub fn q_diagonal(&self) -> DVector<f64> {
        let net = self.net;
        let (n, m) = (net.n(), net.m());
        let mut q = DVector::zeros(2 * n + m);
        for (i, d) in net.dgus().iter().enumerate() {
            q[i] = -d.l_s;
            q[n + m + i] = d.c_s;
        }
        for (k, l) in net.lines().iter().enumerate() {
            q[n + k] = -l.l_t;
        }
        q
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.q_diagonal())
    }

    /// Input matrix `B̃ = [-I_n; 0; 0]`.
    pub fn input_matrix(&self) -> DMatrix<f64> {
        let n = self.net.n();
        let mut b = DMatrix::zeros(self.net.dim(), n);
        for i in 0..n {
            b[(i, i)] = -1.0;
        }
        b
    }

    /// State derivative of the gradient system `Q ẋ = ∇P + B̃u`.
    ///
    /// For the reduced variant `u` is the input seen by the reduced system,
    /// i.e. the physical input minus `R_s I_s`.
    pub fn flow(&self, state: &NetworkState, u: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.gradient(state)? + self.input_matrix() * u;
        Ok(g.component_div(&self.q_diagonal()))
    }

    /// Predicted `dP/dt = ẋᵀ Q ẋ - ẋᵀ B̃ u` along solutions of the gradient system.
    pub fn rate(&self, xdot: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let q = self.q_diagonal();
        let quad: f64 = xdot.iter().zip(q.iter()).map(|(x, q)| q * x * x).sum();
        quad - xdot.dot(&(self.input_matrix() * u))
    }
}

type Q0Fn = dyn Fn(&NetworkState) -> DMatrix<f64> + Send + Sync;

/// Parameters `(λ, M, Q₀, D)` selecting one member of the generalized family.
#[derive(Clone)]
pub struct BmPair {
    pub lambda: f64,
    /// Constant symmetric `(2n+m) × (2n+m)` matrix.
    pub m: DMatrix<f64>,
    /// State-dependent `n × (2n+m)` matrix.
    pub q0: Arc<Q0Fn>,
    /// Full-rank `n × n` input scaling.
    pub d: DMatrix<f64>,
}

impl fmt::Debug for BmPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BmPair")
            .field("lambda", &self.lambda)
            .field("m", &self.m)
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

impl BmPair {
    pub fn new(
        lambda: f64,
        m: DMatrix<f64>,
        q0: impl Fn(&NetworkState) -> DMatrix<f64> + Send + Sync + 'static,
        d: DMatrix<f64>,
    ) -> Self {
        Self {
            lambda,
            m,
            q0: Arc::new(q0),
            d,
        }
    }

    /// `λ = 1, M = 0, Q₀ = 0, D = I`: returns the original pair unchanged.
    pub fn identity(net: &Network) -> Self {
        let (n, dim) = (net.n(), net.dim());
        Self::new(
            1.0,
            DMatrix::zeros(dim, dim),
            move |_| DMatrix::zeros(n, dim),
            DMatrix::identity(n, n),
        )
    }

    /// Passifying member: `λ = 0`, `M = diag(L_s⁻¹, L_t⁻¹, C_s⁻¹)`,
    /// `Q₀ = [0  0  -L_s Π [V]⁻²]`, `D = L_s`. Meant for the reduced potential.
    pub fn passifying(net: &Network, pi: &DVector<f64>) -> Self {
        let (n, m, dim) = (net.n(), net.m(), net.dim());
        let mut mdiag = DVector::zeros(dim);
        for (i, d) in net.dgus().iter().enumerate() {
            mdiag[i] = 1.0 / d.l_s;
            mdiag[n + m + i] = 1.0 / d.c_s;
        }
        for (k, l) in net.lines().iter().enumerate() {
            mdiag[n + k] = 1.0 / l.l_t;
        }
        let l_s = net.l_s();
        let pi = pi.clone();
        let l_s_q0 = l_s.clone();
        Self::new(
            0.0,
            DMatrix::from_diagonal(&mdiag),
            move |x: &NetworkState| {
                let mut q0 = DMatrix::zeros(n, dim);
                for i in 0..n {
                    q0[(i, n + m + i)] = -l_s_q0[i] * pi[i] / (x.v[i] * x.v[i]);
                }
                q0
            },
            DMatrix::from_diagonal(&l_s),
        )
    }

    /// Transform `A(x) = λI + ∇²P(x) M`.
    pub fn transform(&self, hessian: &DMatrix<f64>) -> DMatrix<f64> {
        let dim = hessian.nrows();
        DMatrix::identity(dim, dim) * self.lambda + hessian * &self.m
    }
}

/// Output of [`generalized_pair`].
#[derive(Debug, Clone)]
pub struct GeneralizedPair {
    pub q_a: DMatrix<f64>,
    pub grad_p_a: DVector<f64>,
    pub b_a: DMatrix<f64>,
    pub p_a: f64,
    pub q0: DMatrix<f64>,
}

fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Evaluate `(Q_A, ∇P_A, B̃_A)` and `P_A` at a state.
pub fn generalized_pair(
    mp: &MixedPotential<'_>,
    pair: &BmPair,
    state: &NetworkState,
) -> Result<GeneralizedPair> {
    let dim = mp.network().dim();
    let n = mp.network().n();
    if pair.m.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            what: "M",
            expected: dim,
            got: pair.m.nrows(),
        });
    }
    if pair.d.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            what: "D",
            expected: n,
            got: pair.d.nrows(),
        });
    }
    let hess = mp.hessian(state)?;
    let grad = mp.gradient(state)?;
    let a = pair.transform(&hess);
    let min_singular = min_singular_value(&a);
    if !(min_singular > RANK_TOLERANCE) {
        return Err(Error::RankDeficientTransform { min_singular });
    }
    let q0 = (pair.q0)(state);
    if q0.shape() != (n, dim) {
        return Err(Error::DimensionMismatch {
            what: "Q0",
            expected: n,
            got: q0.nrows(),
        });
    }
    let b = mp.input_matrix();
    let q_a = &a * (mp.q_matrix() - &b * &q0);
    let b_a = &a * &b * &pair.d;
    let grad_p_a = &a * &grad;
    let p_a = pair.lambda * mp.value(state)? + 0.5 * grad.dot(&(&pair.m * &grad));
    Ok(GeneralizedPair {
        q_a,
        grad_p_a,
        b_a,
        p_a,
        q0,
    })
}

/// `P_A = λP + ½ ∇Pᵀ M ∇P` without building the other objects.
pub fn generalized_potential(
    mp: &MixedPotential<'_>,
    pair: &BmPair,
    state: &NetworkState,
) -> Result<f64> {
    let grad = mp.gradient(state)?;
    let base = if pair.lambda == 0.0 {
        0.0
    } else {
        pair.lambda * mp.value(state)?
    };
    Ok(base + 0.5 * grad.dot(&(&pair.m * &grad)))
}

/// Relative mismatch between the original flow `Q⁻¹(∇P + B̃u)` and the flow
/// recovered from the generalized description,
/// `(Q_A + B̃_A D⁻¹ Q₀)⁻¹ (∇P_A + B̃_A D⁻¹ u)`.
///
/// The norm of the difference is divided by `max(‖Q⁻¹(∇P + B̃u)‖, 1e-12)`.
pub fn solution_equivalence_check(
    mp: &MixedPotential<'_>,
    pair: &BmPair,
    state: &NetworkState,
    u: &DVector<f64>,
) -> Result<f64> {
    let gp = generalized_pair(mp, pair, state)?;
    let original = mp.flow(state, u)?;
    let d_inv = pair
        .d
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularInputScaling)?;
    let scaled_input = &gp.b_a * &d_inv;
    let lhs = &gp.q_a + &scaled_input * &gp.q0;
    let rhs = &gp.grad_p_a + &scaled_input * u;
    let recovered = lhs.lu().solve(&rhs).ok_or(Error::RankDeficientTransform {
        min_singular: 0.0,
    })?;
    Ok((&original - recovered).norm() / original.norm().max(1e-12))
}

/// Result of the classical Brayton–Moser stability test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCondition {
    /// `‖L^{1/2} diag(R_s⁻¹, R_t⁻¹) Γ C_s^{-1/2}‖₂`
    pub norm: f64,
    pub satisfied: bool,
    /// `1 - norm`; the condition needs a positive margin.
    pub delta_margin: f64,
}

/// Evaluate the norm condition with constant input.
///
/// Only the norm part is checked. The radial growth requirement on
/// `P*ᵀ ln V + ‖ΓV‖` is asymptotic and is not verified here.
pub fn bm_stability_condition(net: &Network) -> StabilityCondition {
    let (n, m) = (net.n(), net.m());
    let gamma = MixedPotential::full(net).gamma();
    let mut mat = DMatrix::zeros(n + m, n);
    for r in 0..n + m {
        let (l, r_inv) = if r < n {
            let d = net.dgus()[r];
            (d.l_s, 1.0 / d.r_s)
        } else {
            let l = net.lines()[r - n];
            (l.l_t, 1.0 / l.r_t)
        };
        for c in 0..n {
            mat[(r, c)] = l.sqrt() * r_inv * gamma[(r, c)] / net.dgus()[c].c_s.sqrt();
        }
    }
    let norm = mat
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    StabilityCondition {
        norm,
        satisfied: norm < 1.0,
        delta_margin: 1.0 - norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DguParams, LineParams, ZipLoad};

    fn scalar_net(load: ZipLoad) -> Network {
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

    fn two_node() -> Network {
        Network::new(
            vec![
                DguParams {
                    r_s: 0.01,
                    l_s: 1.8e-3,
                    c_s: 2.2e-3,
                },
                DguParams {
                    r_s: 0.015,
                    l_s: 2.0e-3,
                    c_s: 1.9e-3,
                },
            ],
            vec![LineParams {
                r_t: 0.05,
                l_t: 2.3e-6,
                from: 0,
                to: 1,
            }],
            vec![ZipLoad::new(0.08, 10.0, 1e4), ZipLoad::new(0.0, 0.0, 3e3)],
        )
        .unwrap()
    }

    #[test]
    fn potential_at_zero_current_is_minus_cocontent() {
        let net = two_node();
        let mp = MixedPotential::full(&net);
        let st = NetworkState::from_slices(&[0.0, 0.0], &[0.0], &[370.0, 390.0]);
        let g = mp.resistive_cocontent(&st.v).unwrap();
        assert_eq!(mp.value(&st).unwrap(), -g);
    }

    #[test]
    fn scalar_cocontent_direct_sum() {
        let net = scalar_net(ZipLoad::new(0.04, 10.0, 5e3));
        let mp = MixedPotential::full(&net);
        let v: f64 = 380.0;
        let expected = 0.5 * 0.04 * v * v + 5000.0 * v.ln() + 10.0 * v;
        let st = NetworkState::from_slices(&[0.0], &[], &[v]);
        let got = -mp.value(&st).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected, "{got} vs {expected}");
        assert!((expected - (2888.0 + 29700.86 + 3800.0)).abs() < 0.01);
    }

    #[test]
    fn variants_differ_by_filter_resistance() {
        let net = two_node();
        let st = NetworkState::from_slices(&[30.0, -4.0], &[2.5], &[375.0, 384.0]);
        let full = MixedPotential::full(&net).gradient(&st).unwrap();
        let red = MixedPotential::reduced(&net).gradient(&st).unwrap();
        let diff = full - red;
        assert!((diff[0] - 0.01 * 30.0).abs() < 1e-12);
        assert!((diff[1] - 0.015 * -4.0).abs() < 1e-12);
        assert!(diff.rows(2, 3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_member_reproduces_original_pair() {
        let net = two_node();
        let mp = MixedPotential::full(&net);
        let st = NetworkState::from_slices(&[30.0, 10.0], &[2.5], &[375.0, 384.0]);
        let gp = generalized_pair(&mp, &BmPair::identity(&net), &st).unwrap();
        assert_eq!(gp.q_a, mp.q_matrix());
        assert_eq!(gp.b_a, mp.input_matrix());
        assert_eq!(gp.p_a, mp.value(&st).unwrap());
        assert_eq!(gp.grad_p_a, mp.gradient(&st).unwrap());
        let u = DVector::from_vec(vec![381.0, 379.0]);
        assert_eq!(
            solution_equivalence_check(&mp, &BmPair::identity(&net), &st, &u).unwrap(),
            0.0
        );
    }

    #[test]
    fn rank_deficient_transform_is_rejected() {
        let net = two_node();
        let mp = MixedPotential::full(&net);
        let st = NetworkState::from_slices(&[1.0, 1.0], &[0.0], &[380.0, 380.0]);
        let dim = net.dim();
        let pair = BmPair::new(
            0.0,
            DMatrix::zeros(dim, dim),
            move |_| DMatrix::zeros(2, dim),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(
            generalized_pair(&mp, &pair, &st),
            Err(Error::RankDeficientTransform { .. })
        ));
    }

    #[test]
    fn scalar_stability_norm_closed_form() {
        let net = scalar_net(ZipLoad::default());
        let c = bm_stability_condition(&net);
        let expected = (1.12e-3f64 / 6.8e-3).sqrt() / 0.01;
        assert!((c.norm - expected).abs() < 1e-12 * expected);
        assert!(!c.satisfied);
    }

    #[test]
    fn heavy_damping_satisfies_condition() {
        let d = DguParams {
            r_s: 1e6,
            l_s: 1e-3,
            c_s: 1e-3,
        };
        let l = LineParams {
            r_t: 1e6,
            l_t: 1e-6,
            from: 0,
            to: 1,
        };
        let net = Network::new(vec![d, d], vec![l], vec![ZipLoad::default(); 2]).unwrap();
        let c = bm_stability_condition(&net);
        assert!(c.norm < 1e-5);
        assert!(c.satisfied);
    }
}
