//! Acceptance criteria, one line each. Runs as a plain binary so every line is
//! printed regardless of outcome; exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use zipgrid::brayton_moser::{
    generalized_pair, generalized_potential, solution_equivalence_check, BmPair, MixedPotential,
};
use zipgrid::network::conductance_matrices;
use zipgrid::passivity::{dissipation_audit, StorageId};
use zipgrid::scenario::Scenario;
use zipgrid::simulation::{simulate, Trajectory};
use zipgrid::steady_state::{equilibrium_from_ustar, equilibrium_from_vstar};
use zipgrid::{Error, NetworkState};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `Z⁻¹ - P*/V*²` per node for the given loads.
fn equivalent_conductance(sc: &Scenario, post_step: bool) -> DVector<f64> {
    let net = if post_step {
        sc.network.with_loads(sc.final_loads().unwrap()).unwrap()
    } else {
        sc.network.clone()
    };
    let v = &sc.controller.v_star;
    conductance_matrices(&net, v, &sc.controller.pi, v).unwrap().bregman
}

fn c1_conductance_table() -> Outcome {
    let start = Instant::now();
    let sc = common::scenario("scenario1");
    let pre = equivalent_conductance(&sc, false);
    let post = equivalent_conductance(&sc, true);
    let want_pre = [0.011, 0.026, 0.008, 0.001];
    let want_post = [-0.017, -0.029, -0.047, -0.027];
    let err = (0..4)
        .map(|i| (pre[i] - want_pre[i]).abs().max((post[i] - want_post[i]).abs()))
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    check(
        err <= 5e-4 && elapsed < Duration::from_secs(1),
        format!("pre {:.4?} post {:.4?}, max error {err:.2e} S, {elapsed:.2?}", pre.as_slice(), post.as_slice()),
    )
}

fn c2_illustrative_conductance() -> Outcome {
    let g1 = equivalent_conductance(&common::scenario("illustrative"), false)[0];
    let g2 = equivalent_conductance(&common::scenario("illustrative_case2"), false)[0];
    check(
        (g1 - 0.0054).abs() <= 1e-4 && (g2 + 0.0050).abs() <= 1e-4,
        format!("P*=5 kW: {g1:.5} S, P*=6.5 kW: {g2:.5} S"),
    )
}

fn c3_steady_state_currents() -> Outcome {
    let mut got = Vec::new();
    for name in ["illustrative", "illustrative_case2"] {
        let sc = common::scenario(name);
        let eq = equilibrium_from_vstar(&sc.network, &sc.controller.v_star).map_err(|e| e.to_string())?;
        // Independent route: Newton on the open-loop equations at the equilibrium input.
        let back = equilibrium_from_ustar(&sc.network, &eq.u, None).map_err(|e| e.to_string())?;
        if (back.i_s[0] - eq.i_s[0]).abs() > 1e-8 {
            return Err(format!("{name}: routes disagree ({} vs {})", eq.i_s[0], back.i_s[0]));
        }
        got.push(eq.i_s[0]);
    }
    check(
        (got[0] - 38.36).abs() <= 0.01 && (got[1] - 42.31).abs() <= 0.01,
        format!("Is = {:.4} A and {:.4} A", got[0], got[1]),
    )
}

/// Final deviation below 0.1 V and deviation below 0.5 V from 0.1 s after the step on.
fn regulation(sc: &Scenario, traj: &Trajectory, step: f64) -> (f64, f64) {
    let dev = |s: &NetworkState| (&s.v - &sc.controller.v_star).amax();
    let last = dev(traj.last_state().unwrap());
    let settle = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= step + 0.1 - 1e-12)
        .map(|(_, s)| dev(s))
        .fold(0.0, f64::max);
    (last, settle)
}

fn regulated_run(name: &str) -> Outcome {
    let sc = common::scenario(name);
    let start = Instant::now();
    let x0 = sc.initial_state().map_err(|e| e.to_string())?;
    let traj = simulate(&sc.network, &sc.drive(), &x0, &sc.sim, &sc.events).map_err(|e| format!("{name}: {e}"))?;
    let elapsed = start.elapsed();
    let step = sc.events.first().map(|e| e.time).unwrap_or(0.5);
    let (last, settle) = regulation(&sc, &traj, step);
    check(
        last < 0.1 && settle < 0.5 && elapsed < Duration::from_secs(60) && sc.sim.dt == 1e-5 && sc.sim.t_end == 2.0,
        format!("{name}: |V-V*| at 2 s {last:.2e} V, max after step+0.1 s {settle:.2e} V, {elapsed:.2?}"),
    )
}

fn c4_scenario1() -> Outcome {
    regulated_run("scenario1")
}

fn c5_scenario2() -> Outcome {
    regulated_run("scenario2")
}

fn c6_passivity_certificate() -> Outcome {
    let sc = common::scenario("scenario1");
    let mut r = common::rng(6);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let pi = DVector::from_fn(4, |i, _| sc.network.loads()[i].p_const + r.random_range(0.0..1e4));
        let x = common::random_state(&mut r, &sc.network, (1.0, 1e4), 100.0);
        let mp = MixedPotential::reduced(&sc.network);
        let gp = generalized_pair(&mp, &BmPair::passifying(&sc.network, &pi), &x).map_err(|e| e.to_string())?;
        let sym = &gp.q_a + gp.q_a.transpose();
        let top = sym.symmetric_eigenvalues().max();
        worst = worst.max(top);
    }
    check(worst <= 1e-9, format!("max eigenvalue of Q_A + Q_A^T over 10^4 states: {worst:.3e}"))
}

fn c7_dissipation_audit() -> Outcome {
    let mut sc = common::scenario("scenario1");
    sc.sim.record_stride = 1;
    let x0 = sc.initial_state().map_err(|e| e.to_string())?;
    let traj = simulate(&sc.network, &sc.drive(), &x0, &sc.sim, &sc.events).map_err(|e| e.to_string())?;
    let audit = dissipation_audit(&sc.network, &traj, StorageId::ClosedLoop, &sc.controller).map_err(|e| e.to_string())?;
    let bound = 10.0 * sc.sim.dt * sc.sim.dt;
    let max_pred = audit.iter().map(|s| s.ds_dt_predicted).fold(f64::NEG_INFINITY, f64::max);
    let violations = audit.iter().filter(|s| s.residual.abs() >= bound).count();
    let worst = audit.iter().max_by(|a, b| a.residual.abs().total_cmp(&b.residual.abs())).unwrap();
    let late = audit.iter().filter(|s| s.t >= 1.0).map(|s| s.residual.abs()).fold(0.0, f64::max);
    check(
        violations == 0 && max_pred <= 0.0,
        format!(
            "{violations}/{} samples with |residual| >= {bound:e} W (worst {:.3e} W at t = {:.5} s, worst for t >= 1 s {late:.3e} W); max predicted dS_d/dt {max_pred:e} W",
            audit.len(),
            worst.residual.abs(),
            worst.t
        ),
    )
}

fn fd_gradient(f: &dyn Fn(&NetworkState) -> f64, x: &NetworkState) -> DVector<f64> {
    let flat = x.to_vector();
    DVector::from_fn(flat.len(), |j, _| {
        let h = 1e-5 * flat[j].abs().max(1.0);
        let mut p = flat.clone();
        let mut m = flat.clone();
        p[j] += h;
        m[j] -= h;
        let (n, mm) = (x.n(), x.m());
        (f(&NetworkState::from_vector(n, mm, &p)) - f(&NetworkState::from_vector(n, mm, &m))) / (2.0 * h)
    })
}

fn c8_gradient_oracle() -> Outcome {
    let sc = common::scenario("scenario1");
    let net = &sc.network;
    let mut r = common::rng(8);
    let pair = BmPair::passifying(net, &sc.controller.pi);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = common::random_state(&mut r, net, (50.0, 1000.0), 100.0);
        for mp in [MixedPotential::full(net), MixedPotential::reduced(net)] {
            let g = mp.gradient(&x).map_err(|e| e.to_string())?;
            let fd = fd_gradient(&|y| mp.value(y).unwrap(), &x);
            worst = worst.max((&g - &fd).norm() / g.norm().max(fd.norm()));
        }
        let mp = MixedPotential::reduced(net);
        let g_a = generalized_pair(&mp, &pair, &x).map_err(|e| e.to_string())?.grad_p_a;
        let fd = fd_gradient(&|y| generalized_potential(&mp, &pair, y).unwrap(), &x);
        worst = worst.max((&g_a - &fd).norm() / g_a.norm().max(fd.norm()));
    }
    check(worst < 1e-6, format!("max relative error {worst:.3e} over 100 states"))
}

fn c9_family_equivalence() -> Outcome {
    let sc = common::scenario("scenario1");
    let net = &sc.network;
    let mut r = common::rng(9);
    let dim = net.dim();
    let lambda = r.random_range(0.5..2.0);
    let raw = DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.0..1.0)) * 1e-4;
    let random = BmPair::new(lambda, &raw + raw.transpose(), move |_| DMatrix::zeros(4, dim), DMatrix::identity(4, 4));
    let members = [
        ("identity", BmPair::identity(net), MixedPotential::full(net)),
        ("passifying", BmPair::passifying(net, &sc.controller.pi), MixedPotential::reduced(net)),
        ("random", random, MixedPotential::full(net)),
    ];
    let mut report = Vec::new();
    let mut ok = true;
    for (name, pair, mp) in &members {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = common::random_state(&mut r, net, (50.0, 1000.0), 100.0);
            let u = common::random_vector(&mut r, 4, 0.0, 800.0);
            worst = worst.max(solution_equivalence_check(mp, pair, &x, &u).map_err(|e| e.to_string())?);
        }
        ok &= worst < 1e-8;
        report.push(format!("{name} {worst:.2e}"));
    }
    check(ok, format!("max residual: {}", report.join(", ")))
}

fn c10_instability_witness() -> Outcome {
    let cmp = common::scenario("witness_comparison");
    let load = cmp.network.loads()[0];
    let v_star = cmp.controller.v_star[0];
    let g_k = load.z_inv - load.p_const / (v_star * v_star);
    let x0 = cmp.initial_state().map_err(|e| e.to_string())?;
    let exit = match simulate(&cmp.network, &cmp.drive(), &x0, &cmp.sim, &cmp.events) {
        Err(Error::DomainExit { time, .. }) => Some(time),
        _ => None,
    };
    let prop = common::scenario("witness_proposed");
    if prop.network != cmp.network || prop.sim != cmp.sim || prop.initial != cmp.initial {
        return Err("witness scenarios differ beyond the controller".into());
    }
    let traj = simulate(&prop.network, &prop.drive(), &x0, &prop.sim, &prop.events).map_err(|e| e.to_string())?;
    let (last, settle) = regulation(&prop, &traj, 0.5);
    check(
        g_k < 0.0 && exit.is_some() && last < 0.1 && settle < 0.5,
        format!(
            "G(V*) = {g_k:.4} S; baseline exits at {exit:?} s; proposed law: |V-V*| at 2 s {last:.2e} V, after 0.6 s {settle:.2e} V"
        ),
    )
}

fn c11_robustness() -> Outcome {
    let source = include_str!("../src/control.rs");
    let code: String = source.lines().filter(|l| !l.trim_start().starts_with("//")).collect::<Vec<_>>().join("\n");
    let leaks: Vec<&str> = ["ZipLoad", "Network", "p_const", "z_inv", "i_const"]
        .into_iter()
        .filter(|w| code.contains(w))
        .collect();
    if !leaks.is_empty() {
        return Err(format!("control.rs references {leaks:?}"));
    }
    let base = common::scenario("scenario1");
    let sc = common::scenario("scenario1_double_p");
    for (a, b) in base.network.loads().iter().zip(sc.network.loads()) {
        if b.p_const != 2.0 * a.p_const || b.z_inv != a.z_inv || b.i_const != a.i_const {
            return Err("doubled scenario does not double P* only".into());
        }
    }
    let bounded = sc.final_loads().unwrap().iter().zip(sc.controller.pi.iter()).all(|(l, &p)| l.p_const <= p);
    let run = regulated_run("scenario1_double_p")?;
    check(bounded && sc.controller.pi.iter().all(|&p| p == 25e3), format!("no load access in control.rs; Pi >= P* after step: {bounded}; {run}"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("equivalent-conductance table", c1_conductance_table),
        ("illustrative conductances", c2_illustrative_conductance),
        ("steady-state currents", c3_steady_state_currents),
        ("scenario 1 regulation", c4_scenario1),
        ("scenario 2 regulation", c5_scenario2),
        ("passivity certificate", c6_passivity_certificate),
        ("dissipation audit", c7_dissipation_audit),
        ("gradient oracle", c8_gradient_oracle),
        ("family equivalence", c9_family_equivalence),
        ("instability witness", c10_instability_witness),
        ("robustness contract", c11_robustness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS criterion {:>2} ({name}): {detail}", i + 1),
            Ok(Err(detail)) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({name}): {detail}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({name}): panicked", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
