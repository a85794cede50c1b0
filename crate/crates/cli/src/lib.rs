//! Command-line front end: scenario simulation, steady-state solves,
//! passivity certificates, phase-plane fields and trajectory audits.
//!
//! Exit codes: 0 on success, 2 when a trajectory leaves the positive voltage
//! domain, 1 on any other error. Errors go to standard error as
//! `error[Kind]: message`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use zipgrid::brayton_moser::{bm_stability_condition, generalized_pair, BmPair, MixedPotential};
use zipgrid::network::conductance_matrices;
use zipgrid::output::{
    read_trajectory_csv, write_boundaries_csv, write_diagnostics_csv, write_field_csv,
    write_field_svg, write_trajectory_csv, write_trajectory_svg,
};
use zipgrid::passivity::{dissipation_audit, region_boundary, StorageId};
use zipgrid::scenario::{load_scenario, Scenario};
use zipgrid::simulation::{simulate, vector_field_grid, Trajectory};
use zipgrid::steady_state::equilibrium_from_vstar;
use zipgrid::{Error, Network, NetworkState};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "ZIPGRID_OUT";
const DEFAULT_OUT: &str = "zipgrid-out";

#[derive(Debug, Parser)]
#[command(name = "zipgrid", version, about = "DC microgrid with ZIP loads under passivity-based voltage control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write trajectory.csv, diagnostics.csv and plots.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the equilibrium at the scenario's voltage references.
    SteadyState { scenario: PathBuf },
    /// Conductance tables, norm condition and a sampled Q_A eigenvalue audit.
    Certify {
        scenario: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Closed-loop phase-plane field of a single-node scenario.
    VectorField {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [0.0, 80.0])]
        is_range: Vec<f64>,
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [200.0, 500.0])]
        v_range: Vec<f64>,
        #[arg(long, default_value_t = 25)]
        resolution: usize,
    },
    /// Recompute a storage and its dissipation residual along a recorded trajectory.
    Audit {
        trajectory: PathBuf,
        /// Scenario that produced the trajectory.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "sd")]
        storage: StorageId,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `argv` (including the program name), run the command and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run_cli`] with explicit output streams.
pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "error[UsageError]: {text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.kind());
            match e {
                Error::DomainExit { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments) -> zipgrid::Result<()> {
    out.write_fmt(text).map_err(io_err(Path::new("<stdout>")))
}

fn dispatch(command: Command, out: &mut dyn Write) -> zipgrid::Result<()> {
    match command {
        Command::Simulate { scenario, out: dir } => cmd_simulate(&scenario, &out_dir(dir), out),
        Command::SteadyState { scenario } => cmd_steady_state(&scenario, out),
        Command::Certify {
            scenario,
            samples,
            seed,
        } => cmd_certify(&scenario, samples, seed, out),
        Command::VectorField {
            scenario,
            out: dir,
            is_range,
            v_range,
            resolution,
        } => cmd_vector_field(
            &scenario,
            &out_dir(dir),
            (is_range[0], is_range[1]),
            (v_range[0], v_range[1]),
            resolution,
            out,
        ),
        Command::Audit {
            trajectory,
            scenario,
            storage,
            out: dir,
        } => cmd_audit(&trajectory, &scenario, storage, &out_dir(dir), out),
    }
}

fn write_run(sc: &Scenario, traj: &Trajectory, dir: &Path, out: &mut dyn Write) -> zipgrid::Result<()> {
    let path = write_trajectory_csv(traj, dir)?;
    say(out, format_args!("wrote {}\n", path.display()))?;
    if sc.outputs.svg {
        let path = write_trajectory_svg(traj, &sc.controller.v_star, dir)?;
        say(out, format_args!("wrote {}\n", path.display()))?;
    }
    Ok(())
}

fn cmd_simulate(path: &Path, dir: &Path, out: &mut dyn Write) -> zipgrid::Result<()> {
    let sc = load_scenario(path)?;
    let x0 = sc.initial_state()?;
    let traj = match simulate(&sc.network, &sc.drive(), &x0, &sc.sim, &sc.events) {
        Ok(traj) => traj,
        Err(Error::DomainExit {
            time,
            node,
            partial,
        }) => {
            write_run(&sc, &partial, dir, out)?;
            return Err(Error::DomainExit {
                time,
                node,
                partial,
            });
        }
        Err(e) => return Err(e),
    };
    write_run(&sc, &traj, dir, out)?;
    let mut audits = Vec::new();
    for name in &sc.outputs.diagnostics {
        let id: StorageId = name.parse()?;
        audits.push((id, dissipation_audit(&sc.network, &traj, id, &sc.controller)?));
    }
    if !audits.is_empty() {
        let path = write_diagnostics_csv(&audits, dir)?;
        say(out, format_args!("wrote {}\n", path.display()))?;
    }
    let last = traj.last_state().expect("simulation records the initial state");
    say(out, format_args!("t = {} s\n", traj.times.last().copied().unwrap_or(0.0)))?;
    for (i, id) in sc.node_ids.iter().enumerate() {
        say(
            out,
            format_args!(
                "node {id}: V = {:.6} V, V* = {:.6} V, Is = {:.6} A\n",
                last.v[i], sc.controller.v_star[i], last.i_s[i]
            ),
        )?;
    }
    Ok(())
}

fn cmd_steady_state(path: &Path, out: &mut dyn Write) -> zipgrid::Result<()> {
    let sc = load_scenario(path)?;
    let eq = equilibrium_from_vstar(&sc.network, &sc.controller.v_star)?;
    say(out, format_args!("node,Is,V,u\n"))?;
    for (i, id) in sc.node_ids.iter().enumerate() {
        say(out, format_args!("{id},{},{},{}\n", eq.i_s[i], eq.v[i], eq.u[i]))?;
    }
    say(out, format_args!("line,It\n"))?;
    for (k, id) in sc.line_ids.iter().enumerate() {
        say(out, format_args!("{id},{}\n", eq.i_t[k]))?;
    }
    say(out, format_args!("residual,{:e}\n", eq.residual))
}

fn conductances(net: &Network, sc: &Scenario) -> zipgrid::Result<zipgrid::network::Conductances> {
    let v = &sc.controller.v_star;
    conductance_matrices(net, v, &sc.controller.pi, v)
}

fn cmd_certify(path: &Path, samples: usize, seed: u64, out: &mut dyn Write) -> zipgrid::Result<()> {
    let sc = load_scenario(path)?;
    let pre = conductances(&sc.network, &sc)?;
    let post_net = sc.network.with_loads(sc.final_loads()?)?;
    let post = conductances(&post_net, &sc)?;
    say(out, format_args!("equivalent conductance at V* (S)\nnode,pre,post\n"))?;
    for (i, id) in sc.node_ids.iter().enumerate() {
        say(out, format_args!("{id},{:.4},{:.4}\n", pre.bregman[i], post.bregman[i]))?;
    }
    let dominated = post_net
        .loads()
        .iter()
        .chain(sc.network.loads())
        .zip(sc.controller.pi.iter().chain(sc.controller.pi.iter()))
        .all(|(l, &p)| l.p_const <= p);
    say(out, format_args!("Pi >= P*: {dominated}\n"))?;
    let cond = bm_stability_condition(&sc.network);
    say(
        out,
        format_args!(
            "norm condition: {:.6} ({})\n",
            cond.norm,
            if cond.satisfied { "satisfied" } else { "violated" }
        ),
    )?;

    let mut rng = StdRng::seed_from_u64(seed);
    let mp = MixedPotential::reduced(&sc.network);
    let pair = BmPair::passifying(&sc.network, &sc.controller.pi);
    let (n, m) = (sc.network.n(), sc.network.m());
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let state = NetworkState::new(
            nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-100.0..100.0)),
            nalgebra::DVector::from_fn(m, |_, _| rng.random_range(-100.0..100.0)),
            nalgebra::DVector::from_fn(n, |_, _| rng.random_range(1.0..1e4)),
        );
        let q_a = generalized_pair(&mp, &pair, &state)?.q_a;
        worst = worst.max((&q_a + q_a.transpose()).symmetric_eigenvalues().max());
    }
    say(
        out,
        format_args!("max eigenvalue of Q_A + Q_A^T over {samples} states: {worst:e}\n"),
    )
}

fn cmd_vector_field(
    path: &Path,
    dir: &Path,
    i_s_range: (f64, f64),
    v_range: (f64, f64),
    resolution: usize,
    out: &mut dyn Write,
) -> zipgrid::Result<()> {
    let sc = load_scenario(path)?;
    let points = vector_field_grid(&sc.network, &sc.controller, i_s_range, v_range, resolution)?;
    let boundary = region_boundary(&sc.network.loads()[0], sc.controller.v_star[0]);
    for path in [
        write_field_csv(&points, dir)?,
        write_boundaries_csv(&boundary, i_s_range, dir)?,
        write_field_svg(&points, &boundary, i_s_range, v_range, dir)?,
    ] {
        say(out, format_args!("wrote {}\n", path.display()))?;
    }
    Ok(())
}

fn cmd_audit(
    trajectory: &Path,
    scenario: &Path,
    storage: StorageId,
    dir: &Path,
    out: &mut dyn Write,
) -> zipgrid::Result<()> {
    let sc = load_scenario(scenario)?;
    let traj = read_trajectory_csv(trajectory)?.into_trajectory(&sc.network, &sc.events)?;
    let samples = dissipation_audit(&sc.network, &traj, storage, &sc.controller)?;
    let path = write_diagnostics_csv(&[(storage, samples.clone())], dir)?;
    say(out, format_args!("wrote {}\n", path.display()))?;
    let worst = samples
        .iter()
        .max_by(|a, b| a.residual.abs().total_cmp(&b.residual.abs()));
    if let Some(w) = worst {
        say(
            out,
            format_args!(
                "{storage}: {} samples, max |residual| {:e} W at t = {} s\n",
                samples.len(),
                w.residual.abs(),
                w.t
            ),
        )?;
    }
    Ok(())
}
