//! Trajectory, diagnostics and plot-data files.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! value read back is bit-identical to the one written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkState};
use crate::passivity::{DissipationSample, RegionBoundary, StorageId};
use crate::simulation::{Event, EventMarker, FieldPoint, Trajectory};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("Is_{i}")));
    h.extend((1..=m).map(|k| format!("It_{k}")));
    h.extend((1..=n).map(|i| format!("V_{i}")));
    h.extend((1..=n).map(|i| format!("u_{i}")));
    h
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Write `trajectory.csv` into `dir` and return its path.
pub fn write_trajectory_csv(traj: &Trajectory, dir: &Path) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("trajectory.csv");
    let (n, m) = traj
        .states
        .first()
        .map(|s| (s.n(), s.m()))
        .unwrap_or((0, 0));
    let mut w = csv_writer(&path)?;
    w.write_record(trajectory_header(n, m))?;
    let mut row = Vec::with_capacity(1 + 3 * n + m);
    for k in 0..traj.len() {
        row.clear();
        row.push(traj.times[k].to_string());
        let s = &traj.states[k];
        row.extend(s.i_s.iter().chain(s.i_t.iter()).chain(s.v.iter()).map(f64::to_string));
        row.extend(traj.inputs[k].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Samples read back from a trajectory file, without load information.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRun {
    pub times: Vec<f64>,
    pub states: Vec<NetworkState>,
    pub inputs: Vec<DVector<f64>>,
}

impl RecordedRun {
    /// Attach the load schedule of `net` and `events` so the run can be audited.
    pub fn into_trajectory(self, net: &Network, events: &[Event]) -> Result<Trajectory> {
        let mut events = events.to_vec();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut schedule = vec![(0.0, net.loads().to_vec())];
        let mut markers = Vec::new();
        for e in &events {
            let loads = e.apply(&schedule.last().unwrap().1)?;
            schedule.push((e.time, loads));
            if let Some(sample) = self.times.iter().position(|&t| t >= e.time) {
                markers.push(EventMarker {
                    time: e.time,
                    sample,
                });
            }
        }
        let v_dot_used = vec![DVector::zeros(net.n()); self.times.len()];
        Ok(Trajectory {
            times: self.times,
            states: self.states,
            inputs: self.inputs,
            v_dot_used,
            events: markers,
            load_schedule: schedule,
        })
    }
}

pub fn read_trajectory_csv(path: &Path) -> Result<RecordedRun> {
    let origin = path.display().to_string();
    let bad = |message: String| Error::InvariantViolation {
        path: origin.clone(),
        message,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (n, m) = (count("Is_"), count("It_"));
    let expected = trajectory_header(n, m);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(format!("unexpected header, wanted {}", expected.join(","))));
    }
    let mut run = RecordedRun {
        times: Vec::new(),
        states: Vec::new(),
        inputs: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 2)))?;
        if vals.len() != expected.len() {
            return Err(bad(format!("row {} has {} fields", line + 2, vals.len())));
        }
        run.times.push(vals[0]);
        run.states.push(NetworkState::from_slices(
            &vals[1..1 + n],
            &vals[1 + n..1 + n + m],
            &vals[1 + n + m..1 + 2 * n + m],
        ));
        run.inputs
            .push(DVector::from_column_slice(&vals[1 + 2 * n + m..1 + 3 * n + m]));
    }
    Ok(run)
}

/// Write `diagnostics.csv` with one row per audit sample.
pub fn write_diagnostics_csv(
    audits: &[(StorageId, Vec<DissipationSample>)],
    dir: &Path,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("diagnostics.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "storage",
        "t",
        "S",
        "dS_dt_numeric",
        "dS_dt_predicted",
        "supply",
        "residual",
    ])?;
    for (id, samples) in audits {
        for s in samples {
            w.write_record([
                id.name().to_string(),
                s.t.to_string(),
                s.storage.to_string(),
                s.ds_dt_numeric.to_string(),
                s.ds_dt_predicted.to_string(),
                s.supply.to_string(),
                s.residual.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

pub fn write_field_csv(points: &[FieldPoint], dir: &Path) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("field.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["Is", "V", "dIs", "dV"])?;
    for p in points {
        w.write_record([p.i_s, p.v, p.di_s, p.dv].map(|x| x.to_string()))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Write `boundaries.csv`: the lower edges of the Bregman and Krasovskii sets
/// as horizontal segments across the current range. Empty sets produce no rows.
pub fn write_boundaries_csv(
    boundary: &RegionBoundary,
    i_s_range: (f64, f64),
    dir: &Path,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("boundaries.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["set", "Is", "V"])?;
    for (name, v) in [("X_B", boundary.bregman), ("X_K", boundary.krasovskii)] {
        if let Some(v) = v {
            for i in [i_s_range.0, i_s_range.1] {
                w.write_record([name.to_string(), i.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

const PANEL_W: f64 = 760.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_T: f64 = 30.0;
const GAP: f64 = 50.0;
const MAX_POINTS: usize = 1500;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series<'a> {
    label: String,
    values: Box<dyn Fn(usize) -> f64 + 'a>,
    dashed: bool,
    color: &'static str,
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

fn panel(out: &mut String, top: f64, title: &str, unit: &str, times: &[f64], series: &[Series]) {
    let len = times.len();
    let stride = len.div_ceil(MAX_POINTS).max(1);
    let idx: Vec<usize> = (0..len).step_by(stride).chain(len.checked_sub(1)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &k in &idx {
            let y = (s.values)(k);
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    let (lo, hi) = nice_range(lo, hi);
    let (t0, t1) = (times[0], times[len - 1].max(times[0] + 1e-12));
    let x = |t: f64| MARGIN_L + (t - t0) / (t1 - t0) * PANEL_W;
    let y = |v: f64| top + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;

    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="14">{title}</text>"#,
        MARGIN_L,
        top - 8.0
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{:.4} {unit}</text>"#,
            MARGIN_L - 4.0,
            y(v) + 4.0,
            v
        );
        let t = t0 + (t1 - t0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{:.3} s</text>"#,
            x(t),
            top + PANEL_H + 14.0,
            t
        );
    }
    for (j, s) in series.iter().enumerate() {
        let mut pts = String::new();
        for &k in &idx {
            let _ = write!(pts, "{:.2},{:.2} ", x(times[k]), y((s.values)(k)));
        }
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2"{dash} points="{}"/>"#,
            s.color,
            pts.trim_end()
        );
        if !s.dashed {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
                MARGIN_L + PANEL_W + 8.0,
                top + 14.0 + 14.0 * j as f64,
                s.color,
                s.label
            );
        }
    }
}

/// Three stacked panels: generated currents, line currents, voltages with references.
pub fn trajectory_svg(traj: &Trajectory, v_star: &DVector<f64>) -> String {
    let mut out = String::new();
    let height = MARGIN_T + 3.0 * (PANEL_H + GAP);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif">"#,
        MARGIN_L + PANEL_W + 80.0
    );
    if traj.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (n, m) = (traj.states[0].n(), traj.states[0].m());
    let color = |i: usize| COLORS[i % COLORS.len()];
    let is: Vec<Series> = (0..n)
        .map(|i| Series {
            label: format!("Is_{}", i + 1),
            values: Box::new(move |k| traj.states[k].i_s[i]),
            dashed: false,
            color: color(i),
        })
        .collect();
    let it: Vec<Series> = (0..m)
        .map(|j| Series {
            label: format!("It_{}", j + 1),
            values: Box::new(move |k| traj.states[k].i_t[j]),
            dashed: false,
            color: color(j),
        })
        .collect();
    let mut vs: Vec<Series> = (0..n)
        .map(|i| Series {
            label: format!("V_{}", i + 1),
            values: Box::new(move |k| traj.states[k].v[i]),
            dashed: false,
            color: color(i),
        })
        .collect();
    for i in 0..n {
        let r = v_star[i];
        vs.push(Series {
            label: format!("V*_{}", i + 1),
            values: Box::new(move |_| r),
            dashed: true,
            color: color(i),
        });
    }
    let top = |p: f64| MARGIN_T + p * (PANEL_H + GAP);
    panel(&mut out, top(0.0), "Generated currents", "A", &traj.times, &is);
    if m > 0 {
        panel(&mut out, top(1.0), "Line currents", "A", &traj.times, &it);
    }
    panel(&mut out, top(2.0), "Voltages", "V", &traj.times, &vs);
    out.push_str("</svg>\n");
    out
}

pub fn write_trajectory_svg(traj: &Trajectory, v_star: &DVector<f64>, dir: &Path) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("trajectory.svg");
    fs::write(&path, trajectory_svg(traj, v_star)).map_err(io_err(&path))?;
    Ok(path)
}

/// Direction field with the set boundaries drawn as red lines
/// (dashed: Bregman, solid: Krasovskii).
pub fn field_svg(
    points: &[FieldPoint],
    boundary: &RegionBoundary,
    i_s_range: (f64, f64),
    v_range: (f64, f64),
) -> String {
    let (w, h) = (600.0, 600.0);
    let x = |i: f64| MARGIN_L + (i - i_s_range.0) / (i_s_range.1 - i_s_range.0) * w;
    let y = |v: f64| MARGIN_T + h - (v - v_range.0) / (v_range.1 - v_range.0) * h;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">
<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##,
        MARGIN_L + w + 20.0,
        MARGIN_T + h + 50.0
    );
    let res = (points.len() as f64).sqrt().max(2.0);
    let arrow = 0.4 * w / res;
    for p in points {
        // Direction in screen coordinates; magnitudes differ by orders between axes.
        let dx = p.di_s / (i_s_range.1 - i_s_range.0) * w;
        let dy = -p.dv / (v_range.1 - v_range.0) * h;
        let norm = dx.hypot(dy);
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let (x0, y0) = (x(p.i_s), y(p.v));
        let _ = writeln!(
            out,
            r##"<line x1="{x0:.1}" y1="{y0:.1}" x2="{:.1}" y2="{:.1}" stroke="#1f77b4"/>"##,
            x0 + arrow * dx / norm,
            y0 + arrow * dy / norm
        );
    }
    for (v, dash) in [(boundary.bregman, r#" stroke-dasharray="6,4""#), (boundary.krasovskii, "")] {
        if let Some(v) = v.filter(|v| *v >= v_range.0 && *v <= v_range.1) {
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_L}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="#d62728" stroke-width="1.5"{dash}/>"##,
                y(v),
                MARGIN_L + w,
                y(v)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">Is (A)</text>
<text x="20" y="{}" font-size="12">V (V)</text>
</svg>"#,
        MARGIN_L + w / 2.0,
        MARGIN_T + h + 35.0,
        MARGIN_T + h / 2.0
    );
    out
}

pub fn write_field_svg(
    points: &[FieldPoint],
    boundary: &RegionBoundary,
    i_s_range: (f64, f64),
    v_range: (f64, f64),
    dir: &Path,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("field.svg");
    fs::write(&path, field_svg(points, boundary, i_s_range, v_range)).map_err(io_err(&path))?;
    Ok(path)
}
