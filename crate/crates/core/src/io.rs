//! CSV emission and loading.
//!
//! Floats are written in shortest round-trip form, so anything written here
//! reads back bit-for-bit.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::adjoint::{extract_adjoint_measures, hamiltonian_v1, node_control, node_residuals, CostateBundle};
use crate::error::{Error, Result};
use crate::forward::{ControlSignal, TrajectoryBundle};
use crate::measure::ParticleMeasure;
use crate::model::Model;

fn header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

fn record<W: Write>(out: &mut csv::Writer<W>, values: impl IntoIterator<Item = f64>) -> Result<()> {
    out.write_record(values.into_iter().map(|v| v.to_string()))?;
    Ok(())
}

/// `x_0,..,x_{n-1},weight`, one row per atom.
pub fn write_measure<W: Write>(mu: &ParticleMeasure, sink: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(header("x_", mu.dim()).chain(["weight".to_string()]))?;
    for (x, w) in mu.atoms() {
        record(&mut out, x.iter().copied().chain([w]))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_measure(mu: &ParticleMeasure, path: &Path) -> Result<()> {
    to_file(path, |sink| write_measure(mu, sink))
}

/// Column positions of `x_0..x_{n-1}` in a header.
fn coordinate_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut columns = Vec::new();
    while let Some(c) = headers.iter().position(|h| h.trim() == format!("{prefix}{}", columns.len())) {
        columns.push(c);
    }
    if columns.is_empty() {
        return Err(Error::InvalidMeasure(format!("no {prefix}0 column in header")));
    }
    Ok(columns)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::InvalidMeasure(format!("missing column '{name}'")))
}

fn parse(field: Option<&str>, line: usize) -> Result<f64> {
    let text = field.unwrap_or("").trim();
    text.parse().map_err(|_| Error::InvalidMeasure(format!("line {line}: cannot parse '{text}' as a number")))
}

pub fn read_measure<R: std::io::Read>(source: R) -> Result<ParticleMeasure> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let xs = coordinate_columns(&headers, "x_")?;
    let weight = column(&headers, "weight")?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        for &c in &xs {
            points.push(parse(row.get(c), line + 2)?);
        }
        weights.push(parse(row.get(weight), line + 2)?);
    }
    ParticleMeasure::new(xs.len(), points, weights)
}

pub fn load_measure(path: &Path) -> Result<ParticleMeasure> {
    read_measure(File::open(path)?)
}

/// `t,k,x_0..x_{n-1},y,w` for every node and particle.
pub fn write_trajectory<W: Write>(traj: &TrajectoryBundle, sink: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    let n = traj.dim();
    out.write_record(
        ["t".to_string(), "k".to_string()].into_iter().chain(header("x_", n)).chain(["y".into(), "w".into()]),
    )?;
    for m in 0..=traj.grid().steps() {
        let t = traj.grid().node(m).to_string();
        let (x, y) = (traj.positions(m), traj.masses(m));
        for (k, w) in traj.weights().iter().enumerate() {
            let mut row = vec![t.clone(), k.to_string()];
            row.extend(x[k * n..(k + 1) * n].iter().map(|v| v.to_string()));
            row.push(y[k].to_string());
            row.push(w.to_string());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// The measure `Σ wₖ yₖ δ_{xₖ}` from the `t = 0` rows of a trajectory file.
pub fn read_initial_measure<R: std::io::Read>(source: R) -> Result<ParticleMeasure> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let t = column(&headers, "t")?;
    let xs = coordinate_columns(&headers, "x_")?;
    let (y, w) = (column(&headers, "y")?, column(&headers, "w")?);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if parse(row.get(t), line + 2)? != 0.0 {
            continue;
        }
        for &c in &xs {
            points.push(parse(row.get(c), line + 2)?);
        }
        weights.push(parse(row.get(w), line + 2)? * parse(row.get(y), line + 2)?);
    }
    if weights.is_empty() {
        return Err(Error::InvalidMeasure("trajectory has no t = 0 rows".into()));
    }
    ParticleMeasure::new(xs.len(), points, weights)
}

/// `t,mass,mean_0..,second_moment` per node.
pub fn write_moments<W: Write>(traj: &TrajectoryBundle, sink: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(
        ["t".to_string(), "mass".to_string()]
            .into_iter()
            .chain(header("mean_", traj.dim()))
            .chain(["second_moment".into()]),
    )?;
    for m in 0..=traj.grid().steps() {
        let (mass, mean, second) = traj.measure_unchecked(m).moments();
        record(&mut out, [traj.grid().node(m), mass].into_iter().chain(mean).chain([second]))?;
    }
    out.flush()?;
    Ok(())
}

/// `t,mass` per node.
pub fn write_mass_curve<W: Write>(traj: &TrajectoryBundle, sink: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["t", "mass"])?;
    for (t, mass) in traj.mass_curve() {
        record(&mut out, [t, mass])?;
    }
    out.flush()?;
    Ok(())
}

/// `t,k,p_0..p_{n-1},q` for every node and particle.
pub fn write_costates<W: Write>(costates: &CostateBundle, sink: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    let n = costates.dim();
    out.write_record(["t".to_string(), "k".to_string()].into_iter().chain(header("p_", n)).chain(["q".into()]))?;
    for m in 0..=costates.grid().steps() {
        let t = costates.grid().node(m);
        let (p, q) = (costates.p(m), costates.q(m));
        for (k, qk) in q.iter().enumerate() {
            record(&mut out, [t, k as f64].into_iter().chain(p[k * n..(k + 1) * n].iter().copied()).chain([*qk]))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t,psi_1_total..psi_n_total,xi_total,hamiltonian,residual` per node, with the
/// Hamiltonian at the applied control and the maximum-condition gap over `u_grid`.
pub fn write_adjoint_summary<W: Write>(
    model: &dyn Model,
    u: &ControlSignal,
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    u_grid: &[Vec<f64>],
    sink: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    let n = traj.dim();
    out.write_record(std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("psi_{i}_total"))).chain([
        "xi_total".into(),
        "hamiltonian".into(),
        "residual".into(),
    ]))?;
    let residuals = node_residuals(model, u, traj, costates, u_grid)?;
    for (m, residual) in residuals.into_iter().enumerate() {
        let adjoint = extract_adjoint_measures(traj, costates, m)?;
        let h = hamiltonian_v1(model, node_control(u, m), traj, costates, m)?;
        record(
            &mut out,
            std::iter::once(traj.grid().node(m)).chain(adjoint.psi_totals()).chain([adjoint.xi_total(), h, residual]),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// `t,u_0..u_{m-1}` with `t` the start of each interval.
pub fn write_control<W: Write>(u: &ControlSignal, step_size: f64, sink: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(std::iter::once("t".to_string()).chain(header("u_", u.dim())))?;
    for m in 0..u.steps() {
        record(&mut out, std::iter::once(m as f64 * step_size).chain(u.at(m).iter().copied()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_control<R: std::io::Read>(source: R) -> Result<ControlSignal> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let us = coordinate_columns(&headers, "u_").map_err(|_| Error::InvalidControl("no u_0 column".into()))?;
    let mut values = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        for &c in &us {
            values.push(parse(row.get(c), line + 2).map_err(|e| Error::InvalidControl(e.to_string()))?);
        }
    }
    ControlSignal::new(us.len(), values)
}

/// Writes through a buffered file, creating parent directories as needed.
pub fn to_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(std::io::BufWriter<File>) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write(std::io::BufWriter::new(File::create(path)?))
}
