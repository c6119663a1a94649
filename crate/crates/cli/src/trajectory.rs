//! Trajectory CSV files.
//!
//! The header is `step,dt,z` optionally followed by the ground-truth columns
//! `x_pos,x_vel` and then the label columns `active_v,active_w` (zero-based
//! cluster indices). Floats are written in Rust's shortest round-trip form,
//! so exporting and re-reading a trajectory reproduces it bit for bit. Lines
//! starting with `#` are comments.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use gsf_core::state_space::check_dt;
use gsf_core::{ModelIndex, TimeGrid, Trajectory};
use nalgebra::DVector;

use crate::error::{CliError, Result};

const BASE: [&str; 3] = ["step", "dt", "z"];
const TRUTH: [&str; 2] = ["x_pos", "x_vel"];
const LABELS: [&str; 2] = ["active_v", "active_w"];

/// Writes `traj` (2-state, scalar-measurement) as CSV. `preamble` lines are
/// written first and must already carry their `#`.
pub fn write_trajectory<W: Write>(traj: &Trajectory, preamble: &str, out: W) -> Result<()> {
    traj.validate()?;
    let scalar = traj.measurements.iter().all(|z| z.len() == 1);
    let two_state = traj.states.as_ref().is_none_or(|s| s.iter().all(|x| x.len() == 2));
    if !(scalar && two_state) {
        return Err(gsf_core::Error::Dimension("trajectory CSV holds 2-state, scalar-measurement runs".into()).into());
    }
    let mut out = out;
    out.write_all(preamble.as_bytes())
        .map_err(|e| CliError::io("<trajectory>", e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<&str> = BASE.to_vec();
    if traj.states.is_some() {
        header.extend(TRUTH);
    }
    if traj.labels.is_some() {
        header.extend(LABELS);
    }
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![k.to_string(), traj.grid.dt(k).to_string(), traj.measurements[k][0].to_string()];
        if let Some(states) = &traj.states {
            row.push(states[k][0].to_string());
            row.push(states[k][1].to_string());
        }
        if let Some(labels) = &traj.labels {
            row.push(labels[k].i.to_string());
            row.push(labels[k].j.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io("<trajectory>", e))?;
    Ok(())
}

pub fn trajectory_to_string(traj: &Trajectory) -> Result<String> {
    let mut buf = Vec::new();
    write_trajectory(traj, "", &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is ASCII"))
}

/// Reads a trajectory file.
pub fn ingest_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_trajectory(file, &path.display().to_string())
}

/// Parses trajectory CSV from `input`; `source_name` labels error messages.
pub fn parse_trajectory<R: Read>(input: R, source_name: &str) -> Result<Trajectory> {
    let schema = |line: u64, message: String| CliError::Schema {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let header_line = header.position().map_or(1, |p| p.line());
    let names: Vec<&str> = header.iter().collect();
    let (has_truth, has_labels) = match names.as_slice() {
        ["step", "dt", "z"] => (false, false),
        ["step", "dt", "z", "x_pos", "x_vel"] => (true, false),
        ["step", "dt", "z", "active_v", "active_w"] => (false, true),
        ["step", "dt", "z", "x_pos", "x_vel", "active_v", "active_w"] => (true, true),
        _ => {
            return Err(schema(
                header_line,
                format!(
                    "header `{}` does not match `step,dt,z[,x_pos,x_vel][,active_v,active_w]`",
                    names.join(",")
                ),
            ))
        }
    };

    let mut dts = Vec::new();
    let mut measurements = Vec::new();
    let mut states = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(schema(line, format!("expected {} fields, found {}", names.len(), record.len())));
        }
        let float = |col: usize| -> Result<f64> {
            let v = &record[col];
            let x: f64 = v
                .parse()
                .map_err(|_| schema(line, format!("{}: `{v}` is not a number", names[col])))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(schema(line, format!("{}: `{v}` is not finite", names[col])))
            }
        };
        let index = |col: usize| -> Result<usize> {
            let v = &record[col];
            v.parse()
                .map_err(|_| schema(line, format!("{}: `{v}` is not a nonnegative integer", names[col])))
        };
        let step = index(0)?;
        if step != dts.len() {
            return Err(schema(line, format!("step {step} out of sequence (expected {})", dts.len())));
        }
        let dt = float(1)?;
        check_dt(dt).map_err(|reason| schema(line, reason))?;
        dts.push(dt);
        measurements.push(DVector::from_element(1, float(2)?));
        let mut col = 3;
        if has_truth {
            states.push(DVector::from_vec(vec![float(col)?, float(col + 1)?]));
            col += 2;
        }
        if has_labels {
            labels.push(ModelIndex::new(index(col)?, index(col + 1)?));
        }
    }
    if dts.is_empty() {
        return Err(schema(header_line, "no data rows".into()));
    }
    let traj = Trajectory {
        states: has_truth.then_some(states),
        measurements,
        labels: has_labels.then_some(labels),
        grid: TimeGrid::new(dts)?,
    };
    traj.validate()?;
    Ok(traj)
}
