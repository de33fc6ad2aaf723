//! Text formats.
//!
//! Signal files carry a one-line header followed by comma-separated rows:
//!
//! ```text
//! # rate=50 axes=pos_x,pos_y,vel_x,vel_y,acc_x,acc_y
//! 0.12,-1.3,...
//! ```
//!
//! Trajectory files are rows of `timestamp,x,y[,z]`; lines starting with `#`
//! are ignored. Numbers are written with Rust's shortest round-trip
//! formatting, so a write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{RawTrajectory, Signal};

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| Error::Malformed(format!("line {lineno}: {e} in {f:?}")))
        })
        .collect()
}

fn push_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

pub fn format_signal(sig: &Signal) -> String {
    let mut out = format!("# rate={} axes={}\n", sig.rate(), sig.axes().join(","));
    for row in sig.samples().iter_rows() {
        push_row(&mut out, row);
    }
    out
}

pub fn parse_signal(text: &str) -> Result<Signal> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Malformed("empty signal file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Malformed("missing signal header".into()))?;
    let mut rate = None;
    let mut axes = None;
    for field in header.split_whitespace() {
        if let Some(v) = field.strip_prefix("rate=") {
            rate = Some(
                v.parse::<f64>()
                    .map_err(|e| Error::Malformed(format!("header rate: {e}")))?,
            );
        } else if let Some(v) = field.strip_prefix("axes=") {
            axes = Some(v.split(',').map(str::to_owned).collect::<Vec<_>>());
        }
    }
    let rate = rate.ok_or_else(|| Error::Malformed("header lacks rate=".into()))?;
    let axes = axes.ok_or_else(|| Error::Malformed("header lacks axes=".into()))?;

    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = parse_row(line, i + 1)?;
        if row.len() != axes.len() {
            return Err(Error::Malformed(format!(
                "line {}: {} values for {} axes",
                i + 1,
                row.len(),
                axes.len()
            )));
        }
        data.extend(row);
        rows += 1;
    }
    Signal::new(Matrix::from_vec(rows, axes.len(), data), rate, axes)
}

pub fn format_trajectory(traj: &RawTrajectory) -> String {
    let mut out = String::new();
    let mut row = Vec::with_capacity(traj.dims() + 1);
    for (t, p) in traj.times.iter().zip(traj.points.iter_rows()) {
        row.clear();
        row.push(*t);
        row.extend_from_slice(p);
        push_row(&mut out, &row);
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<RawTrajectory> {
    let mut times = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = parse_row(line, i + 1)?;
        if !(3..=4).contains(&row.len()) {
            return Err(Error::Malformed(format!(
                "line {}: expected timestamp,x,y[,z], got {} fields",
                i + 1,
                row.len()
            )));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Malformed(format!(
                    "line {}: {} fields, earlier rows had {w}",
                    i + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        times.push(row[0]);
        data.extend_from_slice(&row[1..]);
    }
    let dims = width.map_or(0, |w| w - 1);
    if times.is_empty() {
        return Err(Error::Malformed("trajectory has no rows".into()));
    }
    RawTrajectory::from_points(times.clone(), Matrix::from_vec(times.len(), dims, data))
}

pub fn read_signal(path: &Path) -> Result<Signal> {
    parse_signal(&fs::read_to_string(path)?)
}

pub fn write_signal(path: &Path, sig: &Signal) -> Result<()> {
    fs::write(path, format_signal(sig))?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<RawTrajectory> {
    parse_trajectory(&fs::read_to_string(path)?)
}

pub fn write_trajectory(path: &Path, traj: &RawTrajectory) -> Result<()> {
    fs::write(path, format_trajectory(traj))?;
    Ok(())
}
