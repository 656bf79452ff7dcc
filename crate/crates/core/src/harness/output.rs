//! CSV, JSON and plotting-script output, and the CSV readers used by replay.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every `f64` exactly. Lines end in `\n`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::config::OutputConfig;
use super::experiment::ExperimentResult;
use crate::dynamics::{Trajectory, TrueState};
use crate::liegroup::{GeneralizedVelocity, Mat3, Pose, Rotation, Vec3};
use crate::measurement::{DirMatrix, MeasurementFrame, WeightRule};

pub const TRUTH_FILE: &str = "truth.csv";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.py";

pub const TRUTH_HEADER: [&str; 19] = [
    "t", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "b_x", "b_y", "b_z", "omega_x", "omega_y",
    "omega_z", "v_x", "v_y", "v_z",
];

pub const ESTIMATE_HEADER: [&str; 25] = [
    "t",
    "rhat11",
    "rhat12",
    "rhat13",
    "rhat21",
    "rhat22",
    "rhat23",
    "rhat31",
    "rhat32",
    "rhat33",
    "bhat_x",
    "bhat_y",
    "bhat_z",
    "omegahat_x",
    "omegahat_y",
    "omegahat_z",
    "vhat_x",
    "vhat_y",
    "vhat_z",
    "phi_omega_x",
    "phi_omega_y",
    "phi_omega_z",
    "phi_v_x",
    "phi_v_y",
    "phi_v_z",
];

pub const DIAGNOSTICS_HEADER: [&str; 12] = [
    "t",
    "principal_angle",
    "x_norm",
    "omega_err_norm",
    "vel_err_norm",
    "u_rot",
    "u_trans",
    "t_kin",
    "v_total",
    "dv_direct",
    "dv_closed",
    "solver_iters",
];

/// Fixed leading columns of the measurement file; then `n` and the
/// direction columns `d{j}_x..z` for `j < n`, then `l{j}_x..z`.
pub const MEASUREMENTS_PREFIX: [&str; 14] = [
    "t", "p_bar_x", "p_bar_y", "p_bar_z", "a_bar_x", "a_bar_y", "a_bar_z", "omega_m_x", "omega_m_y", "omega_m_z",
    "v_m_x", "v_m_y", "v_m_z", "n",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} line {line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> OutputError {
    OutputError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_vec(row: &mut Vec<String>, v: &Vec3) {
    row.extend(v.iter().map(|x| f(*x)));
}

fn push_mat(row: &mut Vec<String>, m: &Mat3) {
    for r in 0..3 {
        for c in 0..3 {
            row.push(f(m[(r, c)]));
        }
    }
}

fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<(), OutputError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(std::io::BufWriter::new(file));
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn write_truth_csv(path: &Path, truth: &Trajectory) -> Result<(), OutputError> {
    let rows = truth.states.iter().map(|s| {
        let mut row = vec![f(s.t)];
        push_mat(&mut row, s.pose.rot.matrix());
        push_vec(&mut row, &s.pose.trans);
        push_vec(&mut row, &s.xi.omega);
        push_vec(&mut row, &s.xi.vel);
        row
    });
    write_rows(path, &header(&TRUTH_HEADER), rows)
}

pub fn write_estimate_csv(path: &Path, result: &ExperimentResult) -> Result<(), OutputError> {
    let rows = result.estimates.iter().map(|s| {
        let mut row = vec![f(s.t)];
        push_mat(&mut row, s.g_hat.rot.matrix());
        push_vec(&mut row, &s.g_hat.trans);
        push_vec(&mut row, &s.xi_hat.omega);
        push_vec(&mut row, &s.xi_hat.vel);
        push_vec(&mut row, &s.phi.omega);
        push_vec(&mut row, &s.phi.vel);
        row
    });
    write_rows(path, &header(&ESTIMATE_HEADER), rows)
}

pub fn write_diagnostics_csv(path: &Path, result: &ExperimentResult) -> Result<(), OutputError> {
    let rows = result.diagnostics.iter().map(|d| {
        vec![
            f(d.t),
            f(d.principal_angle),
            f(d.x_norm),
            f(d.omega_err_norm),
            f(d.vel_err_norm),
            f(d.u_rot),
            f(d.u_trans),
            f(d.t_kin),
            f(d.v_total),
            f(d.dv_direct),
            f(d.dv_closed),
            d.solver_iters.to_string(),
        ]
    });
    write_rows(path, &header(&DIAGNOSTICS_HEADER), rows)
}

pub fn measurements_header(max_columns: usize) -> Vec<String> {
    let mut h = header(&MEASUREMENTS_PREFIX);
    for prefix in ["d", "l"] {
        for j in 0..max_columns {
            for axis in ["x", "y", "z"] {
                h.push(format!("{prefix}{j}_{axis}"));
            }
        }
    }
    h
}

/// Rows have `14 + 6n` fields, so a changing visible set gives ragged rows.
pub fn write_measurements_csv(path: &Path, frames: &[MeasurementFrame]) -> Result<(), OutputError> {
    let max_n = frames.iter().map(|fr| fr.n_columns()).max().unwrap_or(0);
    let rows = frames.iter().map(|fr| {
        let mut row = vec![f(fr.t())];
        push_vec(&mut row, fr.p_bar());
        push_vec(&mut row, fr.a_bar_m());
        push_vec(&mut row, &fr.xi_m().omega);
        push_vec(&mut row, &fr.xi_m().vel);
        row.push(fr.n_columns().to_string());
        for m in [fr.d(), fr.l_m()] {
            for col in m.column_iter() {
                row.extend(col.iter().map(|x| f(*x)));
            }
        }
        row
    });
    write_rows(path, &measurements_header(max_n), rows)
}

pub fn write_summary_json(path: &Path, result: &ExperimentResult) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(&result.summary).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_plot_script(path: &Path) -> Result<(), OutputError> {
    let mut file = File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(PLOT_SCRIPT.as_bytes()).map_err(|e| io_err(path, e))
}

/// Writes every enabled output into `dir` and returns the paths written.
pub fn emit_outputs(result: &ExperimentResult, out: &OutputConfig, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    let mut written = Vec::new();
    if !out.any() {
        return Ok(written);
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut emit = |enabled: bool, name: &str, f: &dyn Fn(&Path) -> Result<(), OutputError>| {
        if enabled {
            let p = dir.join(name);
            f(&p)?;
            written.push(p);
        }
        Ok::<(), OutputError>(())
    };
    emit(out.truth_csv, TRUTH_FILE, &|p| write_truth_csv(p, &result.truth))?;
    emit(out.estimate_csv, ESTIMATE_FILE, &|p| write_estimate_csv(p, result))?;
    emit(out.diagnostics_csv, DIAGNOSTICS_FILE, &|p| write_diagnostics_csv(p, result))?;
    emit(out.measurements_csv, MEASUREMENTS_FILE, &|p| write_measurements_csv(p, &result.frames))?;
    emit(out.summary_json, SUMMARY_FILE, &|p| write_summary_json(p, result))?;
    emit(out.plot_script, PLOT_FILE, &write_plot_script)?;
    Ok(written)
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>), OutputError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(std::io::BufReader::new(file));
    let header = r.headers().map_err(|e| io_err(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| io_err(path, e))?);
    }
    Ok((header, rows))
}

fn parse_fields(path: &Path, line: usize, rec: &csv::StringRecord) -> Result<Vec<f64>, OutputError> {
    rec.iter()
        .map(|s| {
            s.parse::<f64>().map_err(|e| OutputError::Format {
                path: path.to_path_buf(),
                line,
                message: format!("`{s}`: {e}"),
            })
        })
        .collect()
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> OutputError {
    OutputError::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn vec_at(v: &[f64], k: usize) -> Vec3 {
    Vec3::new(v[k], v[k + 1], v[k + 2])
}

pub fn read_truth_csv(path: &Path, h: f64) -> Result<Trajectory, OutputError> {
    let (hdr, rows) = read_records(path)?;
    if hdr != TRUTH_HEADER {
        return Err(format_err(path, 1, "unexpected header"));
    }
    let mut states = Vec::with_capacity(rows.len());
    for (k, rec) in rows.iter().enumerate() {
        let line = k + 2;
        let v = parse_fields(path, line, rec)?;
        if v.len() != TRUTH_HEADER.len() {
            return Err(format_err(path, line, format!("expected {} fields, got {}", TRUTH_HEADER.len(), v.len())));
        }
        let m = Mat3::from_row_slice(&v[1..10]);
        states.push(TrueState {
            pose: Pose::new(Rotation::from_matrix_unchecked(m), vec_at(&v, 10)),
            xi: GeneralizedVelocity::new(vec_at(&v, 13), vec_at(&v, 16)),
            t: v[0],
        });
    }
    if states.is_empty() {
        return Err(format_err(path, 2, "no samples"));
    }
    Ok(Trajectory { states, h })
}

/// Reads frames back; weights are recomputed from `D` with `rule`.
pub fn read_measurements_csv(path: &Path, rule: WeightRule) -> Result<Vec<MeasurementFrame>, OutputError> {
    let (hdr, rows) = read_records(path)?;
    if hdr.len() < MEASUREMENTS_PREFIX.len() || hdr[..MEASUREMENTS_PREFIX.len()] != MEASUREMENTS_PREFIX {
        return Err(format_err(path, 1, "unexpected header"));
    }
    let mut frames = Vec::with_capacity(rows.len());
    for (k, rec) in rows.iter().enumerate() {
        let line = k + 2;
        let v = parse_fields(path, line, rec)?;
        let n_raw = v.get(13).copied().unwrap_or(f64::NAN);
        if !(n_raw >= 0.0 && n_raw.fract() == 0.0) {
            return Err(format_err(path, line, "column count `n` is not a non-negative integer"));
        }
        let n = n_raw as usize;
        let expected = MEASUREMENTS_PREFIX.len() + 6 * n;
        if v.len() != expected {
            return Err(format_err(path, line, format!("expected {expected} fields for n = {n}, got {}", v.len())));
        }
        let base = MEASUREMENTS_PREFIX.len();
        let d = DirMatrix::from_column_slice(&v[base..base + 3 * n]);
        let l_m = DirMatrix::from_column_slice(&v[base + 3 * n..base + 6 * n]);
        let w = rule.weights(&d);
        let frame = MeasurementFrame::new(
            d,
            l_m,
            vec_at(&v, 1),
            vec_at(&v, 4),
            GeneralizedVelocity::new(vec_at(&v, 7), vec_at(&v, 10)),
            w,
            v[0],
        )
        .map_err(|e| format_err(path, line, e.to_string()))?;
        frames.push(frame);
    }
    Ok(frames)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots a filter run: body trajectory and estimation errors.

Usage: python3 plot.py [run_dir]   (defaults to the script's directory)
Writes trajectory.png and errors.png next to the CSV files.
"""
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load(run_dir, name):
    return np.genfromtxt(os.path.join(run_dir, name), delimiter=",", names=True)


def main():
    run_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
    truth = load(run_dir, "truth.csv")
    est = load(run_dir, "estimate.csv")
    diag = load(run_dir, "diagnostics.csv")

    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    ax.plot(truth["b_x"], truth["b_y"], truth["b_z"], label="true")
    ax.plot(est["bhat_x"], est["bhat_y"], est["bhat_z"], "--", label="estimated")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.legend()
    ax.set_title("Trajectory of the body")
    fig.tight_layout()
    fig.savefig(os.path.join(run_dir, "trajectory.png"), dpi=150)

    t = diag["t"]
    panels = [
        ("x_norm", "position error [m]"),
        ("principal_angle", "principal angle [rad]"),
        ("vel_err_norm", "translational velocity error [m/s]"),
        ("omega_err_norm", "angular velocity error [rad/s]"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    for ax, (col, label), tag in zip(axes.flat, panels, "abcd"):
        ax.plot(t, diag[col])
        ax.set_ylabel(label)
        ax.set_title("(%s)" % tag)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(os.path.join(run_dir, "errors.png"), dpi=150)


if __name__ == "__main__":
    main()
"#;
