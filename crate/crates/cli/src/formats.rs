//! On-disk formats: systems and initial conditions as JSON, modes as JSON or
//! text, trajectories as CSV with 17 significant digits.

use std::io::{self, Write};

use gyromodal::complexmode::{is_classical_mode, real_to_complex};
use gyromodal::nalgebra::{DMatrix, DVector};
use gyromodal::spectral::modal_basis;
use gyromodal::{GyroError, StateVector, SystemMatrices};
use serde::{Deserialize, Serialize};

use crate::{CliError, Exit};

/// Tolerance for the structural checks applied to matrices read from files.
pub const VALIDATION_TOL: f64 = 1e-10;

/// Relative tolerance for reporting a mode as classical.
pub const CLASSICAL_TOL: f64 = 1e-8;

fn parse_json<'a, T: Deserialize<'a>>(what: &str, text: &'a str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::new(
            Exit::Validation,
            format!(
                "malformed {what} at line {}, column {}: {e}",
                e.line(),
                e.column()
            ),
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    /// Equilibrium the matrices were linearized at; carried along, never used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_star: Option<Vec<f64>>,
}

fn to_matrix(name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, GyroError> {
    if rows.len() != n {
        return Err(GyroError::DimensionMismatch {
            what: format!("rows of {name}"),
            expected: n,
            found: rows.len(),
        });
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(GyroError::DimensionMismatch {
            what: format!("row {i} of {name}"),
            expected: n,
            found: row.len(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

impl SystemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        parse_json("system file", text)
    }

    pub fn to_system(&self) -> Result<SystemMatrices, CliError> {
        if self.n == 0 {
            return Err(CliError::new(Exit::Validation, "system file needs n >= 1"));
        }
        if let Some(q) = &self.q_star {
            if q.len() != self.n {
                return Err(GyroError::DimensionMismatch {
                    what: "q_star".into(),
                    expected: self.n,
                    found: q.len(),
                }
                .into());
            }
        }
        let a = to_matrix("A", &self.a, self.n)?;
        let b = to_matrix("B", &self.b, self.n)?;
        let c = to_matrix("C", &self.c, self.n)?;
        Ok(SystemMatrices::new(a, b, c, VALIDATION_TOL)?)
    }

    pub fn from_system(sys: &SystemMatrices) -> Self {
        Self {
            n: sys.dim(),
            a: to_rows(sys.a()),
            b: to_rows(sys.b()),
            c: to_rows(sys.c()),
            q_star: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcFile {
    pub eta0: Vec<f64>,
    pub etadot0: Vec<f64>,
}

impl IcFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        parse_json("initial-condition file", text)
    }

    pub fn to_state(&self, n: usize) -> Result<StateVector, CliError> {
        for (what, v) in [("eta0", &self.eta0), ("etadot0", &self.etadot0)] {
            if v.len() != n {
                return Err(GyroError::DimensionMismatch {
                    what: what.into(),
                    expected: n,
                    found: v.len(),
                }
                .into());
            }
        }
        Ok(StateVector::new(
            DVector::from_vec(self.eta0.clone()),
            DVector::from_vec(self.etadot0.clone()),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub omega: f64,
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub classical: bool,
}

/// Complex modes `z = h + i r`, one per pair of the gauged real basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesFile {
    pub frequencies: Vec<f64>,
    pub modes: Vec<ModeEntry>,
}

impl ModesFile {
    pub fn from_system(sys: &SystemMatrices) -> Result<Self, GyroError> {
        let mut modes = Vec::with_capacity(sys.dim());
        for pair in modal_basis(sys)? {
            let mode = real_to_complex(&pair)?;
            modes.push(ModeEntry {
                omega: mode.omega,
                h: mode.h().iter().cloned().collect(),
                r: mode.r().iter().cloned().collect(),
                classical: is_classical_mode(sys, &mode, CLASSICAL_TOL),
            });
        }
        Ok(Self {
            frequencies: modes.iter().map(|m| m.omega).collect(),
            modes,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        parse_json("modes file", text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("modes serialize");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, m) in self.modes.iter().enumerate() {
            out.push_str(&format!(
                "mode {} omega={:.16e} classical={}\n",
                k + 1,
                m.omega,
                m.classical
            ));
            for (label, v) in [("h", &m.h), ("r", &m.r)] {
                let cells: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
                out.push_str(&format!("  {label} = [{}]\n", cells.join(", ")));
            }
        }
        out
    }
}

/// One CSV row: `t`, η, η̇ and energy, optionally followed by the same
/// columns of a second trajectory.
pub struct TrajectoryRow<'a> {
    pub t: f64,
    pub state: &'a StateVector,
    pub energy: f64,
    pub extra: Option<(&'a StateVector, f64)>,
}

pub fn trajectory_header(n: usize, with_extra: bool) -> String {
    let mut cols = vec!["t".to_string()];
    let block = |prefix: &str| {
        let mut c: Vec<String> = (1..=n).map(|i| format!("{prefix}eta_{i}")).collect();
        c.extend((1..=n).map(|i| format!("{prefix}etadot_{i}")));
        c.push(format!("{prefix}energy"));
        c
    };
    cols.extend(block(""));
    if with_extra {
        cols.extend(block("rk4_"));
    }
    cols.join(",")
}

fn push_state(cells: &mut Vec<String>, state: &StateVector, energy: f64) {
    cells.extend(state.eta.iter().map(|x| format!("{x:.16e}")));
    cells.extend(state.etadot.iter().map(|x| format!("{x:.16e}")));
    cells.push(format!("{energy:.16e}"));
}

pub fn write_trajectory<'a>(
    out: &mut dyn Write,
    n: usize,
    rows: impl IntoIterator<Item = TrajectoryRow<'a>>,
    with_extra: bool,
) -> io::Result<()> {
    writeln!(out, "{}", trajectory_header(n, with_extra))?;
    for row in rows {
        let mut cells = vec![format!("{:.16e}", row.t)];
        push_state(&mut cells, row.state, row.energy);
        if let Some((s, e)) = row.extra {
            push_state(&mut cells, s, e);
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
