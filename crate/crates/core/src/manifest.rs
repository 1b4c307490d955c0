//! Plain-text sidecars that record an augmentation so it can be replayed.
//!
//! ```text
//! layermix-manifest v1
//! op shuffle
//! axis D
//! p 2
//! rows 4
//! cols 3
//! column 0 2 1 3
//! column 1 0 3 2
//! column 3 1 2 0
//! ```
//!
//! Each `column` line lists `R[0, j] .. R[rows − 1, j]`. A displacement
//! manifest instead carries `n`, `k`, `batch` and one `swap b layer u v` line
//! per exchanged location. `input <name>` lines name the files the plan was
//! applied to, in order.

use std::fmt::Write;

use crate::displace::Location;
use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::shuffle::{ShuffleMatrix, ShufflePlan};

const HEADER: &str = "layermix-manifest v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisplaceRecord {
    pub axis: Axis,
    pub thickness: usize,
    pub grid: usize,
    pub top_k: usize,
    pub batch: usize,
    pub swaps: Vec<Location>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Plan {
    Shuffle(ShufflePlan),
    Displace(DisplaceRecord),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub plan: Plan,
    pub inputs: Vec<String>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("manifest line {line}: {msg}"))
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        match &self.plan {
            Plan::Shuffle(plan) => {
                let m = plan.matrix();
                let _ = write!(
                    out,
                    "op shuffle\naxis {}\np {}\nrows {}\ncols {}\n",
                    plan.axis(),
                    plan.thickness(),
                    m.rows(),
                    m.cols()
                );
                for j in 0..m.cols() {
                    let col: Vec<String> = m.column(j).iter().map(usize::to_string).collect();
                    let _ = writeln!(out, "column {}", col.join(" "));
                }
            }
            Plan::Displace(r) => {
                let _ = write!(
                    out,
                    "op displace\naxis {}\np {}\nn {}\nk {}\nbatch {}\n",
                    r.axis, r.thickness, r.grid, r.top_k, r.batch
                );
                for s in &r.swaps {
                    let _ = writeln!(out, "swap {} {} {} {}", s.batch, s.layer, s.u, s.v);
                }
            }
        }
        for name in &self.inputs {
            let _ = writeln!(out, "input {name}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(bad(1, format!("expected `{HEADER}`"))),
        }
        let mut op = None;
        let mut axis = None;
        let (mut p, mut n, mut k, mut rows, mut cols, mut batch) = (None, None, None, None, None, None);
        let mut columns = Vec::new();
        let mut swaps = Vec::new();
        let mut inputs = Vec::new();
        for (no, line) in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let rest = rest.trim();
            let num = |s: &str| s.parse::<usize>().map_err(|e| bad(no, format!("{s:?}: {e}")));
            let nums = |s: &str| s.split_whitespace().map(num).collect::<Result<Vec<_>>>();
            match key {
                "op" => op = Some(rest.to_string()),
                "axis" => axis = Some(rest.parse::<Axis>().map_err(|e| bad(no, e))?),
                "p" => p = Some(num(rest)?),
                "n" => n = Some(num(rest)?),
                "k" => k = Some(num(rest)?),
                "rows" => rows = Some(num(rest)?),
                "cols" => cols = Some(num(rest)?),
                "batch" => batch = Some(num(rest)?),
                "column" => columns.push(nums(rest)?),
                "swap" => match nums(rest)?[..] {
                    [batch, layer, u, v] => swaps.push(Location { batch, layer, u, v }),
                    _ => return Err(bad(no, "swap needs four indices")),
                },
                "input" => inputs.push(rest.to_string()),
                other => return Err(bad(no, format!("unknown key {other:?}"))),
            }
        }
        let need =
            |v: Option<usize>, what: &str| v.ok_or_else(|| Error::Config(format!("manifest is missing `{what}`")));
        let axis = axis.ok_or_else(|| Error::Config("manifest is missing `axis`".into()))?;
        let plan = match op.as_deref() {
            Some("shuffle") => {
                let (rows, cols) = (need(rows, "rows")?, need(cols, "cols")?);
                if columns.len() != cols || columns.iter().any(|c| c.len() != rows) {
                    return Err(Error::Config(format!("manifest needs {cols} columns of {rows} entries")));
                }
                Plan::Shuffle(ShufflePlan::new(axis, need(p, "p")?, ShuffleMatrix::from_columns(columns)?)?)
            }
            Some("displace") => Plan::Displace(DisplaceRecord {
                axis,
                thickness: need(p, "p")?,
                grid: need(n, "n")?,
                top_k: need(k, "k")?,
                batch: need(batch, "batch")?,
                swaps,
            }),
            other => return Err(Error::Config(format!("unknown manifest op {other:?}"))),
        };
        Ok(Manifest { plan, inputs })
    }
}
