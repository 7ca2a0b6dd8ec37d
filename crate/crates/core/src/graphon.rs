//! Graphons and graphon signals.
//!
//! A graphon is a symmetric kernel `W: [0,1]^2 -> [0,1]`. Two kinds are
//! supported: closed-form kernels identified by name and parameters, and step
//! functions induced by a finite weighted graph on the uniform partition of
//! the unit interval. Step cells are right-open except the last, which is
//! closed, so every point of `[0,1]` belongs to exactly one cell.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Maximum entrywise asymmetry tolerated when inducing a step graphon.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Ordered breakpoints `0 = rho(1) < ... < rho(N+1) = 1` splitting the unit
/// interval into `N` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    breakpoints: Vec<f64>,
    uniform: bool,
}

impl Partition {
    /// Uniform partition into `n` equal cells.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("partition needs at least one cell"));
        }
        let breakpoints = (0..=n).map(|i| i as f64 / n as f64).collect();
        Ok(Self {
            breakpoints,
            uniform: true,
        })
    }

    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(invalid("partition needs at least two breakpoints"));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(invalid("partition must start at 0 and end at 1"));
        }
        if let Some(w) = breakpoints.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(invalid(format!(
                "degenerate partition cell [{}, {}]",
                w[0], w[1]
            )));
        }
        let n = breakpoints.len() - 1;
        let uniform = breakpoints
            .iter()
            .enumerate()
            .all(|(i, &b)| b == i as f64 / n as f64);
        Ok(Self {
            breakpoints,
            uniform,
        })
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.breakpoints[i]
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.breakpoints[i + 1]
    }

    pub fn width(&self, i: usize) -> f64 {
        self.breakpoints[i + 1] - self.breakpoints[i]
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        if self.uniform {
            (i as f64 + 0.5) / self.len() as f64
        } else {
            0.5 * (self.breakpoints[i] + self.breakpoints[i + 1])
        }
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.midpoint(i)).collect()
    }

    /// Index of the cell containing `u`; cells are right-open, the last one
    /// closed.
    pub fn cell_of(&self, u: f64) -> Result<usize> {
        check_unit(u)?;
        let n = self.len();
        if self.uniform {
            return Ok(((u * n as f64).floor() as usize).min(n - 1));
        }
        // first breakpoint strictly greater than u, minus one
        let idx = self.breakpoints.partition_point(|&b| b <= u);
        Ok(idx.saturating_sub(1).min(n - 1))
    }
}

fn check_unit(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::Domain { value: u })
    }
}

/// Closed-form kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(-beta (x - y)^2)`
    Exponential { beta: f64 },
    /// `x y`
    Bilinear,
    /// `0.5 (x^2 + y^2)`
    Polynomial,
    /// `c` everywhere.
    Constant { value: f64 },
}

impl Kernel {
    /// Builds a kernel from its identifier and parameter vector.
    pub fn from_parts(id: &str, params: &[f64]) -> Result<Self> {
        let kernel = match (id, params) {
            ("exp", [beta]) => Kernel::Exponential { beta: *beta },
            ("bilinear", []) => Kernel::Bilinear,
            ("poly", []) => Kernel::Polynomial,
            ("const", [value]) => Kernel::Constant { value: *value },
            _ => {
                return Err(invalid(format!(
                    "unknown kernel `{id}` with {} parameter(s)",
                    params.len()
                )))
            }
        };
        kernel.validate()?;
        Ok(kernel)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Exponential { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(invalid(format!("exponential kernel needs beta >= 0, got {beta}")))
            }
            Kernel::Constant { value } if !(0.0..=1.0).contains(&value) => Err(invalid(format!(
                "constant kernel value {value} outside [0, 1]"
            ))),
            _ => Ok(()),
        }
    }

    #[inline]
    fn value(&self, u: f64, v: f64) -> f64 {
        match *self {
            Kernel::Exponential { beta } => {
                let d = u - v;
                (-beta * (d * d)).exp()
            }
            Kernel::Bilinear => u * v,
            Kernel::Polynomial => 0.5 * (u * u + v * v),
            Kernel::Constant { value } => value,
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Exponential { beta } => write!(f, "exp:beta={beta}"),
            Kernel::Bilinear => write!(f, "bilinear"),
            Kernel::Polynomial => write!(f, "poly"),
            Kernel::Constant { value } => write!(f, "const:c={value}"),
        }
    }
}

/// Step graphon: block value `B[i][j]` on cell `i x j` of a uniform partition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGraphon {
    blocks: DMatrix<f64>,
    partition: Partition,
}

impl StepGraphon {
    pub fn blocks(&self) -> &DMatrix<f64> {
        &self.blocks
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.blocks.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Graphon {
    Kernel(Kernel),
    Step(StepGraphon),
}

impl Graphon {
    pub fn exponential(beta: f64) -> Result<Self> {
        Kernel::from_parts("exp", &[beta]).map(Graphon::Kernel)
    }

    pub fn bilinear() -> Self {
        Graphon::Kernel(Kernel::Bilinear)
    }

    pub fn polynomial() -> Self {
        Graphon::Kernel(Kernel::Polynomial)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Kernel::from_parts("const", &[value]).map(Graphon::Kernel)
    }

    /// Parses `exp:beta=2.3`, `bilinear`, `poly`, `const:c=0.5` or
    /// `step:<path>`, where the path names an `N x N` CSV matrix.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (id, rest) = spec.split_once(':').unwrap_or((spec, ""));
        if id == "step" {
            if rest.is_empty() {
                return Err(invalid("step graphon needs a matrix path: step:<path>"));
            }
            return Self::from_matrix_file(rest);
        }
        let mut params = Vec::new();
        for item in rest.split(',').filter(|s| !s.is_empty()) {
            let raw = item.split_once('=').map_or(item, |(_, v)| v);
            let value = raw
                .trim()
                .parse::<f64>()
                .map_err(|e| invalid(format!("bad kernel parameter `{item}`: {e}")))?;
            params.push(value);
        }
        Kernel::from_parts(id, &params).map(Graphon::Kernel)
    }

    /// Loads a step graphon from a headerless CSV of `N` rows by `N` columns.
    pub fn from_matrix_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let matrix = read_matrix_csv(path)?;
        Self::induced(&matrix)
    }

    /// Step graphon `W_G(u,v) = sum_ij S_ij chi_i(u) chi_j(v)` on the uniform
    /// partition. `S` must already be scaled into `[0, 1]`.
    pub fn induced(s: &DMatrix<f64>) -> Result<Self> {
        let n = s.nrows();
        if n == 0 || s.ncols() != n {
            return Err(invalid(format!(
                "induced graphon needs a non-empty square matrix, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let w = s[(i, j)];
                if !(0.0..=1.0).contains(&w) {
                    return Err(invalid(format!("entry ({i},{j}) = {w} outside [0, 1]")));
                }
                if (w - s[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(invalid(format!("matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        // store an exactly symmetric copy
        let blocks = DMatrix::from_fn(n, n, |i, j| {
            if i <= j {
                s[(i, j)]
            } else {
                s[(j, i)]
            }
        });
        Ok(Graphon::Step(StepGraphon {
            blocks,
            partition: Partition::uniform(n)?,
        }))
    }

    /// `W(u, v)`; fails if either coordinate lies outside `[0, 1]`.
    pub fn eval(&self, u: f64, v: f64) -> Result<f64> {
        check_unit(u)?;
        check_unit(v)?;
        Ok(self.value(u, v))
    }

    /// Evaluation without the range check; callers guarantee `u, v` in `[0, 1]`.
    #[inline]
    pub(crate) fn value(&self, u: f64, v: f64) -> f64 {
        match self {
            Graphon::Kernel(k) => k.value(u, v),
            Graphon::Step(step) => {
                let n = step.len() as f64;
                let last = step.len() - 1;
                let i = ((u * n).floor() as usize).min(last);
                let j = ((v * n).floor() as usize).min(last);
                step.blocks[(i, j)]
            }
        }
    }

    pub fn as_step(&self) -> Option<&StepGraphon> {
        match self {
            Graphon::Step(s) => Some(s),
            Graphon::Kernel(_) => None,
        }
    }

    /// Short human-readable identifier; step graphons report their block count.
    pub fn describe(&self) -> String {
        match self {
            Graphon::Kernel(k) => k.to_string(),
            Graphon::Step(s) => format!("step:n={}", s.len()),
        }
    }
}

pub(crate) fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: line + 1,
                    message: format!("`{field}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected {n} columns, found {}", row.len()),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// A real-valued function on `[0, 1]`.
#[derive(Clone)]
pub enum GraphonSignal {
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Value `x[i]` on the `i`-th cell of the uniform partition.
    Step(Vec<f64>),
}

impl fmt::Debug for GraphonSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphonSignal::Function(_) => f.write_str("GraphonSignal::Function(..)"),
            GraphonSignal::Step(x) => f.debug_tuple("GraphonSignal::Step").field(x).finish(),
        }
    }
}

impl GraphonSignal {
    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        GraphonSignal::Function(Arc::new(f))
    }

    /// Step signal `X_G(u) = sum_i x_i chi_i(u)` on the uniform partition.
    pub fn induced(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid("induced signal needs at least one value"));
        }
        Ok(GraphonSignal::Step(x.to_vec()))
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        check_unit(u)?;
        Ok(self.value(u))
    }

    #[inline]
    pub(crate) fn value(&self, u: f64) -> f64 {
        match self {
            GraphonSignal::Function(f) => f(u),
            GraphonSignal::Step(x) => {
                let n = x.len();
                x[((u * n as f64).floor() as usize).min(n - 1)]
            }
        }
    }

    /// Values at the midpoints `(a - 0.5) / m`, `a = 1..=m`.
    pub fn sample_midpoints(&self, m: usize) -> Vec<f64> {
        (0..m)
            .map(|a| self.value((a as f64 + 0.5) / m as f64))
            .collect()
    }
}
