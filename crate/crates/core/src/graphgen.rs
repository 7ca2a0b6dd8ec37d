//! Finite graphs generated from graphons.
//!
//! Three generators are provided: point evaluation at grid midpoints,
//! piecewise integration of the graphon over grid cells, and Bernoulli
//! sampling of unweighted edges. All of them zero the diagonal.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graphon::{read_matrix_csv, Graphon, Partition, StepGraphon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Evaluated,
    Integrated,
    Bernoulli,
    External,
}

/// Weighted undirected graph with its shift operator and generating grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    shift: DMatrix<f64>,
    grid: Partition,
    provenance: Provenance,
}

impl Graph {
    pub fn new(shift: DMatrix<f64>, grid: Partition, provenance: Provenance) -> Result<Self> {
        let n = shift.nrows();
        if shift.ncols() != n || n == 0 {
            return Err(invalid(format!(
                "shift operator must be square and non-empty, got {}x{}",
                shift.nrows(),
                shift.ncols()
            )));
        }
        if grid.len() != n {
            return Err(invalid(format!(
                "grid has {} cells for a {n}-node graph",
                grid.len()
            )));
        }
        if let Some(bad) = shift.iter().find(|w| !w.is_finite()) {
            return Err(invalid(format!("non-finite shift entry {bad}")));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if shift[(i, j)] != shift[(j, i)] {
                    return Err(invalid(format!("shift operator not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            shift,
            grid,
            provenance,
        })
    }

    /// Wraps an externally built adjacency on the uniform grid.
    pub fn from_adjacency(shift: DMatrix<f64>) -> Result<Self> {
        let grid = Partition::uniform(shift.nrows().max(1))?;
        Self::new(shift, grid, Provenance::External)
    }

    pub fn len(&self) -> usize {
        self.shift.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    pub fn shift(&self) -> &DMatrix<f64> {
        &self.shift
    }

    pub fn grid(&self) -> &Partition {
        &self.grid
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Weighted degrees (row sums).
    pub fn degrees(&self) -> Vec<f64> {
        self.shift.row_iter().map(|r| r.sum()).collect()
    }

    /// Subgraph induced on `nodes`, kept in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        if nodes.is_empty() || nodes.iter().any(|&v| v >= self.len()) {
            return Err(invalid("induced subgraph needs valid, non-empty node list"));
        }
        let k = nodes.len();
        let shift = DMatrix::from_fn(k, k, |a, b| self.shift[(nodes[a], nodes[b])]);
        Graph::new(shift, Partition::uniform(k)?, self.provenance)
    }

    /// Writes `<path>` as a headerless CSV adjacency and `<path>.json` as the
    /// metadata sidecar.
    pub fn export(&self, path: impl AsRef<Path>, meta: &GraphMeta) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for row in self.shift.row_iter() {
            let line: Vec<String> = row.iter().map(|w| w.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        let sidecar = GraphSidecar {
            n: self.len(),
            grid: self.grid.breakpoints().to_vec(),
            provenance: self.provenance,
            kernel: meta.kernel.clone(),
            seed: meta.seed,
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Reads a graph written by [`Graph::export`]. Without a sidecar the
    /// graph is treated as external on the uniform grid.
    pub fn import(path: impl AsRef<Path>) -> Result<(Graph, GraphMeta)> {
        let path = path.as_ref();
        let shift = read_matrix_csv(path)?;
        let side = sidecar_path(path);
        if !side.exists() {
            return Ok((Graph::from_adjacency(shift)?, GraphMeta::default()));
        }
        let sidecar: GraphSidecar = serde_json::from_str(&fs::read_to_string(side)?)?;
        if sidecar.n != shift.nrows() {
            return Err(invalid(format!(
                "sidecar declares {} nodes, matrix has {}",
                sidecar.n,
                shift.nrows()
            )));
        }
        let grid = Partition::from_breakpoints(sidecar.grid)?;
        let graph = Graph::new(shift, grid, sidecar.provenance)?;
        Ok((
            graph,
            GraphMeta {
                kernel: sidecar.kernel,
                seed: sidecar.seed,
            },
        ))
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Metadata stored next to an exported graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphMeta {
    pub kernel: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct GraphSidecar {
    n: usize,
    grid: Vec<f64>,
    provenance: Provenance,
    kernel: Option<String>,
    seed: Option<u64>,
}

fn symmetric_from_upper(n: usize, upper: impl Fn(usize, usize) -> f64 + Sync) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| upper(i, j)).collect())
        .collect();
    let mut s = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, w) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            s[(i, j)] = w;
            s[(j, i)] = w;
        }
    }
    s
}

/// `S_ij = W(rho_i, rho_j)` at the cell midpoints, zero diagonal.
pub fn sample_by_evaluation(w: &Graphon, grid: &Partition) -> Result<Graph> {
    let points = grid.midpoints();
    let shift = symmetric_from_upper(grid.len(), |i, j| w.value(points[i], points[j]));
    Graph::new(shift, grid.clone(), Provenance::Evaluated)
}

/// `S_ij = (1/Delta) * integral of W over cell_i x cell_j`, zero diagonal.
///
/// Closed-form kernels use the composite midpoint rule with
/// `quadrature_points` nodes per cell and axis; the sum over each cell pair
/// runs in a fixed order. Step graphons are integrated exactly through cell
/// overlaps.
pub fn sample_by_integration(
    w: &Graphon,
    grid: &Partition,
    quadrature_points: usize,
) -> Result<Graph> {
    if quadrature_points == 0 {
        return Err(invalid("quadrature_points must be at least 1"));
    }
    let n = grid.len();
    if let Some(i) = (0..n).find(|&i| !(grid.width(i) > 0.0)) {
        return Err(invalid(format!("degenerate cell {i} of zero width")));
    }
    let shift = match w {
        Graphon::Step(step) => integrate_step(step, grid),
        Graphon::Kernel(_) => {
            let q = quadrature_points;
            let nodes: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let (lo, h) = (grid.lower(i), grid.width(i) / q as f64);
                    (0..q)
                        .map(|a| (lo + (a as f64 + 0.5) * h).clamp(0.0, 1.0))
                        .collect()
                })
                .collect();
            let count = (q * q) as f64;
            symmetric_from_upper(n, |i, j| {
                let mut sum = 0.0;
                for &u in &nodes[i] {
                    for &v in &nodes[j] {
                        sum += w.value(u, v);
                    }
                }
                sum / count
            })
        }
    };
    Graph::new(shift, grid.clone(), Provenance::Integrated)
}

fn integrate_step(step: &StepGraphon, grid: &Partition) -> DMatrix<f64> {
    let n = grid.len();
    let blocks = step.partition();
    let m = blocks.len();
    // overlap[i][k] = |cell_i ∩ block_k| / |cell_i|
    let mut overlap = DMatrix::zeros(n, m);
    for i in 0..n {
        let (lo, hi) = (grid.lower(i), grid.upper(i));
        for k in 0..m {
            let len = hi.min(blocks.upper(k)) - lo.max(blocks.lower(k));
            if len > 0.0 {
                overlap[(i, k)] = len / grid.width(i);
            }
        }
    }
    let full = &overlap * step.blocks() * overlap.transpose();
    symmetric_from_upper(n, |i, j| full[(i, j)].clamp(0.0, 1.0))
}

/// Unweighted graph with edge `{i,j}` present with probability
/// `kappa * W(u_i, u_j)`. Latent points are the grid midpoints, or sorted
/// uniform draws when `random_points` is set. Deterministic in `seed`.
pub fn sample_bernoulli(
    w: &Graphon,
    grid: &Partition,
    kappa: f64,
    seed: u64,
    random_points: bool,
) -> Result<Graph> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(invalid(format!("kappa must lie in (0, 1], got {kappa}")));
    }
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = if random_points {
        let mut p: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        p.sort_by(f64::total_cmp);
        p
    } else {
        grid.midpoints()
    };
    let mut shift = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = kappa * w.value(points[i], points[j]);
            if rng.gen::<f64>() < p {
                shift[(i, j)] = 1.0;
                shift[(j, i)] = 1.0;
            }
        }
    }
    Graph::new(shift, grid.clone(), Provenance::Bernoulli)
}
