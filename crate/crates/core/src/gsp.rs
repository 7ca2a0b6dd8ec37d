//! Graph signal processing on the adjacency shift operator: polynomial
//! filters, the symmetric eigendecomposition and the graph Fourier transform.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::graphgen::Graph;

/// Maximum asymmetry accepted by [`eigendecompose_matrix`].
pub const ASYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues closer than this are treated as one repeated cluster.
pub const CLUSTER_GAP: f64 = 1e-9;
/// Components at or below this magnitude are skipped by the sign rule.
const SIGN_TOL: f64 = 1e-12;
/// Eigenvalues within this multiple of the spectral scale count as zero and
/// are placed at the tail of the non-negative side.
const ZERO_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100_000;

/// Polynomial filter coefficients `h_0, ..., h_{K-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTaps(Vec<f64>);

impl FilterTaps {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("filter needs at least one tap"));
        }
        Ok(Self(taps))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Frequency response `sum_k h_k lambda^k`.
    pub fn response(&self, lambda: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &h| acc * lambda + h)
    }
}

/// `sum_k h_k S^k x` by repeated shifting.
pub fn filter_apply(taps: &FilterTaps, g: &Graph, x: &DVector<f64>) -> Result<DVector<f64>> {
    filter_matrix(taps, g.shift(), x)
}

pub(crate) fn filter_matrix(
    taps: &FilterTaps,
    shift: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != shift.nrows() {
        return Err(invalid(format!(
            "signal length {} does not match {} nodes",
            x.len(),
            shift.nrows()
        )));
    }
    let h = taps.as_slice();
    let mut z = x.clone();
    let mut y = &z * h[0];
    for &hk in &h[1..] {
        z = shift * &z;
        y.axpy(hk, &z, 1.0);
    }
    Ok(y)
}

/// Eigenpairs of a symmetric shift operator in signed order: non-negative
/// eigenvalues in descending order, then negative ones from the most
/// negative upward. Each eigenvector's first non-negligible entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
    clusters: Vec<usize>,
    positive: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, one per column.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, j: usize) -> DVector<f64> {
        self.vectors.column(j).into_owned()
    }

    /// Number of components on the non-negative side (numerical zeros
    /// included), i.e. where the negative side begins.
    pub fn positive_count(&self) -> usize {
        self.positive
    }

    /// Cluster label of each component; equal labels mark numerically
    /// repeated eigenvalues.
    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }

    pub fn is_repeated(&self, j: usize) -> bool {
        let c = self.clusters[j];
        (j > 0 && self.clusters[j - 1] == c) || self.clusters.get(j + 1) == Some(&c)
    }

    /// Indices sharing component `j`'s cluster.
    pub fn cluster_members(&self, j: usize) -> Vec<usize> {
        let c = self.clusters[j];
        (0..self.len()).filter(|&i| self.clusters[i] == c).collect()
    }

    /// Keeps only the listed components, preserving the given order.
    pub(crate) fn select(&self, indices: &[usize]) -> Spectrum {
        let eigenvalues: Vec<f64> = indices.iter().map(|&j| self.eigenvalues[j]).collect();
        let vectors = DMatrix::from_fn(self.vectors.nrows(), indices.len(), |r, c| {
            self.vectors[(r, indices[c])]
        });
        Spectrum {
            clusters: cluster_labels(&eigenvalues),
            positive: indices.iter().filter(|&&j| j < self.positive).count(),
            eigenvalues,
            vectors,
        }
    }

    /// Writes one row per component: eigenvalue followed by the eigenvector.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.vectors.nrows();
        let header: Vec<String> = std::iter::once("eigenvalue".to_string())
            .chain((0..n).map(|i| format!("u{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (j, lambda) in self.eigenvalues.iter().enumerate() {
            let row: Vec<String> = std::iter::once(lambda.to_string())
                .chain(self.vectors.column(j).iter().map(|v| v.to_string()))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn eigendecompose(g: &Graph) -> Result<Spectrum> {
    eigendecompose_matrix(g.shift())
}

/// Symmetric eigendecomposition with the ordering and sign conventions of
/// [`Spectrum`].
pub fn eigendecompose_matrix(s: &DMatrix<f64>) -> Result<Spectrum> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(invalid("eigendecomposition needs a square matrix"));
    }
    let asym = (s - s.transpose()).abs().max();
    if asym > ASYMMETRY_TOL {
        return Err(invalid(format!("matrix asymmetric by {asym:e}")));
    }
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: vec![],
            vectors: DMatrix::zeros(0, 0),
            clusters: vec![],
            positive: 0,
        });
    }
    let eig = SymmetricEigen::try_new(s.clone(), f64::EPSILON, MAX_SWEEPS).ok_or(
        Error::NoConvergence {
            iterations: MAX_SWEEPS,
        },
    )?;
    let raw = eig.eigenvalues;
    let vecs = eig.eigenvectors;
    let zero_tol = ZERO_TOL * raw.iter().fold(1.0f64, |m, l| m.max(l.abs()));
    let nonnegative = |l: f64| l >= -zero_tol;

    let dominant = |j: usize| -> usize {
        vecs.column(j)
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, v)| {
                if v.abs() > best.1 + SIGN_TOL {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (raw[a], raw[b]);
        let side = |l: f64| if nonnegative(l) { 0 } else { 1 };
        side(la)
            .cmp(&side(lb))
            .then_with(|| {
                if nonnegative(la) {
                    lb.total_cmp(&la)
                } else {
                    la.total_cmp(&lb)
                }
            })
            .then_with(|| dominant(a).cmp(&dominant(b)))
    });

    let eigenvalues: Vec<f64> = order.iter().map(|&j| raw[j]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &j) in order.iter().enumerate() {
        let col = vecs.column(j);
        let sign = col
            .iter()
            .find(|v| v.abs() > SIGN_TOL)
            .map_or(1.0, |v| v.signum());
        vectors.set_column(c, &(col * sign));
    }
    Ok(Spectrum {
        clusters: cluster_labels(&eigenvalues),
        positive: eigenvalues.iter().filter(|&&l| nonnegative(l)).count(),
        eigenvalues,
        vectors,
    })
}

fn cluster_labels(eigenvalues: &[f64]) -> Vec<usize> {
    let mut labels = Vec::with_capacity(eigenvalues.len());
    let mut current = 0;
    for (j, l) in eigenvalues.iter().enumerate() {
        if j > 0 && (l - eigenvalues[j - 1]).abs() >= CLUSTER_GAP {
            current += 1;
        }
        labels.push(current);
    }
    labels
}

/// `x_hat = U^T x`.
pub fn gft(spec: &Spectrum, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != spec.vectors.nrows() {
        return Err(invalid(format!(
            "signal length {} does not match spectrum dimension {}",
            x.len(),
            spec.vectors.nrows()
        )));
    }
    Ok(spec.vectors.tr_mul(x))
}

/// `x = U x_hat`.
pub fn igft(spec: &Spectrum, x_hat: &DVector<f64>) -> Result<DVector<f64>> {
    if x_hat.len() != spec.vectors.ncols() {
        return Err(invalid(format!(
            "coefficient count {} does not match spectrum size {}",
            x_hat.len(),
            spec.vectors.ncols()
        )));
    }
    Ok(&spec.vectors * x_hat)
}
