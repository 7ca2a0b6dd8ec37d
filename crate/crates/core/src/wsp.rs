//! Graphon signal processing.
//!
//! The graphon shift operator `(T_W X)(v) = ∫ W(u,v) X(u) du` is discretized
//! by midpoint collocation at resolution `M`: the `M x M` matrix
//! `K_ab = W(u_a, u_b) / M` with `u_a = (a - 0.5) / M`. For a step graphon
//! and step signal on a partition refined by `M` this is exact, which makes
//! the graph/graphon correspondence testable to rounding error.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::graphgen::sample_by_integration;
use crate::graphon::{Graphon, GraphonSignal, Partition};
use crate::gsp::{eigendecompose, eigendecompose_matrix, gft, FilterTaps, Spectrum};

/// Default number of retained graphon eigenpairs.
pub const DEFAULT_RETAIN: usize = 20;
/// Default coefficient tolerance for bandlimitedness checks.
pub const BAND_TOL: f64 = 1e-8;

/// Midpoint collocation matrix `W(u_a, u_b) / M`.
pub fn collocation(w: &Graphon, m: usize) -> DMatrix<f64> {
    let pts: Vec<f64> = (0..m).map(|a| (a as f64 + 0.5) / m as f64).collect();
    let scale = 1.0 / m as f64;
    DMatrix::from_fn(m, m, |a, b| w.value(pts[a], pts[b]) * scale)
}

fn check_resolution(m: usize) -> Result<()> {
    if m == 0 {
        Err(invalid("resolution must be at least 1"))
    } else {
        Ok(())
    }
}

/// `T_W X` as a step signal at resolution `m`.
pub fn wshift(w: &Graphon, x: &GraphonSignal, m: usize) -> Result<GraphonSignal> {
    wfilter(&FilterTaps::new(vec![0.0, 1.0])?, w, x, m)
}

/// `sum_k h_k T_W^k X` as a step signal at resolution `m`.
pub fn wfilter(
    taps: &FilterTaps,
    w: &Graphon,
    x: &GraphonSignal,
    m: usize,
) -> Result<GraphonSignal> {
    check_resolution(m)?;
    let samples = DVector::from_vec(x.sample_midpoints(m));
    if taps.len() == 1 {
        return GraphonSignal::induced((samples * taps.as_slice()[0]).as_slice());
    }
    let k = collocation(w, m);
    let out = crate::gsp::filter_matrix(taps, &k, &samples)?;
    GraphonSignal::induced(out.as_slice())
}

/// Leading eigenpairs of the discretized graphon shift operator.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphonSpectrum {
    resolution: usize,
    spectrum: Spectrum,
}

impl GraphonSpectrum {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Retained eigenvalues in signed order.
    pub fn eigenvalues(&self) -> &[f64] {
        self.spectrum.eigenvalues()
    }

    pub fn len(&self) -> usize {
        self.spectrum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectrum.is_empty()
    }

    /// Eigenfunction `j` sampled at the midpoints, normalized so that
    /// `(1/M) sum phi^2 = 1`.
    pub fn eigenfunction(&self, j: usize) -> DVector<f64> {
        self.spectrum.vector(j) * (self.resolution as f64).sqrt()
    }

    pub fn eigenfunction_signal(&self, j: usize) -> GraphonSignal {
        GraphonSignal::Step(self.eigenfunction(j).as_slice().to_vec())
    }

    /// Number of retained non-negative eigenvalues.
    pub fn positive_count(&self) -> usize {
        self.spectrum.positive_count()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
}

/// Eigendecomposes the collocation matrix at resolution `m` and keeps the
/// `retain` eigenvalues of largest magnitude, listed in signed order.
pub fn wspectrum(w: &Graphon, m: usize, retain: usize) -> Result<GraphonSpectrum> {
    if retain == 0 || retain > m {
        return Err(invalid(format!(
            "retained count {retain} must lie in [1, {m}]"
        )));
    }
    let full = eigendecompose_matrix(&collocation(w, m))?;
    let ev = full.eigenvalues();
    let mut by_magnitude: Vec<usize> = (0..ev.len()).collect();
    by_magnitude.sort_by(|&a, &b| ev[b].abs().total_cmp(&ev[a].abs()).then(a.cmp(&b)));
    let mut keep = by_magnitude[..retain].to_vec();
    keep.sort_unstable();
    Ok(GraphonSpectrum {
        resolution: m,
        spectrum: full.select(&keep),
    })
}

/// Graphon Fourier coefficients on the retained band.
#[derive(Debug, Clone, PartialEq)]
pub struct Wft {
    pub eigenvalues: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Smallest `|sigma_j|` carrying a coefficient above [`BAND_TOL`];
    /// infinite for the zero signal.
    pub bandwidth: f64,
    /// `||X||^2` minus the energy captured by the retained coefficients.
    pub out_of_band_energy: f64,
}

/// `X_hat(sigma_j) = (1/M) sum_a X(u_a) phi_j(u_a)`.
pub fn wft(spec: &GraphonSpectrum, x: &GraphonSignal) -> Wft {
    let m = spec.resolution;
    let samples = DVector::from_vec(x.sample_midpoints(m));
    let scale = 1.0 / (m as f64).sqrt();
    let coefficients: Vec<f64> = spec
        .spectrum
        .vectors()
        .tr_mul(&samples)
        .iter()
        .map(|c| c * scale)
        .collect();
    let bandwidth = spec
        .eigenvalues()
        .iter()
        .zip(&coefficients)
        .filter(|(_, c)| c.abs() > BAND_TOL)
        .map(|(s, _)| s.abs())
        .fold(f64::INFINITY, f64::min);
    let energy = samples.norm_squared() / m as f64;
    let captured: f64 = coefficients.iter().map(|c| c * c).sum();
    Wft {
        eigenvalues: spec.eigenvalues().to_vec(),
        coefficients,
        bandwidth,
        out_of_band_energy: (energy - captured).max(0.0),
    }
}

/// True iff every retained coefficient with `|sigma_j| < omega` is below `tol`.
pub fn bandlimited(wft: &Wft, omega: f64, tol: f64) -> bool {
    wft.eigenvalues
        .iter()
        .zip(&wft.coefficients)
        .all(|(s, c)| s.abs() >= omega || c.abs() <= tol)
}

/// Options for [`convergence_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticOptions {
    /// Resolution of the reference graphon spectrum. `None` picks the block
    /// count for step graphons and 1000 otherwise.
    pub reference_resolution: Option<usize>,
    /// Quadrature nodes per cell and axis for the integrated graphs.
    pub quadrature_points: usize,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        Self {
            reference_resolution: None,
            quadrature_points: 8,
        }
    }
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub n: usize,
    /// Signed component index: `1, 2, ...` on the positive side, `-1, -2, ...`
    /// from the most negative eigenvalue.
    pub j: i64,
    pub sigma_graphon: f64,
    pub sigma_graph_scaled: f64,
    pub eig_error: f64,
    pub coeff_error: f64,
    /// Set when the component sits in a repeated-eigenvalue cluster and was
    /// compared through its subspace projection.
    pub subspace: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticTable {
    pub rows: Vec<DiagnosticRow>,
}

impl DiagnosticTable {
    pub fn coefficient_errors(&self, j: i64) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.j == j)
            .map(|r| (r.n, r.coeff_error))
            .collect()
    }

    pub const HEADER: [&'static str; 6] = [
        "n",
        "j",
        "sigma_graphon",
        "sigma_graph_scaled",
        "eig_error",
        "coeff_error",
    ];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.j.to_string(),
                r.sigma_graphon.to_string(),
                r.sigma_graph_scaled.to_string(),
                r.eig_error.to_string(),
                r.coeff_error.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Compares graph Fourier coefficients of integrated graphs of growing size
/// with the graphon Fourier transform of `x`.
///
/// For each `n`, graph component `j` is matched with graphon component `j` by
/// signed rank (both sides use the same ordering and sign rule). Reported
/// errors are `|[x_hat]_j / sqrt(n) - X_hat(sigma_j)|` and
/// `|lambda_j / n - sigma_j|`.
pub fn convergence_diagnostic(
    w: &Graphon,
    ns: &[usize],
    x: &GraphonSignal,
    retain: usize,
    options: DiagnosticOptions,
) -> Result<DiagnosticTable> {
    if ns.is_empty() {
        return Ok(DiagnosticTable::default());
    }
    if let Some(&n) = ns.iter().find(|&&n| n < retain) {
        return Err(invalid(format!(
            "graph size {n} smaller than retained band {retain}"
        )));
    }
    let reference_m = options.reference_resolution.unwrap_or(match w {
        Graphon::Step(s) => s.len(),
        Graphon::Kernel(_) => 1000,
    });
    let reference = wspectrum(w, reference_m, retain)?;
    let target = wft(&reference, x);
    let sigma = reference.eigenvalues();
    let ref_pos = reference.positive_count();
    let ref_clusters = reference.spectrum().clusters();

    let per_n: Vec<Result<Vec<DiagnosticRow>>> = ns
        .par_iter()
        .map(|&n| {
            let graph = sample_by_integration(w, &Partition::uniform(n)?, options.quadrature_points)?;
            let spec = eigendecompose(&graph)?;
            let xs = DVector::from_vec(x.sample_midpoints(n));
            let xh = gft(&spec, &xs)?;
            let pos = spec.positive_count();
            let root_n = (n as f64).sqrt();
            let align = |j: usize| -> Option<usize> {
                if j < ref_pos {
                    (j < pos).then_some(j)
                } else {
                    let r = j - ref_pos;
                    (pos + r < n).then_some(pos + r)
                }
            };

            let mut rows = Vec::with_capacity(sigma.len());
            for j in 0..sigma.len() {
                let Some(g) = align(j) else { continue };
                let mut members: Vec<usize> = (0..sigma.len())
                    .filter(|&i| ref_clusters[i] == ref_clusters[j])
                    .collect();
                if spec.is_repeated(g) {
                    let graph_cluster = spec.cluster_members(g);
                    for i in 0..sigma.len() {
                        if align(i).is_some_and(|gi| graph_cluster.contains(&gi))
                            && !members.contains(&i)
                        {
                            members.push(i);
                        }
                    }
                }
                let subspace = members.len() > 1;
                let coeff_error = if subspace {
                    let graph_norm = members
                        .iter()
                        .filter_map(|&i| align(i))
                        .map(|gi| xh[gi] * xh[gi])
                        .sum::<f64>()
                        .sqrt()
                        / root_n;
                    let graphon_norm = members
                        .iter()
                        .map(|&i| target.coefficients[i].powi(2))
                        .sum::<f64>()
                        .sqrt();
                    (graph_norm - graphon_norm).abs()
                } else {
                    (xh[g] / root_n - target.coefficients[j]).abs()
                };
                let scaled = spec.eigenvalues()[g] / n as f64;
                rows.push(DiagnosticRow {
                    n,
                    j: if j < ref_pos {
                        j as i64 + 1
                    } else {
                        -((j - ref_pos) as i64 + 1)
                    },
                    sigma_graphon: sigma[j],
                    sigma_graph_scaled: scaled,
                    eig_error: (scaled - sigma[j]).abs(),
                    coeff_error,
                    subspace,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut table = DiagnosticTable::default();
    for rows in per_n {
        table.rows.extend(rows?);
    }
    Ok(table)
}
