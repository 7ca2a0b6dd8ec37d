use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pool::{coarsen_hem, graphon_assignment, top_degree_nodes, Summarizer};
use super::{FeatureMatrix, FilterBank, Layer, LayerCache, LayerSpec, Nonlinearity, Pooling};
use crate::error::{invalid, Error, Result};
use crate::graphgen::{sample_by_integration, Graph};
use crate::graphon::{Graphon, Partition};
use crate::gsp::eigendecompose_matrix;

/// How the per-layer graphs and pooling maps are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolingStrategy {
    /// Every layer graph integrated from the same graphon at its own
    /// resolution; signals mapped by unit-interval membership.
    #[serde(rename = "graphon")]
    Graphon,
    /// Keep the highest-degree nodes of the input graph and convolve on the
    /// induced subgraphs.
    #[serde(rename = "selection-zeropad")]
    SelectionZeropad,
    /// Successive heavy-edge-matching coarsenings of the input graph.
    #[serde(rename = "coarsen-hem")]
    CoarsenHem,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 3] = [
        PoolingStrategy::Graphon,
        PoolingStrategy::SelectionZeropad,
        PoolingStrategy::CoarsenHem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingStrategy::Graphon => "graphon",
            PoolingStrategy::SelectionZeropad => "selection-zeropad",
            PoolingStrategy::CoarsenHem => "coarsen-hem",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown pooling strategy `{s}`")))
    }
}

/// Scaling applied to every layer's shift operator before convolving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GsoNormalization {
    None,
    /// Divide by the largest eigenvalue magnitude.
    #[default]
    SpectralRadius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerArch {
    pub features: usize,
    pub taps: usize,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub summarizer: Summarizer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_features: usize,
    pub layers: Vec<LayerArch>,
    /// Readout dimension: class count or 1 for regression.
    pub outputs: usize,
}

/// Everything needed to rebuild a model deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[N_0, N_1, ..., N_L]`; a single entry keeps every layer at `N_0`.
    pub sizes: Vec<usize>,
    pub architecture: Architecture,
    pub strategy: PoolingStrategy,
    pub seed: u64,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
    #[serde(default)]
    pub normalization: GsoNormalization,
    /// Graphon identifier recorded in checkpoints.
    #[serde(default)]
    pub graphon_spec: String,
}

fn default_quadrature() -> usize {
    8
}

impl ModelConfig {
    pub fn new(sizes: Vec<usize>, architecture: Architecture, strategy: PoolingStrategy, seed: u64) -> Self {
        Self {
            sizes,
            architecture,
            strategy,
            seed,
            quadrature_points: default_quadrature(),
            normalization: GsoNormalization::default(),
            graphon_spec: String::new(),
        }
    }

    /// Node counts per layer boundary, length `L + 1`.
    pub fn layer_sizes(&self) -> Result<Vec<usize>> {
        let depth = self.architecture.layers.len();
        if depth == 0 {
            return Err(invalid("architecture needs at least one layer"));
        }
        let sizes = match self.sizes.len() {
            1 => vec![self.sizes[0]; depth + 1],
            n if n == depth + 1 => self.sizes.clone(),
            n => {
                return Err(invalid(format!(
                    "{n} layer sizes given for a {depth}-layer architecture"
                )))
            }
        };
        if sizes.iter().any(|&n| n == 0) {
            return Err(invalid("layer sizes must be positive"));
        }
        if sizes.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid(format!("layer sizes {sizes:?} must be non-increasing")));
        }
        Ok(sizes)
    }
}

/// Trainable GNN together with the graphs it runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    config: ModelConfig,
    graphs: Vec<Graph>,
    layers: Vec<Layer>,
    readout_weight: DMatrix<f64>,
    readout_bias: DVector<f64>,
    version: u64,
}

/// Forward-pass intermediates consumed by [`GnnModel::backward`].
#[derive(Debug, Clone)]
pub struct ModelCache {
    version: u64,
    layers: Vec<LayerCache>,
    features: DVector<f64>,
}

/// Parameter gradients, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub taps: Vec<Vec<DMatrix<f64>>>,
    pub readout_weight: DMatrix<f64>,
    pub readout_bias: DVector<f64>,
}

impl Gradients {
    /// Flattened in the order of [`GnnModel::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.taps {
            for h in layer {
                push_row_major(h, &mut out);
            }
        }
        push_row_major(&self.readout_weight, &mut out);
        out.extend(self.readout_bias.iter());
        out
    }
}

fn push_row_major(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
}

fn read_row_major(m: &mut DMatrix<f64>, src: &[f64]) -> usize {
    let cols = m.ncols();
    for r in 0..m.nrows() {
        for c in 0..cols {
            m[(r, c)] = src[r * cols + c];
        }
    }
    m.len()
}

/// Builds the layer graphs for the configured strategy and initializes the
/// weights uniformly in `±1 / sqrt(F_in K)` (readout: `±1 / sqrt(fan_in)`,
/// zero bias) from the seed.
pub fn build_model(w: &Graphon, config: &ModelConfig) -> Result<GnnModel> {
    let sizes = config.layer_sizes()?;
    let arch = &config.architecture;
    if arch.input_features == 0 || arch.outputs == 0 {
        return Err(invalid("input features and outputs must be positive"));
    }
    let depth = arch.layers.len();

    // weights first, so every strategy starts from the same draw
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut specs = Vec::with_capacity(depth);
    let mut banks = Vec::with_capacity(depth);
    let mut fin = arch.input_features;
    for (l, la) in arch.layers.iter().enumerate() {
        let spec = LayerSpec {
            input_features: fin,
            output_features: la.features,
            taps: la.taps,
            input_nodes: sizes[l],
            nodes: sizes[l + 1],
            nonlinearity: la.nonlinearity,
            summarizer: la.summarizer,
        };
        spec.validate()?;
        let bound = 1.0 / ((fin * la.taps) as f64).sqrt();
        let mut bank = FilterBank::zeros(la.taps, la.features, fin);
        for h in bank.taps.iter_mut() {
            for r in 0..h.nrows() {
                for c in 0..h.ncols() {
                    h[(r, c)] = rng.gen_range(-bound..=bound);
                }
            }
        }
        specs.push(spec);
        banks.push(bank);
        fin = la.features;
    }
    let flat_dim = sizes[depth] * fin;
    let bound = 1.0 / (flat_dim as f64).sqrt();
    let mut readout_weight = DMatrix::zeros(arch.outputs, flat_dim);
    for r in 0..arch.outputs {
        for c in 0..flat_dim {
            readout_weight[(r, c)] = rng.gen_range(-bound..=bound);
        }
    }

    let q = config.quadrature_points;
    let base = sample_by_integration(w, &Partition::uniform(sizes[0])?, q)?;
    let (graphs, poolings) = match config.strategy {
        PoolingStrategy::Graphon => {
            let mut graphs = vec![base];
            for l in 1..=depth {
                let g = if sizes[l] == sizes[l - 1] {
                    graphs[l - 1].clone()
                } else {
                    sample_by_integration(w, &Partition::uniform(sizes[l])?, q)?
                };
                graphs.push(g);
            }
            let poolings = (0..depth)
                .map(|l| {
                    Ok(Pooling::Groups {
                        assignment: graphon_assignment(sizes[l], sizes[l + 1])?,
                        groups: sizes[l + 1],
                        summarizer: specs[l].summarizer,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (graphs, poolings)
        }
        PoolingStrategy::SelectionZeropad => {
            // degree ranking is a total order, so kept sets are nested
            let kept: Vec<Vec<usize>> = sizes.iter().map(|&n| top_degree_nodes(&base, n)).collect();
            let mut graphs = vec![base.clone()];
            let mut poolings = Vec::with_capacity(depth);
            for l in 1..=depth {
                graphs.push(base.induced_subgraph(&kept[l])?);
                let rows = kept[l]
                    .iter()
                    .map(|v| kept[l - 1].binary_search(v).expect("kept sets are nested"))
                    .collect();
                poolings.push(Pooling::Select { rows });
            }
            (graphs, poolings)
        }
        PoolingStrategy::CoarsenHem => {
            let mut graphs = vec![base];
            let mut poolings = Vec::with_capacity(depth);
            for l in 1..=depth {
                let level_seed = config.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(l as u64));
                let (g, assignment) = coarsen_hem(&graphs[l - 1], sizes[l], level_seed)?;
                poolings.push(Pooling::Groups {
                    assignment,
                    groups: sizes[l],
                    summarizer: specs[l - 1].summarizer,
                });
                graphs.push(g);
            }
            (graphs, poolings)
        }
    };

    let layers = specs
        .into_iter()
        .zip(banks)
        .zip(poolings)
        .enumerate()
        .map(|(l, ((spec, filters), pooling))| {
            Ok(Layer {
                spec,
                filters,
                shift: normalized_shift(graphs[l].shift(), config.normalization)?,
                pooling,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GnnModel {
        config: config.clone(),
        graphs,
        layers,
        readout_bias: DVector::zeros(arch.outputs),
        readout_weight,
        version: 0,
    })
}

fn normalized_shift(s: &DMatrix<f64>, mode: GsoNormalization) -> Result<DMatrix<f64>> {
    match mode {
        GsoNormalization::None => Ok(s.clone()),
        GsoNormalization::SpectralRadius => {
            let spec = eigendecompose_matrix(s)?;
            let radius = spec.eigenvalues().iter().fold(0.0f64, |m, l| m.max(l.abs()));
            Ok(if radius > 0.0 { s / radius } else { s.clone() })
        }
    }
}

impl GnnModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn strategy(&self) -> PoolingStrategy {
        self.config.strategy
    }

    /// Raw (unnormalized) graphs `S_0, ..., S_L`.
    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, l: usize) -> &Graph {
        &self.graphs[l]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn readout_weight(&self) -> &DMatrix<f64> {
        &self.readout_weight
    }

    pub fn readout_bias(&self) -> &DVector<f64> {
        &self.readout_bias
    }

    pub fn input_nodes(&self) -> usize {
        self.graphs[0].len()
    }

    pub fn outputs(&self) -> usize {
        self.readout_bias.len()
    }

    /// Incremented on every parameter change; caches from older versions are
    /// rejected by [`GnnModel::backward`].
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.filters.param_count())
            .sum::<usize>()
            + self.readout_weight.len()
            + self.readout_bias.len()
    }

    /// Parameters in a fixed order: layer taps (`k`, then row-major
    /// `F_out x F_in`), readout weight (row-major), readout bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for h in &layer.filters.taps {
                push_row_major(h, &mut out);
            }
        }
        push_row_major(&self.readout_weight, &mut out);
        out.extend(self.readout_bias.iter());
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            for h in layer.filters.taps.iter_mut() {
                at += read_row_major(h, &params[at..]);
            }
        }
        at += read_row_major(&mut self.readout_weight, &params[at..]);
        for (b, &p) in self.readout_bias.iter_mut().zip(&params[at..]) {
            *b = p;
        }
        self.version += 1;
        Ok(())
    }

    /// Runs every layer and the affine readout on the row-major flattened
    /// final features.
    pub fn forward(&self, x: &FeatureMatrix) -> Result<(DVector<f64>, ModelCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = out;
        }
        let features = DVector::from_iterator(h.len(), h.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
        let output = &self.readout_weight * &features + &self.readout_bias;
        Ok((
            output,
            ModelCache {
                version: self.version,
                layers: caches,
                features,
            },
        ))
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<DVector<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Exact gradients of a loss with respect to every parameter, given
    /// `dLoss/dOutput` and the cache of the matching forward pass.
    pub fn backward(&self, cache: &ModelCache, grad_output: &DVector<f64>) -> Result<Gradients> {
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache from model version {}, model is at {}",
                cache.version, self.version
            )));
        }
        if grad_output.len() != self.outputs() {
            return Err(invalid(format!(
                "output gradient has length {}, model has {} outputs",
                grad_output.len(),
                self.outputs()
            )));
        }
        let readout_weight = grad_output * cache.features.transpose();
        let readout_bias = grad_output.clone();
        let flat = self.readout_weight.tr_mul(grad_output);

        let last = self.layers.last().expect("at least one layer");
        let (rows, cols) = (last.spec.nodes, last.spec.output_features);
        let mut grad = DMatrix::from_fn(rows, cols, |r, c| flat[r * cols + c]);

        let mut taps: Vec<Vec<DMatrix<f64>>> = self
            .layers
            .iter()
            .map(|l| {
                l.filters
                    .taps
                    .iter()
                    .map(|h| DMatrix::zeros(h.nrows(), h.ncols()))
                    .collect()
            })
            .collect();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward(&cache.layers[l], &grad, &mut taps[l]);
        }
        Ok(Gradients {
            taps,
            readout_weight,
            readout_bias,
        })
    }
}
