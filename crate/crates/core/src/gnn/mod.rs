//! Graph neural networks with graphon pooling.
//!
//! A layer convolves its input on the previous layer's graph with a bank of
//! polynomial filters, applies a pointwise nonlinearity and then pools down to
//! its own node count:
//!
//! ```text
//! U = sum_k S^k X H_k^T      (N_{l-1} x F_l)
//! Z = sigma(U)
//! X_l = pool(Z)              (N_l x F_l)
//! ```
//!
//! Gradients are computed by hand; see [`GnnModel::backward`].

mod checkpoint;
mod model;
pub mod pool;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use model::{
    build_model, Architecture, Gradients, GnnModel, GsoNormalization, LayerArch, ModelCache,
    ModelConfig, PoolingStrategy,
};
pub use pool::{coarsen_hem, graphon_pool, selection_pool, Summarizer};

use crate::error::{invalid, Result};

/// Nodes by features.
pub type FeatureMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, u: &FeatureMatrix) -> FeatureMatrix {
        match self {
            Nonlinearity::Relu => u.map(|v| v.max(0.0)),
            Nonlinearity::Tanh => u.map(f64::tanh),
            Nonlinearity::Identity => u.clone(),
        }
    }

    /// Chain rule through the nonlinearity given pre- and post-activations.
    /// The ReLU derivative at zero is taken as zero.
    pub fn backward(self, pre: &FeatureMatrix, post: &FeatureMatrix, grad: &FeatureMatrix) -> FeatureMatrix {
        match self {
            Nonlinearity::Relu => grad.zip_map(pre, |g, u| if u > 0.0 { g } else { 0.0 }),
            Nonlinearity::Tanh => grad.zip_map(post, |g, a| g * (1.0 - a * a)),
            Nonlinearity::Identity => grad.clone(),
        }
    }
}

/// Shape of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_features: usize,
    pub output_features: usize,
    pub taps: usize,
    /// Node count of the input (convolution) resolution.
    pub input_nodes: usize,
    /// Node count after pooling.
    pub nodes: usize,
    pub nonlinearity: Nonlinearity,
    pub summarizer: Summarizer,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_features == 0 || self.output_features == 0 || self.taps == 0 || self.nodes == 0
        {
            return Err(invalid("layer counts must all be at least 1"));
        }
        if self.nodes > self.input_nodes {
            return Err(invalid(format!(
                "layer cannot grow from {} to {} nodes",
                self.input_nodes, self.nodes
            )));
        }
        Ok(())
    }
}

/// Filter taps `h[k]` as `F_out x F_in` matrices, one per power of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub taps: Vec<DMatrix<f64>>,
}

impl FilterBank {
    pub fn zeros(taps: usize, output_features: usize, input_features: usize) -> Self {
        Self {
            taps: vec![DMatrix::zeros(output_features, input_features); taps],
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.taps.iter().map(|h| h.len()).sum()
    }
}

/// How the convolution output is mapped to the next layer's nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Pooling {
    /// Reduce groups given by a fine-to-coarse assignment.
    Groups {
        assignment: Vec<usize>,
        groups: usize,
        summarizer: Summarizer,
    },
    /// Keep the listed rows.
    Select { rows: Vec<usize> },
}

impl Pooling {
    pub fn output_nodes(&self) -> usize {
        match self {
            Pooling::Groups { groups, .. } => *groups,
            Pooling::Select { rows } => rows.len(),
        }
    }
}

/// One graph-convolution layer with its shift operator and pooling map.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub filters: FilterBank,
    /// Shift operator used for the convolution (after normalization).
    pub shift: DMatrix<f64>,
    pub pooling: Pooling,
}

/// Intermediate values kept by [`Layer::forward`].
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `S^k X` for `k = 0..K`.
    shifted: Vec<FeatureMatrix>,
    pre: FeatureMatrix,
    post: FeatureMatrix,
    arg: Vec<usize>,
}

impl Layer {
    /// Convolution stage only: `sum_k S^k X H_k^T`.
    pub fn convolve(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_input(x)?;
        Ok(self.convolve_cached(x).0)
    }

    fn check_input(&self, x: &FeatureMatrix) -> Result<()> {
        if x.nrows() != self.shift.nrows() || x.ncols() != self.spec.input_features {
            return Err(invalid(format!(
                "layer expects {}x{} input, got {}x{}",
                self.shift.nrows(),
                self.spec.input_features,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn convolve_cached(&self, x: &FeatureMatrix) -> (FeatureMatrix, Vec<FeatureMatrix>) {
        let taps = &self.filters.taps;
        let mut shifted = Vec::with_capacity(taps.len());
        shifted.push(x.clone());
        for k in 1..taps.len() {
            let next = &self.shift * &shifted[k - 1];
            shifted.push(next);
        }
        let mut u = &shifted[0] * taps[0].transpose();
        for (z, h) in shifted.iter().zip(taps).skip(1) {
            u.gemm(1.0, z, &h.transpose(), 1.0);
        }
        (u, shifted)
    }

    pub fn forward(&self, x: &FeatureMatrix) -> Result<(FeatureMatrix, LayerCache)> {
        self.check_input(x)?;
        let (pre, shifted) = self.convolve_cached(x);
        let post = self.spec.nonlinearity.apply(&pre);
        let (out, arg) = match &self.pooling {
            Pooling::Groups {
                assignment,
                groups,
                summarizer,
            } => pool::group_forward(&post, assignment, *groups, *summarizer),
            Pooling::Select { rows } => (pool::select_rows(&post, rows), Vec::new()),
        };
        Ok((
            out,
            LayerCache {
                shifted,
                pre,
                post,
                arg,
            },
        ))
    }

    /// Returns the gradient with respect to the layer input and accumulates
    /// the tap gradients into `tap_grads`.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        grad_out: &FeatureMatrix,
        tap_grads: &mut [DMatrix<f64>],
    ) -> FeatureMatrix {
        let grad_post = match &self.pooling {
            Pooling::Groups {
                assignment,
                summarizer,
                ..
            } => pool::group_backward(grad_out, assignment, *summarizer, &cache.arg),
            Pooling::Select { rows } => {
                let mut g = DMatrix::zeros(cache.post.nrows(), cache.post.ncols());
                for (r, &row) in rows.iter().enumerate() {
                    g.set_row(row, &grad_out.row(r));
                }
                g
            }
        };
        let grad_pre = self
            .spec
            .nonlinearity
            .backward(&cache.pre, &cache.post, &grad_post);

        // dL/dH_k = G^T (S^k X)
        for (k, z) in cache.shifted.iter().enumerate() {
            tap_grads[k].gemm(1.0, &grad_pre.transpose(), z, 1.0);
        }
        // dL/dX = sum_k S^k G H_k, by Horner's rule (S symmetric)
        let taps = &self.filters.taps;
        let last = taps.len() - 1;
        let mut acc = &grad_pre * &taps[last];
        for k in (0..last).rev() {
            acc = &self.shift * &acc;
            acc.gemm(1.0, &grad_pre, &taps[k], 1.0);
        }
        acc
    }
}
