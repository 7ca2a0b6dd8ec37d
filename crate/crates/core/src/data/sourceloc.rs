use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gnn::pool::top_degree_nodes;
use crate::graphgen::Graph;
use crate::train::{Dataset, Sample};

/// `S^t e_c` by repeated multiplication.
pub fn diffuse(g: &Graph, c: usize, t: usize) -> Result<DVector<f64>> {
    if c >= g.len() {
        return Err(invalid(format!("source {c} out of range for {} nodes", g.len())));
    }
    let mut x = DVector::zeros(g.len());
    x[c] = 1.0;
    for _ in 0..t {
        x = g.shift() * x;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSelection {
    /// The `C` highest-degree nodes, ties by lower index.
    #[default]
    TopDegree,
    /// `C` distinct nodes drawn uniformly from the seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceLocConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub classes: usize,
    pub t_max: usize,
    /// Divide every input by its max-norm.
    pub normalize: bool,
    pub candidates: CandidateSelection,
    pub seed: u64,
}

impl Default for SourceLocConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_val: 240,
            n_test: 200,
            classes: 10,
            t_max: 25,
            normalize: true,
            candidates: CandidateSelection::TopDegree,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub signal: DVector<f64>,
    /// Index into the candidate list.
    pub class: usize,
    pub source: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceLocDataset {
    pub graph: Graph,
    pub candidates: Vec<usize>,
    pub train: Vec<DiffusionSample>,
    pub validation: Vec<DiffusionSample>,
    pub test: Vec<DiffusionSample>,
    pub seed: u64,
}

impl SourceLocDataset {
    /// Single-feature class samples for training.
    pub fn to_dataset(&self) -> Dataset {
        let conv = |v: &[DiffusionSample]| -> Vec<Sample> {
            v.iter()
                .map(|s| Sample::class(DMatrix::from_column_slice(s.signal.len(), 1, s.signal.as_slice()), s.class))
                .collect()
        };
        Dataset {
            train: conv(&self.train),
            validation: conv(&self.validation),
            test: conv(&self.test),
        }
    }
}

/// Draws `(x_t, c)` pairs with `c` uniform over the candidates and `t`
/// uniform over `1..=t_max`. Train, validation and test are drawn in that
/// order from one seeded stream.
pub fn make_sourceloc(g: &Graph, config: &SourceLocConfig) -> Result<SourceLocDataset> {
    let n = g.len();
    if config.classes == 0 || config.classes > n {
        return Err(invalid(format!("{} classes requested on a {n}-node graph", config.classes)));
    }
    if config.t_max == 0 {
        return Err(invalid("t_max must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let candidates = match config.candidates {
        CandidateSelection::TopDegree => top_degree_nodes(g, config.classes),
        CandidateSelection::Random => {
            let mut c = sample_indices(&mut rng, n, config.classes).into_vec();
            c.sort_unstable();
            c
        }
    };

    // every (candidate, t) signal, computed once
    let mut table: Vec<Vec<DVector<f64>>> = Vec::with_capacity(candidates.len());
    for &c in &candidates {
        let mut x = DVector::zeros(n);
        x[c] = 1.0;
        let mut row = Vec::with_capacity(config.t_max);
        for _ in 0..config.t_max {
            x = g.shift() * x;
            // rescaling commutes with S, so the normalized iterate is exact
            if config.normalize {
                let norm = x.amax();
                if norm > 0.0 {
                    x /= norm;
                }
            }
            row.push(x.clone());
        }
        table.push(row);
    }

    let mut draw = |count: usize| -> Vec<DiffusionSample> {
        (0..count)
            .map(|_| {
                let class = rng.gen_range(0..candidates.len());
                let t = rng.gen_range(1..=config.t_max);
                DiffusionSample {
                    signal: table[class][t - 1].clone(),
                    class,
                    source: candidates[class],
                    t,
                }
            })
            .collect()
    };
    let train = draw(config.n_train);
    let validation = draw(config.n_val);
    let test = draw(config.n_test);
    Ok(SourceLocDataset {
        graph: g.clone(),
        candidates,
        train,
        validation,
        test,
        seed: config.seed,
    })
}
