use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::graphgen::Graph;
use crate::graphon::Graphon;
use crate::train::{Dataset, Sample};

/// Name of the ratings file inside the dataset directory.
pub const RATINGS_FILE: &str = "u.data";

pub const CANONICAL_USERS: usize = 943;
pub const CANONICAL_MOVIES: usize = 1682;
pub const CANONICAL_RATINGS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rating {
    /// 1-based ids as in the file.
    pub user: usize,
    pub movie: usize,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ratings {
    pub entries: Vec<Rating>,
    /// Largest user id seen.
    pub users: usize,
    /// Largest movie id seen.
    pub movies: usize,
}

impl Ratings {
    pub fn from_entries(entries: Vec<Rating>) -> Self {
        let users = entries.iter().map(|r| r.user).max().unwrap_or(0);
        let movies = entries.iter().map(|r| r.movie).max().unwrap_or(0);
        Self {
            entries,
            users,
            movies,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Dense `users x movies` matrix with 0 for missing ratings.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.users, self.movies);
        for r in &self.entries {
            m[(r.user - 1, r.movie - 1)] = r.rating as f64;
        }
        m
    }

    /// Per-user `(movie index, rating)` lists sorted by movie.
    fn by_user(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.users];
        for r in &self.entries {
            out[r.user - 1].push((r.movie - 1, r.rating as f64));
        }
        for v in out.iter_mut() {
            v.sort_unstable_by_key(|e| e.0);
            v.dedup_by_key(|e| e.0);
        }
        out
    }
}

/// Resolves a dataset directory (or the ratings file itself) to the ratings
/// file path.
pub fn locate_ratings(path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let file = if path.is_dir() || (!path.exists() && !path.ends_with(RATINGS_FILE)) {
        path.join(RATINGS_FILE)
    } else {
        path.to_path_buf()
    };
    if file.is_file() {
        Ok(file)
    } else {
        Err(Error::MissingFile(file))
    }
}

/// Parses tab-separated `user item rating timestamp` lines. Count mismatches
/// against the canonical file are logged, not fatal.
pub fn load_movielens(path: impl AsRef<Path>) -> Result<Ratings> {
    let file = locate_ratings(path)?;
    let reader = BufReader::new(File::open(&file)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(parse_line(&line).map_err(|message| Error::Parse {
            path: file.clone(),
            line: i + 1,
            message,
        })?);
    }
    let ratings = Ratings::from_entries(entries);
    if (ratings.users, ratings.movies, ratings.len()) != (CANONICAL_USERS, CANONICAL_MOVIES, CANONICAL_RATINGS) {
        log::warn!(
            "{}: {} users, {} movies, {} ratings (canonical file has {CANONICAL_USERS}, {CANONICAL_MOVIES}, {CANONICAL_RATINGS})",
            file.display(),
            ratings.users,
            ratings.movies,
            ratings.len()
        );
    }
    Ok(ratings)
}

fn parse_line(line: &str) -> std::result::Result<Rating, String> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() < 3 {
        return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
    }
    let id = |s: &str, what: &str| -> std::result::Result<usize, String> {
        match s.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(format!("invalid {what} id `{s}`")),
        }
    };
    let user = id(fields[0], "user")?;
    let movie = id(fields[1], "movie")?;
    let rating = match fields[2].parse::<u8>() {
        Ok(r @ 1..=5) => r,
        _ => return Err(format!("rating `{}` not in 1..5", fields[2])),
    };
    Ok(Rating { user, movie, rating })
}

fn pearson(a: &[(usize, f64)], b: &[(usize, f64)], min_common: usize) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                xs.push(a[i].1);
                ys.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    let n = xs.len();
    if n < min_common.max(2) {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (dx, dy) = (xs[k] - mx, ys[k] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Raw Pearson correlations over co-rated movies for every user pair with at
/// least `min_common` of them; 0 elsewhere and on the diagonal. Not clamped.
pub fn pearson_matrix(ratings: &Ratings, min_common: usize) -> DMatrix<f64> {
    let users = ratings.by_user();
    let u = users.len();
    let rows: Vec<Vec<f64>> = (0..u)
        .into_par_iter()
        .map(|i| {
            (0..u)
                .map(|j| if i < j { pearson(&users[i], &users[j], min_common) } else { 0.0 })
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(u, u);
    for i in 0..u {
        for j in i + 1..u {
            m[(i, j)] = rows[i][j];
            m[(j, i)] = rows[i][j];
        }
    }
    m
}

/// User similarity network: clamped Pearson correlations, pruned to each
/// user's `knn` strongest neighbours and symmetrized by the maximum.
pub fn user_similarity(ratings: &Ratings, min_common: usize, knn: usize) -> Result<Graph> {
    if knn == 0 {
        return Err(invalid("knn must be at least 1"));
    }
    let corr = pearson_matrix(ratings, min_common).map(|c| c.max(0.0));
    let u = corr.nrows();
    let mut pruned = DMatrix::zeros(u, u);
    for i in 0..u {
        let mut order: Vec<usize> = (0..u).filter(|&j| j != i && corr[(i, j)] > 0.0).collect();
        // strongest first, lower index on ties
        order.sort_by(|&a, &b| corr[(i, b)].total_cmp(&corr[(i, a)]).then(a.cmp(&b)));
        for &j in order.iter().take(knn) {
            pruned[(i, j)] = corr[(i, j)];
        }
    }
    let sym = DMatrix::from_fn(u, u, |i, j| if i == j { 0.0 } else { pruned[(i, j)].max(pruned[(j, i)]) });
    Graph::from_adjacency(sym)
}

/// Step graphon with one block per user.
pub fn graphon_from_users(sim: &Graph) -> Result<Graphon> {
    Graphon::induced(sim.shift())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingSample {
    /// 1-based movie id.
    pub movie: usize,
    /// Ratings of every user for the movie, target user zeroed.
    pub input: DVector<f64>,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    pub users: usize,
    pub movies: usize,
    /// 1-based.
    pub target_user: usize,
    pub similarity: Graph,
    /// One sample per movie rated by the target user, by movie id.
    pub samples: Vec<RatingSample>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl RatingsDataset {
    pub fn to_dataset(&self) -> Dataset {
        let conv = |idx: &[usize]| -> Vec<Sample> {
            idx.iter()
                .map(|&i| {
                    let s = &self.samples[i];
                    Sample::value(DMatrix::from_column_slice(s.input.len(), 1, s.input.as_slice()), s.rating)
                })
                .collect()
        };
        Dataset {
            train: conv(&self.train),
            validation: conv(&self.validation),
            test: conv(&self.test),
        }
    }
}

/// Samples are the movies the target user rated; a seeded shuffle sends
/// `train_frac` of them to training (a tenth of which is held out for
/// validation) and the rest to test.
pub fn make_rating_task(
    ratings: &Ratings,
    sim: &Graph,
    target_user: usize,
    train_frac: f64,
    seed: u64,
) -> Result<RatingsDataset> {
    if target_user == 0 || target_user > ratings.users {
        return Err(invalid(format!("target user {target_user} not in 1..={}", ratings.users)));
    }
    if sim.len() != ratings.users {
        return Err(invalid(format!(
            "similarity graph has {} nodes for {} users",
            sim.len(),
            ratings.users
        )));
    }
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(invalid(format!("train fraction {train_frac} not in [0, 1]")));
    }
    let matrix = ratings.matrix();
    let t = target_user - 1;
    let samples: Vec<RatingSample> = (0..ratings.movies)
        .filter(|&m| matrix[(t, m)] > 0.0)
        .map(|m| {
            let mut input = matrix.column(m).into_owned();
            let rating = input[t];
            input[t] = 0.0;
            RatingSample {
                movie: m + 1,
                input,
                rating,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_frac * samples.len() as f64).round() as usize;
    let n_val = (0.1 * n_train as f64).round() as usize;
    let test = order[n_train..].to_vec();
    let validation = order[..n_val].to_vec();
    let train = order[n_val..n_train].to_vec();
    Ok(RatingsDataset {
        users: ratings.users,
        movies: ratings.movies,
        target_user,
        similarity: sim.clone(),
        samples,
        train,
        validation,
        test,
    })
}
