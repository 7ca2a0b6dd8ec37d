//! Datasets: synthetic source localization and MovieLens rating prediction.

pub mod movielens;
pub mod sourceloc;

pub use movielens::{
    graphon_from_users, load_movielens, make_rating_task, user_similarity, Ratings, RatingsDataset,
};
pub use sourceloc::{diffuse, make_sourceloc, CandidateSelection, SourceLocConfig, SourceLocDataset};
