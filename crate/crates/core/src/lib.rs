//! Audience ranking for brand-new live shows.
//!
//! A new show has no ticket sales yet, so purely collaborative signals
//! cannot rank an audience for it. This crate implements a hybrid
//! pipeline:
//!
//! 1. [`catalog`] ingests transactions and show descriptions and builds
//!    the user/show interaction index.
//! 2. [`copurchase`] builds a sparse directed item-item graph from buyer
//!    overlap, under a family of interchangeable weight functions.
//! 3. [`contentsim`] learns to predict collaborative edge weights from
//!    content similarity and inserts the new show into the graph.
//! 4. [`propagation`] spreads the new show's similarity mass through the
//!    graph and ranks users by the best of their purchased shows.
//! 5. [`evaluation`] scores rankings by optimal prefix revenue on a
//!    temporal holdout, runs grid searches, and generates synthetic data
//!    with planted communities.

pub mod catalog;
pub mod contentsim;
pub mod copurchase;
pub mod error;
pub mod evaluation;
pub mod money;
pub mod propagation;

pub use error::{Error, Result};
pub use money::Money;
