//! Multi-view event-camera action recognition with hypergraph fusion.
//!
//! The pipeline turns per-view event streams into signed event frames
//! ([`event_io`]), embeds each frame with a shared CNN ([`backbone`]), joins
//! the (view, window) embeddings into a hypergraph with rule and KNN
//! hyperedges, propagates features with vertex attention and reads out a
//! graph-level embedding for classification ([`hypergraph`], [`model`]).
//! [`event_synth`] simulates an event camera over parametric multi-view
//! scenes for training data; [`pipeline`] holds splits, training and
//! evaluation.

pub mod backbone;
pub mod event_io;
pub mod event_synth;
pub mod hypergraph;
pub mod model;
pub mod numerics;
pub mod pipeline;
