//! Explainable multiple-choice question answering as subgraph selection.
//!
//! Each question becomes a hypothesis–fact graph. Selecting one hypothesis
//! and `m` supporting facts is a quadratic 0/1 program; its semidefinite
//! relaxation is solved by a primal–dual interior-point method and
//! differentiated implicitly, so the relevance weights can be trained end to
//! end.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod cli;
pub mod constraints;
pub mod corpus;
pub mod diffgrad;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod pipeline;
pub mod relevance;
pub mod scalar;
pub mod sdp;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Mat<f64>;
pub type Theta = graph::ThetaParams<f64>;
pub type Scores = graph::RelevanceScores<f64>;
pub type Problem = sdp::SdpProblem<f64>;
pub type Solution = sdp::SdpSolution<f64>;
pub type Settings = sdp::SolverSettings<f64>;
pub type Instance = pipeline::QuestionInstance<f64>;
