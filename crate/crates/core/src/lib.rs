//! Low-dimensional parameterization of channelized and bimodal geological
//! models: PCA, O-PCA post-processing, and a trained convolutional model
//! transform net (CNN-PCA). A two-phase flow simulator and a PSO–MADS
//! randomized-maximum-likelihood history-matching loop consume the
//! parameterization.
//!
//! Module map:
//!
//! * [`tensor`]: dense tensors, reverse-mode tape, ADAM.
//! * [`nnw`]: the `NNW1` tensor container used for all checkpoints.
//! * [`geomodel`]: grid models, hard data, property mapping, file IO and the
//!   synthetic channel fixture generator.
//! * [`pca`], [`opca`]: linear basis and O-PCA post-processing.
//! * [`loss_net`], [`transform_net`]: feature losses and the model transform net.
//! * [`flow_sim`]: IMPES oil–water simulator and ensemble statistics.
//! * [`history_match`]: RML objectives and the PSO–MADS optimizer.
//! * [`cli`]: command-line workflows.

pub mod cli;
pub mod error;
pub mod flow_sim;
pub mod geomodel;
pub mod history_match;
pub mod loss_net;
pub mod nnw;
pub mod opca;
pub mod pca;
pub mod tensor;
pub mod transform_net;

mod linalg;
mod rng;

pub use error::{Error, Result};
pub use geomodel::{Ensemble, GridModel, HardData, ModelKind, PropertyMap};
pub use pca::PcaBasis;
pub use tensor::{Tape, Tensor, Var};
pub use transform_net::TransformNet;
