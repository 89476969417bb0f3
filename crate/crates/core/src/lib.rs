//! Intrinsically motivated actor-critic training.
//!
//! Unsupervised modules (a convolutional autoencoder, or forward/inverse
//! dynamics over learned features) turn their own prediction error into a
//! reward for an asynchronous actor-critic agent. The crate carries its own
//! small autodiff engine, two procedurally generated environments, the
//! trainer, and evaluation tools for object attention and few-shot recognition.

pub mod autodiff;
pub mod cli;
pub mod evalkit;
pub mod models;
pub mod trainer;
pub mod worlds;
