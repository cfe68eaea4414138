//! Cooperative multi-agent value decomposition without the Individual
//! Global Max assumption.
//!
//! The centerpiece is DAVE (dual self-awareness value decomposition): each
//! agent keeps an ego policy that picks actions and an alter-ego utility
//! that feeds an unconstrained mixing network, with a sampling procedure
//! standing in for the joint argmax and an auto-encoder-driven anti-ego
//! exploration bonus. QMIX, VDN and a naive unconstrained-QMIX control are
//! included as baselines, together with the didactic matrix-game
//! environments on which IGM-based methods fail, a replay buffer, and an
//! experiment harness.

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod dave;
pub mod envs;
pub mod harness;
pub mod networks;
pub mod plot;
pub mod replay;
pub mod schedule;
