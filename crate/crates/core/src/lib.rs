//! Deep convolutional spiking network with reward-modulated STDP.
//!
//! Images are encoded into single-spike waves, propagated bin by bin through
//! stacked convolution (S) and pooling (C) layers of fire-once
//! integrate-and-fire neurons, and the final layer's earliest spike or
//! largest potential picks the label. Learning is winner-take-all STDP or
//! its reward-modulated variant.

pub mod data;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod layers;
pub mod network;
pub mod plasticity;
pub mod spike;

pub use error::{Error, IdxError, Result};
pub use network::{decide, Decision, DecisionMode, Network, NetworkConfig};
pub use spike::{KernelShape, LayerState, SpikeWave, WeightTensor, NO_SPIKE};
