//! Classifier families: boosted trees, isolation forest, and a 1D
//! densely-connected convolutional network.

pub mod gbt;
pub mod iforest;
pub mod net;
