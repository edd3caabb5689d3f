pub mod certificate;
pub mod cli;
pub mod harmonics;
pub mod jordan;
pub mod linalg;
pub mod reduction;
pub mod resonance;
pub mod spectral;
