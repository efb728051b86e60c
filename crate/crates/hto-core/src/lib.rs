//! Research toolkit for power-side-channel hardware-Trojan detection and
//! its adversarial evasion.
//!
//! The crate covers the full loop:
//!
//! * [`traces`]: power-trace datasets, synthesis, and CSV I/O.
//! * [`detector`]: a small 1-D CNN trained to flag Trojan power traces.
//! * [`attack`]: universal adversarial power patches that a Trojan's
//!   extra circuitry consumes to push traces back across the decision
//!   boundary, including shift-robust and spectrally constrained
//!   variants.
//! * [`quantizer`]: projection of patches onto realizable power levels.
//! * [`spectral`]: DFT, power spectra, frequency-band selection, and
//!   band-limited filtering.
//! * [`circuit`]: mapping patches to per-cycle activation vectors for
//!   concrete on-chip power-consuming cell networks, and emulation of
//!   the power those networks draw.
//! * [`defense`]: band-pass filtering and adversarial training as
//!   countermeasures, with robustness sweeps.
//!
//! All randomness flows through explicit seeds (see [`seeds`]); every
//! pipeline stage is deterministic and reproducible bit for bit.

pub mod attack;
pub mod circuit;
pub mod defense;
pub mod detector;
pub mod error;
pub mod quantizer;
pub mod seeds;
pub mod spectral;
pub mod traces;

pub use error::{Error, Result};
