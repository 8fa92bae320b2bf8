//! Single-channel audio denoising with non-negative spectrogram dictionaries.
//!
//! Signal and noise dictionaries are learned from prior recordings, either by
//! batch NMF ([`nmf::fit_nmf`]) or online NMF ([`onmf::fit_onmf`]). A noisy
//! recording is then sparse-coded against both dictionaries at once, the two
//! reconstructions are turned into a ratio mask, and the masked magnitudes
//! are inverted using the noisy recording's phases ([`pipeline::denoise`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio_io;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod nmf;
pub mod onmf;
pub mod pipeline;
pub mod stft;

pub use audio_io::AudioBuffer;
pub use error::{Error, Result};
pub use nmf::{CodeMatrix, Dictionary};
pub use stft::{Spectrogram, StftParams};
