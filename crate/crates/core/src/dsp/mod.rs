//! Signal preprocessing: axis fusion, framing, mel spectrograms,
//! autocorrelation and the periodicity score.

mod autocorr;
mod dft321;
mod mel;
mod periodicity;
mod signal;

pub use autocorr::autocorrelation;
pub use dft321::dft321;
pub use mel::{frames, hann, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, DspConfig, MelSpectrogram};
pub use periodicity::{periodicity_score, periodicity_score_with, PeriodicityConfig, PeriodicityScore};
pub use signal::{
    read_mono_csv, read_triaxial_csv, to_mono, write_mono_csv, write_triaxial_csv, InputMode, MonoSignal,
    TriaxialSignal,
};
