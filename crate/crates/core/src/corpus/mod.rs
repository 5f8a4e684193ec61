//! Synthetic mixtures, manifests, the toy corpus generator and quality oracles.

mod manifest;
mod mixture;
mod oracle;
mod toy;

pub use manifest::{Manifest, ManifestRecord, RecordKind, Utterance};
pub use mixture::{active_power, convolve_truncated, mix, synthesize_mixture, Mixture, MixtureSpec, SourceBank};
pub use oracle::{QualityOracle, ORACLE_CMD_ENV};
pub use toy::{
    colored_noise, decaying_rir, derive_seed, generate_toy_corpus, generate_toy_utterances, harmonic_source,
    write_toy_corpus, ToyCorpus, ToyCorpusConfig, ToyCorpusManifests,
};
