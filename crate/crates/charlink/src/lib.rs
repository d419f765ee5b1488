//! Cross-lingual entity candidate generation from character n-grams.
//!
//! A mention written in one language is linked to entities of an English
//! knowledge base by embedding both sides with a shared character n-gram
//! encoder: a string becomes the tanh of a bias plus the count-weighted sum
//! of its n-gram vectors. The encoder is trained with a max-margin ranking
//! loss over (source string, entity name) pairs, entities are scored by the
//! best cosine over their canonical name, aliases, and an optional
//! high-resource transliteration, and the top k entities per mention are
//! returned. Scores can be fused with an external candidate generator via a
//! softmax-weighted linear merge.
//!
//! Module map:
//! * [`ngram`]: n-gram extraction, vocabulary, pivot-language ranking.
//! * [`kb`]: KB, alias and training-pair file loading.
//! * [`encoder`]: the encoder model, its binary format, KB encoding.
//! * [`trainer`]: max-margin SGD with dev-recall early stopping.
//! * [`retrieval`]: cosine scoring, exact top-k index, score merging.
//! * [`eval`]: gold-recall reports and nearest-neighbor inspection.
//! * [`synth`]: deterministic synthetic cipher dataset for end-to-end tests.
//! * [`pipeline`]: config-driven end-to-end run producing file artifacts.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod kb;
pub mod ngram;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
