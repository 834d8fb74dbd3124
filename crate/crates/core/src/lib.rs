//! Sketches for `l_p` sampling and frequency moments on streams with
//! forget operations, contractions and prefix/suffix deletions.

pub mod entropy;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod forget_f1;
pub mod forget_fp;
pub mod gen;
pub mod genops;
pub mod hash;
pub mod heavyhitter;
pub mod lpsampler;
pub mod oracle;
pub mod psd;
pub mod rng;
pub mod sketches;
pub mod stream;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use stream::{ContractionOp, Stream, StreamParams, Update, UpdateKind};
