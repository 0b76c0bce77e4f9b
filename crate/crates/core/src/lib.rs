pub mod cca;
pub mod error;
pub mod fisher;
pub mod fixture;
pub mod io;
pub mod matrix;
pub mod mixtures;
pub mod pipeline;
pub mod retrieval;
pub mod whitening;

pub use error::{Error, Result};
pub use matrix::Matrix;

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mixtures.md")]
    mod mixtures {}
    #[doc = include_str!("../../../book/src/weighted-median.md")]
    mod weighted_median {}
    #[doc = include_str!("../../../book/src/fisher-vectors.md")]
    mod fisher_vectors {}
    #[doc = include_str!("../../../book/src/whitening.md")]
    mod whitening {}
    #[doc = include_str!("../../../book/src/cca.md")]
    mod cca {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
