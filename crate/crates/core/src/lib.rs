//! Contextual morphological analysis with one linear-chain CRF per coarse
//! feature dimension on top of a shared character/word BiLSTM encoder.

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod numcore;
pub mod polyglot;
pub mod schema;
pub mod train;

pub use error::{Error, Result};

macro_rules! book {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

book! {
    book_introduction => "introduction.md",
    book_tagsets => "tagsets.md",
    book_crf => "crf.md",
    book_autodiff => "autodiff.md",
    book_encoder => "encoder.md",
    book_training => "training.md",
    book_multilingual => "multilingual.md",
    book_evaluation => "evaluation.md",
    book_cli => "cli.md",
    book_formats => "formats.md",
}
