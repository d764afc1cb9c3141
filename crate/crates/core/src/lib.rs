pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod param;
pub mod run;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use image::Image;
pub use model::{DecoderStyle, GitModel, ImageFeatures, ModelConfig, Visual};
pub use param::{Param, ParamGroup, ParamId, ParamKind, ParamStore};
pub use tensor::{DType, Scalar, Tensor};
pub use train::{TrainConfig, Example};
pub use vocab::{TokenId, TokenizerMode, Vocabulary};
