//! Function observations: the sinusoid family, MNIST images as 2-D functions,
//! tabulated toy functions, and context/target sampling.

mod context;
mod function;
pub mod mnist;
pub mod rng;

pub use context::ContextSet;
pub use function::{
    image_as_function, sample_sinusoid, split_context_target, ContextBounds, FunctionInstance,
    FunctionKind, FunctionSource, ImageFunction, SineParams, SinusoidDataset, SinusoidFamily,
    TabulatedFunction,
};
pub use mnist::{load_mnist_idx, ImageSet, MnistDataset};
pub use rng::{stream_rng, tag, DetRng};
