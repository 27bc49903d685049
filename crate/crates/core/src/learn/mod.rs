//! End-to-end learning: classifiers, losses, normalization, optimizers and
//! reverse-mode gradients through the optical encoder to the mask weights.

mod encoder;
mod model;
mod normalize;
mod optim;
mod train;

pub use encoder::{GradTape, LearnedEncoder};
pub use model::{
    argmax, bce, cross_entropy, loss_and_grad, predictions, relu, relu_backward, sigmoid, softmax,
    Architecture, BatchNorm, BatchNormCache, BatchNormGrad, Classifier, ClassifierCache,
    ClassifierGrad, Linear, LinearGrad, FC_HIDDEN, PROB_FLOOR,
};
pub use normalize::{Standardizer, STD_FLOOR};
pub use optim::{sgd_step, Adam, Optimizer, OptimizerKind};
pub use train::{
    evaluate, evaluate_learned, train_fixed, train_learned, EncoderMode, EpochMetrics, FeatureSet,
    FixedOutcome, LearnedOutcome, TrainConfig,
};
