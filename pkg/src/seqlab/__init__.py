"""Linear-chain sequence labeling with CRF and structural SVM trainers."""

from .bench import RunConfig, TraceRecord, evaluate, run, should_stop, sweep_lambda
from .crf import (
    AsgdState,
    CrfDualState,
    asgd_epoch,
    asgd_step,
    calibrate_learning_rate,
    crf_objective,
    crf_objective_and_gradient,
    crf_sdm_example_update,
    crf_sdm_train,
    lbfgs_train,
)
from .data import Dataset, ModelFile, generate_synthetic, load_conll, load_model, save_model, write_conll
from .errors import (
    CalibrationFailed,
    ConfigError,
    FormatError,
    InvalidInputError,
    SeqlabError,
    TrainingDiverged,
)
from .inference import (
    Marginals,
    expected_feature,
    forward_backward,
    loss_augmented_viterbi,
    sequence_log_likelihood,
    viterbi_decode,
)
from .lbfgs import Lbfgs, LbfgsResult, minimize_lbfgs
from .maxmargin import (
    CuttingPlaneWorkingSet,
    SvmDualState,
    cutting_plane_train,
    dual_to_primal,
    svm_sdm_example_update,
    svm_sdm_train,
)
from .model import (
    LabelAlphabet,
    LabeledPair,
    SparseVector,
    TokenSequence,
    delta_feature,
    hamming_loss,
    joint_feature,
    make_pair,
    n_features,
    score,
)
from .perceptron import PerceptronState, averaged_weights, perceptron_epoch, perceptron_step

__version__ = "0.1.0"
