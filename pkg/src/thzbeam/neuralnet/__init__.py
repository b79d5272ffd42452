from .activations import Activation, ActivationKind, activation, activation_grad
from .network import (
    ClassifierModel,
    InceptionSpec,
    NetworkSpec,
    TrainingDivergedError,
    TrainingLog,
    checkpoint_bytes,
    load_model,
    model_from_bytes,
    model_to_bytes,
    parse_checkpoint,
    read_checkpoint,
    save_model,
    write_checkpoint,
)
from .optim import SGDM, Adam, OptimizerKind, RMSProp, make_optimizer, optimizer_step
from .train import (
    ImageSet,
    TrainConfig,
    accuracy,
    balanced_accuracy,
    evaluate,
    evaluate_accuracy,
    fit_input_standardization,
    predict_logits,
    train,
)
