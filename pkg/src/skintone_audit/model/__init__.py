from .classifier import (
    THRESHOLD,
    Classifier,
    GenderScore,
    NetClassifier,
    Preprocessor,
    score,
    score_many,
)
from .net import (
    FEMALE,
    MALE,
    AvgPool,
    CompactNet,
    Conv,
    Dense,
    Flatten,
    Tanh,
    TrainConfig,
    accuracy,
    default_layers,
    gradient,
    linear_objective,
    load_checkpoint,
    logits,
    save_checkpoint,
    score_from_logits,
    train,
)
from .remote import RemoteClassifier, remote_score

__all__ = [
    "THRESHOLD", "Classifier", "GenderScore", "NetClassifier", "Preprocessor", "score",
    "score_many", "FEMALE", "MALE", "AvgPool", "CompactNet", "Conv", "Dense", "Flatten",
    "Tanh", "TrainConfig", "accuracy", "default_layers", "gradient", "linear_objective",
    "load_checkpoint", "logits", "save_checkpoint", "score_from_logits", "train",
    "RemoteClassifier", "remote_score",
]
