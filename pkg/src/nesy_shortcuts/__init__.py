"""Counting, enumerating and reproducing reasoning shortcuts in neuro-symbolic predictors."""

from .combinatorics import (
    CountReport,
    DetOpt,
    LimitExceeded,
    count_likelihood,
    count_likelihood_rec,
    count_report,
    count_supervised,
    enumerate_detopts,
    is_ground_truth,
)
from .knowledge import (
    NotWellFormed,
    Task,
    compile_task,
    evaluate,
    load_task,
    parse_formula,
    parse_task,
)
from .trainer import RunReport, TrainConfig, gradient_check, train

__version__ = "0.1.0"
