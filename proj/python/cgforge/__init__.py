"""Python bindings for cgforge."""

import json

from ._core import (
    DataError,
    Error,
    Learner,
    MismatchError,
    ParseError,
    Program,
    contrastive_loss,
    desk_config,
    generate_corpus,
    parse_programs,
    symbolize,
    tokenize,
)
from ._core import evaluate as _evaluate

__all__ = [
    "DataError",
    "Error",
    "Learner",
    "MismatchError",
    "ParseError",
    "Program",
    "contrastive_loss",
    "desk_config",
    "evaluate",
    "generate_corpus",
    "parse_programs",
    "symbolize",
    "tokenize",
]


def evaluate(d, labels, threshold=0.5, callsites=()):
    """Precision, recall, F1, PR curve and (with callsites) AICT as a dict."""
    return json.loads(_evaluate(list(d), list(labels), threshold, list(callsites)))
