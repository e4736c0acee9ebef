"""Sentiment classifiers (n-gram LM, NB-SVM, paragraph vectors) and their ensemble."""

from ._core import (
    CorpusError,
    EnsembleError,
    KneserNeyModel,
    NbsvmError,
    NbsvmModel,
    NgramError,
    build_huffman,
    calibrate_generative,
    combine,
    extract_grams,
    grid_search,
    load_arpa,
    run_cli,
    tokenize,
    train_kneser_ney,
    train_nbsvm,
)

__all__ = [
    "CorpusError",
    "EnsembleError",
    "KneserNeyModel",
    "NbsvmError",
    "NbsvmModel",
    "NgramError",
    "build_huffman",
    "calibrate_generative",
    "combine",
    "extract_grams",
    "grid_search",
    "load_arpa",
    "run_cli",
    "tokenize",
    "train_kneser_ney",
    "train_nbsvm",
]
