"""Structure-aware relational table encoder (C++ core, Python bindings)."""

from ._turl import (
    Bm25Index,
    ConfigError,
    CorruptCheckpoint,
    Error,
    IoError,
    MissingSideData,
    Model,
    ParseError,
    Sequence,
    ShapeMismatch,
    Table,
    TableTooSmall,
    UnknownId,
    VersionMismatch,
    Vocabularies,
    linearize,
    metrics,
    read_tables,
    run_cli,
    tokenize,
    write_synthetic_corpus,
)

__all__ = [
    "Bm25Index",
    "ConfigError",
    "CorruptCheckpoint",
    "Error",
    "IoError",
    "MissingSideData",
    "Model",
    "ParseError",
    "Sequence",
    "ShapeMismatch",
    "Table",
    "TableTooSmall",
    "UnknownId",
    "VersionMismatch",
    "Vocabularies",
    "linearize",
    "metrics",
    "read_tables",
    "run_cli",
    "tokenize",
    "write_synthetic_corpus",
]
