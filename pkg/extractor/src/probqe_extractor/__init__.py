"""Model-side adapter emitting probqe step-distribution corpora."""

from .adapter import (
    ExtractionError,
    ExtractionJob,
    ExtractionReport,
    HeadOverflowError,
    build_head,
    extract,
)

__all__ = [
    "ExtractionError",
    "ExtractionJob",
    "ExtractionReport",
    "HeadOverflowError",
    "build_head",
    "extract",
]
