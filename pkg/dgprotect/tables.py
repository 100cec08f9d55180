"""CSV and aligned-text writers shared by every export."""

import os
import logging

import pandas as pd

logger = logging.getLogger(__name__)

FORMATS = ("csv", "text")
EXTENSIONS = {"csv": ".csv", "text": ".txt"}


def render(frame: pd.DataFrame, fmt: str = "csv", float_format: str = "%.3f") -> str:
    if fmt == "csv":
        return frame.to_csv(index=False, lineterminator="\n", float_format=float_format)
    if fmt == "text":
        if frame.empty:
            return "  ".join(str(c) for c in frame.columns) + "\n"
        formatters = {
            column: (lambda v, f=float_format: "" if pd.isna(v) else f % v)
            for column in frame.columns
            if pd.api.types.is_float_dtype(frame[column])
        }
        return frame.to_string(index=False, na_rep="", formatters=formatters) + "\n"
    raise ValueError(f"unknown output format '{fmt}'")


def write_table(frame: pd.DataFrame, directory: str, stem: str, fmt: str = "csv", float_format: str = "%.3f") -> str:
    """Writes frame as <directory>/<stem>.csv or .txt and returns the path."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, stem + EXTENSIONS[fmt])
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(render(frame, fmt, float_format))
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path
