"""Small file helpers shared by the report writers."""
import hashlib
import json
from pathlib import Path
from typing import Any

import pandas as pd

# Full precision, locale-free float formatting for machine-readable files.
FLOAT_FORMAT = "%.17g"


def sha256_file(path: Path) -> str:
    """Return the hex SHA-256 digest of a file."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_frame(frame: pd.DataFrame, path: Path, index: bool = True, float_format: str = FLOAT_FORMAT) -> Path:
    """
    Write a DataFrame as CSV with deterministic formatting.

    Ensures the parent directory exists and uses '\\n' line endings so that
    bundles hash identically across platforms.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format=float_format, lineterminator="\n")
    return path


def write_json(data: Any, path: Path) -> Path:
    """Write JSON with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=str)
        f.write('\n')
    return path


def read_json(path: Path) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
