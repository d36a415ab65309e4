"""
Result files: CSV tables with a config-hash comment line, key-value
sidecars and optional SVG charts drawn from the CSVs.
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import ConfigError

logger = logging.getLogger(__name__)

HASH_PREFIX = "# config_hash="


def format_cell(value: Any) -> str:
    """Deterministic text of a cell; floats use ``repr``."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "item"):
        # numpy scalars
        return format_cell(value.item())
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return str(value)


def write_csv(
    path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], config_hash: str
) -> Path:
    """Write ``rows`` under a ``# config_hash=`` line and a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"{HASH_PREFIX}{config_hash}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            if len(row) != len(header):
                raise ConfigError(
                    f"Row of {len(row)} cells does not match "
                    f"{len(header)} columns in {path}"
                )
            writer.writerow([format_cell(v) for v in row])
    logger.debug(f"Wrote {len(rows)} rows to {path}")
    return path


def read_csv(path: Path) -> Tuple[str, List[str], List[List[str]]]:
    """Return (config_hash, header, rows) of a file written by ``write_csv``."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as f:
        first = f.readline().rstrip("\n")
        if not first.startswith(HASH_PREFIX):
            raise ConfigError(f"{path} does not start with a config hash line")
        reader = csv.reader(f)
        header = next(reader)
        rows = [row for row in reader]
    return first[len(HASH_PREFIX) :], header, rows


def read_columns(path: Path, columns: Sequence[str]) -> Dict[str, List[float]]:
    """Numeric columns by name; non-numeric cells become NaN."""
    _, header, rows = read_csv(path)
    missing = [c for c in columns if c not in header]
    if missing:
        raise ConfigError(f"{path} has no columns {missing}")
    result: Dict[str, List[float]] = {}
    for column in columns:
        index = header.index(column)
        values = []
        for row in rows:
            try:
                values.append(float(row[index]))
            except ValueError:
                values.append(float("nan"))
        result[column] = values
    return result


def write_sidecar(path: Path, values: Mapping[str, Any], config_hash: str) -> Path:
    """``key = value`` lines, hash first, keys in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"config_hash = {config_hash}"]
    lines.extend(f"{key} = {format_cell(value)}" for key, value in values.items())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_sidecar(path: Path) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def plot_csv(
    csv_path: Path,
    x: str,
    ys: Sequence[str],
    svg_path: Optional[Path] = None,
    title: Optional[str] = None,
    logx: bool = False,
    logy: bool = False,
) -> Optional[Path]:
    """
    Line chart of columns ``ys`` against ``x`` saved as SVG.

    Returns None when matplotlib is not installed.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib is not installed; skipping plots")
        return None

    data = read_columns(csv_path, [x, *ys])
    target = Path(csv_path).with_suffix(".svg") if svg_path is None else Path(svg_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    for column in ys:
        ax.plot(data[x], data[column], marker=".", label=column)
    ax.set_xlabel(x)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_title(title or Path(csv_path).stem)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.savefig(target, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote chart {target}")
    return target
