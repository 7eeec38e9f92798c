import itertools
import json
import logging
import math
import os
from datetime import datetime

import click
import numpy as np
import pandas as pd
import toolz

import dask
import dask.config

logger = logging.getLogger(__name__)

CONFIG_PREFIX = "paneitz-lab"


def get_config(key, value=None):
    """Resolve a tunable, preferring an explicit value over the dask config.

    Parameters
    ----------
    key: str
        Key below the ``paneitz-lab`` namespace, e.g. ``"minimize.tol"``.
    value: object or None
        Explicit value passed by the caller. ``None`` means "use the config".

    Examples
    --------
    >>> get_config("minimize.armijo")
    0.0001
    >>> get_config("minimize.armijo", 1e-3)
    0.001
    """
    if value is not None:
        return value
    return dask.config.get(f"{CONFIG_PREFIX}.{key}")


def ordered_map(func, items, scheduler=None):
    """Apply ``func`` to every item, possibly in parallel, keeping input order.

    Uses ``dask.delayed`` with the scheduler from
    ``paneitz-lab.sweep.scheduler`` (threads by default). Results come back
    in the order of ``items`` regardless of completion order.
    """
    items = list(items)
    if not items:
        return []
    scheduler = get_config("sweep.scheduler", scheduler)
    tasks = [dask.delayed(func)(item) for item in items]
    return list(dask.compute(*tasks, scheduler=scheduler))


class CommaSeparatedFloats(click.ParamType):
    """Click parameter accepting ``"0.1,0,0,0"``-style float lists."""

    name = "floats"

    def __init__(self, sizes=None):
        self.sizes = tuple(sizes) if sizes is not None else None

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple, np.ndarray)):
            return np.asarray(value, dtype=float)
        try:
            values = np.array([float(v) for v in value.split(",")])
        except ValueError:
            self.fail(f"invalid float list: {value!r}", param, ctx)
        if self.sizes is not None and values.size not in self.sizes:
            sizes_str = " or ".join(str(s) for s in self.sizes)
            self.fail(
                f"expected {sizes_str} comma-separated values, got {values.size}",
                param,
                ctx,
            )
        return values


def parse_scalar(text):
    """Parse a config/CLI scalar: int, float (including ``inf``), or string."""
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_sweep_config(path):
    """Read a flat ``key = v1, v2, ...`` sweep file.

    Blank lines and ``#`` comments are skipped. Every value list is parsed
    with :func:`parse_scalar`. Duplicate keys are rejected.

    Returns
    -------
    dict
        Mapping of key to list of values, in file order.
    """
    grid = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, values = line.partition("=")
            key = key.strip()
            if key in grid:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            grid[key] = [parse_scalar(v) for v in values.split(",") if v.strip()]
            if not grid[key]:
                raise ValueError(f"{path}:{lineno}: key {key!r} has no values")
    return grid


def expand_grid(grid):
    """Cartesian product of a sweep grid, one dict per combination."""
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*grid.values())]


def to_jsonable(obj):
    """Convert results (NamedTuples, arrays, frames) into JSON-ready objects."""
    if hasattr(obj, "to_dict") and not isinstance(obj, pd.DataFrame):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, pd.DataFrame):
        return to_jsonable(obj.to_dict(orient="records"))
    if isinstance(obj, tuple) and hasattr(obj, "_asdict"):
        return to_jsonable(obj._asdict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _finite_json(obj):
    """Spell non-finite floats as the strings ``"inf"``, ``"-inf"`` and ``"nan"``."""
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_json(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def flatten(mapping, prefix=""):
    """Flatten nested dicts/lists into ``a.b`` / ``a[0]`` keyed scalars."""
    out = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, prefix=f"{name}."))
        elif isinstance(value, list) and all(not isinstance(v, (dict, list)) for v in value):
            out.update({f"{name}[{i}]": v for i, v in enumerate(value)})
        else:
            out[name] = value
    return out


def render(document, table=None, fmt="json"):
    """Render an output document as JSON or CSV text.

    JSON is strict: infinities and NaN are written as the strings ``"inf"``,
    ``"-inf"`` and ``"nan"``, which :func:`parse_scalar` reads back. For CSV
    the ``table`` frame is written when given, otherwise the flattened document
    becomes a single row.
    """
    if fmt == "json":
        document = _finite_json(to_jsonable(document))
        return json.dumps(document, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if fmt == "csv":
        if table is None:
            table = pd.DataFrame([flatten(to_jsonable(document))])
        return table.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    raise ValueError(f"unknown output format {fmt!r}; expected 'json' or 'csv'")


def resolve_output_path(output):
    """Place relative output paths below ``paneitz-lab.output-directory``."""
    if output is None or output == "-":
        return None
    directory = dask.config.get(f"{CONFIG_PREFIX}.output-directory", default=None)
    if directory and not os.path.isabs(output):
        output = os.path.join(directory, output)
    return output


def save_output(text, output):
    """Write rendered output, never clobbering an existing file.

    Parameters
    ----------
    text: str
        Rendered document.
    output: str or None
        Target path, ``None``/``"-"`` for standard output.

    Notes
    -----
    If the target exists the basename is uniquified by appending the ISO date
    and a sequence number. Returns the path written, or ``None`` for stdout.
    """
    path = resolve_output_path(output)
    if path is None:
        click.echo(text, nl=False)
        return None

    base, ext = os.path.splitext(path)
    new_path = path
    sequence = itertools.count()
    while os.path.exists(new_path):
        now = datetime.now().strftime("%Y%m%d")
        new_path = f"{base}-{now}.{next(sequence)}{ext}"
    directory = os.path.dirname(new_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(new_path, "w") as f:
        f.write(text)
    logger.info("Wrote %s", new_path)
    return new_path


@toolz.memoize
def timestamp():
    """Process-wide run timestamp, stable across documents of one run."""
    return datetime.now().isoformat(timespec="seconds")
