"""Seeding, worker-pool, and serialization helpers.

All randomness in the package flows from one user seed through named
substreams: ``substream(seed, "restart", 3)`` always yields the same
generator no matter where or in what order it is created.  Worker pools
collect results in task order, so outputs never depend on thread count.
"""

import json
import hashlib
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _path_to_ints(path):
    # Stable mapping of mixed str/int labels to uint32 words for spawn keys.
    words = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            words.append(int(part) & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(part).encode("utf-8")))
    return tuple(words)


def substream(seed, *path):
    """Return a Generator for the named substream of ``seed``.

    Parameters
    ----------
    seed : int
        The single user-facing seed.
    *path : str or int
        Substream labels, e.g. ``("fold", 2)`` or ``("restart", 7)``.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=_path_to_ints(path))
    return np.random.default_rng(ss)


def parallel_map(fn, items, threads=None):
    """Map ``fn`` over ``items``, results in input order regardless of pool size."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fmt_float(x):
    """Shortest round-trip decimal text for a float; ``inf`` for infinities."""
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    if np.isnan(x):
        return "nan"
    return repr(x)


def write_csv(path, header, rows):
    """Write rows of already-formatted strings as comma-separated UTF-8."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Read a comma-separated file; returns (header, rows of str lists)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    lines = [ln for ln in lines if ln != ""]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
