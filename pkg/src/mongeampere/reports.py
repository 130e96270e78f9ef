"""Report dataclasses and canonical serialization.

Reports are written as JSON with sorted keys and newline termination so that
repeated runs with identical inputs produce byte-identical files.  Wall-clock
measurements never enter a report; runtime gates reduce to booleans upstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(payload))


def write_csv(path, header, rows) -> None:
    """Plain delimited output, 17 significant digits, one row per line."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(x) for x in row) + "\n")


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _round_trip(x):
    """Make a payload JSON-clean: numpy scalars to python, arrays to lists."""
    if isinstance(x, dict):
        return {k: _round_trip(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round_trip(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, np.ndarray):
        return _round_trip(x.tolist())
    return x


@dataclass
class SolveReport:
    """Convergence and certificate diagnostics of one solve.

    hoelder_q25/q50 are max gradient-difference quotients |grad v(x) -
    grad v(y)| / |x - y|^alpha over a deterministic node-pair sample.
    """

    iterations: int
    residual_inf: float
    sigma: float
    floored_nodes: int
    convexity_defect: float
    hoelder_q25: float
    hoelder_q50: float
    # Extra non-contract diagnostics; not part of the JSON object.
    continuation: list = field(default_factory=list, repr=False)
    newton_trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return _round_trip(
            {
                "iterations": self.iterations,
                "residual_inf": self.residual_inf,
                "sigma": self.sigma,
                "floored_nodes": self.floored_nodes,
                "convexity_defect": self.convexity_defect,
                "hoelder_q25": self.hoelder_q25,
                "hoelder_q50": self.hoelder_q50,
            }
        )


@dataclass
class StructureReport:
    """Diagnostics backing the entire-solution structure decomposition."""

    a_matrix: list
    b_vector: list
    gamma: float
    quotient_table: list
    decay: dict
    scaling_errors: list
    h_stats: list
    doubling: dict
    harnack: list
    concavity: dict

    def to_dict(self) -> dict:
        return _round_trip(
            {
                "a_matrix": self.a_matrix,
                "b_vector": self.b_vector,
                "gamma": self.gamma,
                "quotient_table": self.quotient_table,
                "decay": self.decay,
                "scaling_errors": self.scaling_errors,
                "h_stats": self.h_stats,
                "doubling": self.doubling,
                "harnack": self.harnack,
                "concavity": self.concavity,
            }
        )


def hoelder_quotients(points, grads, alphas=(0.25, 0.5), periods=None, cap=4096):
    """Max Hoelder quotients of a discrete gradient over node pairs.

    points/grads are (m, n) arrays.  Above `cap` points, a deterministic
    strided sublattice is taken first by the caller; here we just chunk the
    all-pairs scan.  periods enables minimum-image distances on a torus.
    """
    pts = np.asarray(points, dtype=float)
    g = np.asarray(grads, dtype=float)
    m = pts.shape[0]
    best = {a: 0.0 for a in alphas}
    step = max(1, min(m, 512))
    for lo in range(0, m, step):
        chunk = slice(lo, min(lo + step, m))
        diff = pts[chunk, None, :] - pts[None, :, :]
        if periods is not None:
            per = np.asarray(periods, dtype=float)
            diff = np.abs(diff)
            diff = np.minimum(diff, per - diff)
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        gdiff = np.sqrt(np.sum((g[chunk, None, :] - g[None, :, :]) ** 2, axis=-1))
        pos = dist > 0
        for a in alphas:
            q = np.zeros_like(dist)
            q[pos] = gdiff[pos] / dist[pos] ** a
            if q.size:
                best[a] = max(best[a], float(q.max()))
    return best


def strided_subsample(shape, cap=4096):
    """Deterministic per-axis stride pulling a grid under the pair-scan cap."""
    size = int(np.prod(shape))
    n = len(shape)
    stride = 1
    while size > cap:
        stride *= 2
        size = int(np.prod([len(range(0, m, stride)) for m in shape]))
    return tuple(slice(0, m, stride) for m in shape)
