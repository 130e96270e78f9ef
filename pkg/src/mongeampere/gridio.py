"""Reader/writer for the ma-grid v1 text format.

Layout: one header line

    # ma-grid v1 n=<n> dims=<N1,...> origin=<o1,...> spacing=<h1,...> periodic=<p1,...>

followed by one value per line in row-major order, printed with 17 significant
digits so float64 round-trips bit-exactly.  Masked box nodes are written as nan.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np

from .errors import InvalidArgument
from .lattice import BoxLattice, PeriodicField, ScalarField, TorusLattice

_MAGIC = "# ma-grid v1"


def _fmt(values: np.ndarray) -> str:
    return "\n".join(f"{v:.17g}" for v in values.ravel(order="C"))


def write_grid(path, field) -> None:
    """Write a PeriodicField or ScalarField; masked nodes become nan."""
    if isinstance(field, PeriodicField):
        lat = field.lattice
        origin = (0.0,) * lat.n
        periodic = (1,) * lat.n
        dims = lat.resolution
        values = field.values
    elif isinstance(field, ScalarField):
        lat = field.lattice
        origin = lat.lo
        periodic = (0,) * lat.n
        dims = lat.shape
        values = field.values.copy()
        values[~field.valid_mask] = np.nan
    else:
        raise InvalidArgument(f"cannot serialize {type(field).__name__}")

    def csv(seq, spec="g"):
        return ",".join(format(x, ".17g" if spec == "g" else "d") for x in seq)

    header = (
        f"{_MAGIC} n={lat.n} dims={csv(dims, 'd')} origin={csv(origin)} "
        f"spacing={csv(lat.spacing)} periodic={csv(periodic, 'd')}"
    )
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.write(_fmt(values))
        fh.write("\n")


def read_grid(path):
    """Parse an ma-grid v1 file into a PeriodicField or ScalarField."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        body = fh.read()
    if not header.startswith(_MAGIC):
        raise InvalidArgument(f"{path}: not an ma-grid v1 file")
    fields = {}
    for tok in header[len(_MAGIC):].split():
        if "=" not in tok:
            raise InvalidArgument(f"{path}: malformed header token {tok!r}")
        key, _, val = tok.partition("=")
        fields[key] = val
    try:
        n = int(fields["n"])
        dims = tuple(int(s) for s in fields["dims"].split(","))
        origin = tuple(float(s) for s in fields["origin"].split(","))
        spacing = tuple(float(s) for s in fields["spacing"].split(","))
        periodic = tuple(int(s) for s in fields["periodic"].split(","))
    except (KeyError, ValueError) as exc:
        raise InvalidArgument(f"{path}: bad header ({exc})") from exc
    if not (len(dims) == len(origin) == len(spacing) == len(periodic) == n):
        raise InvalidArgument(f"{path}: header lengths disagree with n={n}")

    values = np.loadtxt(io.StringIO(body), dtype=float, ndmin=1)
    expected = int(np.prod(dims))
    if values.size != expected:
        raise InvalidArgument(f"{path}: expected {expected} values, found {values.size}")
    values = values.reshape(dims, order="C")

    if all(p == 1 for p in periodic):
        if any(abs(o) > 1e-12 for o in origin):
            raise InvalidArgument(f"{path}: periodic grid must have zero origin")
        lat = TorusLattice(tuple(h * m for h, m in zip(spacing, dims)), dims)
        return PeriodicField(lat, values)
    if any(p == 1 for p in periodic):
        raise InvalidArgument(f"{path}: mixed periodicity is not supported")
    hi = tuple(o + h * (m - 1) for o, h, m in zip(origin, spacing, dims))
    lat = BoxLattice(origin, hi, dims)
    mask = np.isfinite(values)
    return ScalarField(lat, values, None if mask.all() else mask)


def file_checksum(path) -> str:
    """sha256 of the raw bytes, as recorded in run reports."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
