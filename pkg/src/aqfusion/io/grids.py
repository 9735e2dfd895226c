"""Raster I/O and elevation resampling.

File layout (ASCII variant)::

    aqgrid 1 ascii
    nx 3
    ny 2
    origin_x 560000.0
    origin_y 6925000.0
    cell_size 10.0
    timestamp 463392
    nodata -9999.0
    clamped 0
    values
    41.5 38.25 -9999.0
    40.0 37.0 36.5

Rows run north to south. The binary variant has ``aqgrid 1 binary`` on the
first line and ends the header with ``payload <nbytes>`` followed by the
values as little-endian float64 in the same order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core import ConcentrationGrid
from ..errors import ConfigurationError, FormatError

MAGIC = "aqgrid"
_REQUIRED = ("nx", "ny", "origin_x", "origin_y", "cell_size")


def _header_lines(grid: ConcentrationGrid, kind):
    nodata = "none" if grid.nodata is None else repr(float(grid.nodata))
    return [
        f"{MAGIC} 1 {kind}",
        f"nx {grid.nx}",
        f"ny {grid.ny}",
        f"origin_x {grid.origin_x!r}",
        f"origin_y {grid.origin_y!r}",
        f"cell_size {grid.cell_size!r}",
        f"timestamp {grid.timestamp}",
        f"nodata {nodata}",
        f"clamped {grid.n_clamped}",
    ]


def write_grid(grid: ConcentrationGrid, path, binary=None):
    """Write ``grid``; binary payload when ``binary`` is True or the suffix is ``.bgrid``."""
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".bgrid"
    if binary:
        payload = np.ascontiguousarray(grid.values, dtype="<f8").tobytes()
        header = _header_lines(grid, "binary") + [f"payload {len(payload)}"]
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(payload)
    else:
        lines = _header_lines(grid, "ascii") + ["values"]
        lines += [" ".join(repr(float(v)) for v in row) for row in grid.values]
        path.write_text("\n".join(lines) + "\n")
    return path


def _parse_header(lines, path):
    if not lines or not lines[0].startswith(MAGIC):
        raise FormatError(f"{path}: missing '{MAGIC}' magic line")
    parts = lines[0].split()
    if len(parts) != 3 or parts[2] not in ("ascii", "binary"):
        raise FormatError(f"{path}: malformed magic line {lines[0]!r}")
    header = {}
    for line in lines[1:]:
        key, _, value = line.strip().partition(" ")
        header[key] = value.strip()
    missing = [k for k in _REQUIRED if k not in header]
    if missing:
        raise FormatError(f"{path}: header lacks {missing}")
    try:
        nx, ny = int(header["nx"]), int(header["ny"])
        ox, oy = float(header["origin_x"]), float(header["origin_y"])
        cs = float(header["cell_size"])
        ts = int(header.get("timestamp", 0))
        clamped = int(header.get("clamped", 0))
        nd = header.get("nodata", "none")
        nodata = None if nd == "none" else float(nd)
    except ValueError as exc:
        raise FormatError(f"{path}: bad header value ({exc})") from None
    if nx <= 0 or ny <= 0:
        raise FormatError(f"{path}: nx and ny must be positive")
    if not cs > 0:
        raise FormatError(f"{path}: cell_size must be > 0")
    return parts[2], dict(nx=nx, ny=ny, ox=ox, oy=oy, cs=cs, ts=ts, nodata=nodata,
                          clamped=clamped, payload=header.get("payload"))


def read_grid(path) -> ConcentrationGrid:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(f"{MAGIC} 1 binary".encode()):
        marker = raw.find(b"\npayload ")
        if marker < 0:
            raise FormatError(f"{path}: binary grid without payload line")
        end = raw.find(b"\n", marker + 1)
        head = raw[:end].decode("ascii").splitlines()
        kind, h = _parse_header(head, path)
        body = raw[end + 1:]
        expected = h["nx"] * h["ny"] * 8
        if h["payload"] is None or int(h["payload"]) != len(body) or len(body) != expected:
            raise FormatError(
                f"{path}: payload has {len(body)} bytes, header implies {expected}"
            )
        values = np.frombuffer(body, dtype="<f8").reshape(h["ny"], h["nx"]).astype(float)
    else:
        text = raw.decode("ascii", errors="replace").splitlines()
        try:
            split = text.index("values")
        except ValueError:
            raise FormatError(f"{path}: no 'values' line") from None
        kind, h = _parse_header(text[:split], path)
        tokens = " ".join(text[split + 1:]).split()
        if len(tokens) != h["nx"] * h["ny"]:
            raise FormatError(
                f"{path}: {len(tokens)} values, header implies {h['nx'] * h['ny']}"
            )
        try:
            values = np.array([float(t) for t in tokens]).reshape(h["ny"], h["nx"])
        except ValueError as exc:
            raise FormatError(f"{path}: bad value ({exc})") from None
    return ConcentrationGrid(h["ox"], h["oy"], h["cs"], values, h["ts"], h["nodata"], h["clamped"])


def resample_elevation(coarse: ConcentrationGrid, target: ConcentrationGrid,
                       tol=1e-9) -> ConcentrationGrid:
    """Bilinear interpolation of ``coarse`` at the cell centres of ``target``.

    Interpolation nodes are the coarse cell centres, so the target centres must
    lie inside their convex hull. Any nodata neighbour makes the output cell
    nodata.
    """
    cs = coarse.cell_size
    node_x0 = coarse.origin_x + 0.5 * cs
    # coarse row index grows southwards
    node_ytop = coarse.origin_y + (coarse.ny - 0.5) * cs
    tx, ty = target.cell_centers()
    fx = (tx - node_x0) / cs
    fy = (node_ytop - ty) / cs
    if (fx.min() < -tol or fy.min() < -tol or fx.max() > coarse.nx - 1 + tol
            or fy.max() > coarse.ny - 1 + tol):
        raise ConfigurationError(
            "coarse raster does not cover the target extent "
            f"(needs node range x in [{tx.min():.1f}, {tx.max():.1f}], "
            f"y in [{ty.min():.1f}, {ty.max():.1f}])"
        )
    if coarse.nx < 2 or coarse.ny < 2:
        raise ConfigurationError("coarse raster needs at least 2x2 cells to interpolate")
    i0 = np.clip(np.floor(fx).astype(int), 0, coarse.nx - 2)
    j0 = np.clip(np.floor(fy).astype(int), 0, coarse.ny - 2)
    wx = np.clip(fx - i0, 0.0, 1.0)
    wy = np.clip(fy - j0, 0.0, 1.0)
    v = coarse.values
    bad = coarse.nodata_mask
    v00, v01 = v[j0, i0], v[j0, i0 + 1]
    v10, v11 = v[j0 + 1, i0], v[j0 + 1, i0 + 1]
    out = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11)
    # exact reproduction at coincident nodes
    on_x, on_y = wx == 0.0, wy == 0.0
    out = np.where(on_x & on_y, v00, out)
    nodata_out = bad[j0, i0] | bad[j0, i0 + 1] | bad[j0 + 1, i0] | bad[j0 + 1, i0 + 1]
    fill = coarse.nodata if coarse.nodata is not None else np.nan
    out = np.where(nodata_out, fill, out)
    return ConcentrationGrid(target.origin_x, target.origin_y, target.cell_size, out,
                             coarse.timestamp, coarse.nodata)
