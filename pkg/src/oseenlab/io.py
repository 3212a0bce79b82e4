"""Snapshot and trajectory persistence.

A snapshot file is one JSON header line followed by raw little-endian
float64 blocks, real and imaginary parts interleaved, one block per
component.  Round trips are bit-exact.
"""

import json
from pathlib import Path

import numpy as np

from .grid import Grid, VorticityState

FORMAT = "oseenlab-snapshot/1"
_DTYPE = np.dtype("<f8")


def write_snapshot(path, state):
    """Write a VorticityState to ``path``."""
    g = state.grid
    arr = np.ascontiguousarray(state.array, dtype=complex)
    header = {
        "format": FORMAT,
        "grid": g.params(),
        "tau": state.tau,
        "alpha": state.alpha,
        "gauge": state.gauge,
        "real": bool(state.real),
        "endianness": "little",
        "dtype": "float64",
        "layout": "interleaved-complex",
        "component_shape": list(arr.shape[1:]),
        "components": ["wxi1", "wxi2", "wz"],
        "meta": state.meta,
    }
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for comp in arr:
            inter = np.empty(comp.shape + (2,), dtype=_DTYPE)
            inter[..., 0] = comp.real
            inter[..., 1] = comp.imag
            fh.write(inter.tobytes())
    return path


def read_header(path):
    with open(path, "rb") as fh:
        return json.loads(fh.readline())


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not an {FORMAT} file")
        if header.get("endianness") != "little":
            raise ValueError(f"{path}: unsupported endianness")
        shape = tuple(header["component_shape"])
        data = np.frombuffer(fh.read(), dtype=_DTYPE)
    n = int(np.prod(shape)) * 2
    if data.size != 3 * n:
        raise ValueError(f"{path}: expected {3 * n} floats, found {data.size}")
    comps = []
    for i in range(3):
        blk = data[i * n:(i + 1) * n].reshape(shape + (2,))
        comps.append(blk[..., 0] + 1j * blk[..., 1])
    grid = Grid(**header["grid"])
    return VorticityState.from_array(grid, np.stack(comps), header["tau"], header["alpha"],
                                     header["gauge"], header["real"], header.get("meta"))


def save_trajectory(directory, states, controls, provenance):
    """Directory of snapshot files plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = []
    for i, s in enumerate(states):
        name = f"snapshot_{i:05d}.bin"
        write_snapshot(d / name, s)
        index.append({"file": name, "tau": s.tau})
    manifest = {"format": "oseenlab-trajectory/1", "controls": controls,
                "provenance": provenance, "snapshots": index}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_trajectory(directory):
    """Returns ``(states, controls_dict, provenance)``."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    states = [read_snapshot(d / e["file"]) for e in manifest["snapshots"]]
    return states, manifest["controls"], manifest["provenance"]
