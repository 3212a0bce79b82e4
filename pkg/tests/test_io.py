import json

import numpy as np
import pytest

from oseenlab.grid import Grid, VorticityState
from oseenlab.io import write_snapshot, read_snapshot, read_header, FORMAT
from oseenlab.evolution import EvolutionControls, Trajectory, evolve_core
from oseenlab.fields import perturbed_oseen


def test_snapshot_bit_exact(tmp_path, small):
    w = perturbed_oseen(small, 1.3, 0.1, seed=2, tau=0.25, gauge="core")
    w.meta["note"] = "x"
    p = write_snapshot(tmp_path / "s.bin", w)
    r = read_snapshot(p)
    assert np.array_equal(r.array, w.array)
    assert (r.tau, r.alpha, r.gauge, r.real, r.meta) == (0.25, 1.3, "core", True, w.meta)
    assert r.meta["note"] == "x"
    assert r.grid == small


def test_header(tmp_path, small):
    p = write_snapshot(tmp_path / "s.bin", VorticityState.oseen(small, 1.0))
    h = read_header(p)
    assert h["format"] == FORMAT and h["component_shape"] == [small.n_modes, 64, 64]
    assert p.stat().st_size == len(json.dumps(h, sort_keys=True)) + 1 + 3 * 16 * small.n_modes * 64 * 64


def test_rejects_bad_files(tmp_path, small):
    p = write_snapshot(tmp_path / "s.bin", VorticityState.oseen(small, 1.0))
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "t.bin")
    (tmp_path / "u.bin").write_bytes(raw.replace(FORMAT.encode(), b"other-format/1"))
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "u.bin")


def test_trajectory_round_trip(tmp_path, small):
    w = perturbed_oseen(small, 1.0, 0.05, seed=1, gauge="core")
    t = evolve_core(w, 0.1, EvolutionControls(dt=0.02, snapshot_stride=2), provenance={"k": 1})
    t.save(tmp_path / "traj")
    r = Trajectory.load(tmp_path / "traj")
    assert len(r) == len(t) and r.controls == t.controls and r.provenance["k"] == 1
    for a, b in zip(r.states, t.states):
        assert a.tau == b.tau and np.array_equal(a.array, b.array)
    assert (tmp_path / "traj" / "manifest.json").exists()
