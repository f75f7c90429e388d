"""Tests for keyframe scanning and adaptive threshold search."""

import numpy as np
import pytest

from ambiver.config import KeyframeConfig
from ambiver.exceptions import EmptyStreamError
from ambiver.geometry import CameraPose
from ambiver.keyframes import scan_keyframes, select_keyframes, uniform_keyframes


def _line(n, step):
    return [CameraPose(np.eye(3), [i * step, 0.0, 0.0], i) for i in range(n)]


def test_scan_examples():
    """Ten frames 1 m apart, and ten identical frames."""

    poses = _line(10, 1.0)
    assert scan_keyframes(poses, 1.5, 10.0) == [0, 2, 4, 6, 8]
    assert scan_keyframes(poses, 0.5, 10.0) == list(range(10))
    assert scan_keyframes(_line(10, 0.0), 0.01, 0.01) == [0]


def test_scan_keeps_rotations():
    """A camera spinning in place is sampled by its rotation threshold."""

    poses = []
    for i in range(12):
        a = np.radians(10.0 * i)
        r = np.array(
            [[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0, 0, 1.0]]
        )
        poses.append(CameraPose(r, np.zeros(3), i))
    assert scan_keyframes(poses, 1.0, 25.0) == [0, 3, 6, 9]


def test_scan_empty_stream():
    """An empty stream is an error."""

    with pytest.raises(EmptyStreamError):
        scan_keyframes([], 0.1, 15.0)
    with pytest.raises(EmptyStreamError):
        select_keyframes([])


def test_scan_count_is_monotone_in_thresholds():
    """Raising the thresholds never keeps more frames."""

    poses = _line(300, 0.0137)
    thresholds = np.linspace(0.01, 1.0, 25)
    counts = [len(scan_keyframes(poses, tau, 180.0)) for tau in thresholds]
    assert counts == sorted(counts, reverse=True)


def test_short_stream_keeps_everything():
    """Streams no longer than the target are returned whole."""

    result = select_keyframes(_line(50, 0.5))
    assert result.indices == tuple(range(50))
    assert result.iterations_used == 1


def test_adaptive_search_converges_near_target():
    """A long stream ends within the tolerance band of the target."""

    result = select_keyframes(_line(2000, 0.0123))
    assert 95 <= len(result) <= 105
    assert result.indices[0] == 0
    assert list(result.indices) == sorted(result.indices)
    assert result.final_tau_t > KeyframeConfig().tau_t_init


def test_adaptive_search_lowers_thresholds_for_sparse_streams():
    """Too few frames shrink both thresholds."""

    cfg = {"n_target": 20, "tolerance": 2}
    result = select_keyframes(_line(100, 0.0123), cfg)
    assert 18 <= len(result) <= 22
    assert result.final_tau_t < KeyframeConfig().tau_t_init


def test_non_convergence_returns_closest_iteration():
    """Without convergence the closest attempt is returned."""

    cfg = KeyframeConfig(n_target=40, tolerance=0, max_iterations=1)
    result = select_keyframes(_line(100, 0.0123), cfg)
    assert result.iterations_used == 1
    assert len(result) == len(scan_keyframes(_line(100, 0.0123), 0.1, 15.0))


def test_uniform_keyframes():
    """The temporal baseline keeps every step-th frame."""

    assert uniform_keyframes(10, 3).indices == (0, 3, 6, 9)
    assert uniform_keyframes(5, 10).indices == (0, 1, 2, 3, 4)
    with pytest.raises(EmptyStreamError):
        uniform_keyframes(0, 10)


def test_identical_poses_run_to_max_iterations():
    """A stream that never moves keeps frame 0 and stops at the iteration cap."""

    cfg = KeyframeConfig(n_target=5, tolerance=0, max_iterations=7)
    result = select_keyframes(_line(10, 0.0), cfg)
    assert result.indices == (0,)
    assert result.iterations_used == 7
