"""Adaptive keyframe selection over a posed frame stream."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from .config import KeyframeConfig
from .exceptions import EmptyStreamError
from .geometry import CameraPose

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KeyframeSet:
    """Indices of the retained frames and the thresholds that produced them."""

    indices: Tuple[int, ...]
    final_tau_t: float
    final_tau_r: float
    iterations_used: int

    def __len__(self) -> int:
        return len(self.indices)


def _stack(poses: Sequence[CameraPose]) -> Tuple[np.ndarray, np.ndarray]:
    rotations = np.stack([p.rotation for p in poses])
    translations = np.stack([p.translation for p in poses])
    return rotations, translations


def _scan(
    rotations: np.ndarray, translations: np.ndarray, tau_t: float, tau_r: float
) -> List[int]:
    kept = [0]
    last = 0
    n = len(translations)

    while last < n - 1:
        rest = slice(last + 1, n)
        moved = np.linalg.norm(translations[rest] - translations[last], axis=1)
        # trace(R_a^T R_b) is the elementwise product sum
        trace = np.einsum("ij,kij->k", rotations[last], rotations[rest])
        turned = np.degrees(np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0)))

        exceeded = np.flatnonzero((moved > tau_t) | (turned > tau_r))
        if exceeded.size == 0:
            break
        last = last + 1 + int(exceeded[0])
        kept.append(last)

    return kept


def scan_keyframes(
    poses: Sequence[CameraPose], tau_t: float, tau_r: float
) -> List[int]:
    """Single order-preserving pass keeping frames that moved enough.

    A frame is kept when its translation from the last kept frame exceeds
    ``tau_t`` meters or its rotation exceeds ``tau_r`` degrees. Frame 0 is
    always kept.

    Raises:
        EmptyStreamError: If ``poses`` is empty.
    """

    if len(poses) == 0:
        raise EmptyStreamError("Cannot select keyframes from an empty pose stream")

    rotations, translations = _stack(poses)
    return _scan(rotations, translations, tau_t, tau_r)


def _closer(candidate: KeyframeSet, best: Optional[KeyframeSet], n_target: int) -> bool:
    if best is None:
        return True
    return (abs(len(candidate) - n_target), len(candidate)) < (
        abs(len(best) - n_target),
        len(best),
    )


def select_keyframes(poses: Sequence[CameraPose], cfg: Any = None) -> KeyframeSet:
    """Scale both thresholds until roughly ``n_target`` keyframes survive.

    Both thresholds are multiplied by ``alpha_inc`` while too many frames are
    kept and by ``alpha_dec`` while too few are, until the count is within
    ``tolerance`` of ``n_target``. Without convergence the iteration closest to
    the target wins, ties going to the smaller set.

    Args:
        poses: Camera poses in stream order.
        cfg: A :class:`ambiver.config.KeyframeConfig`, a mapping of its fields
            or ``None`` for the defaults.

    Returns:
        KeyframeSet: The selected indices and the final thresholds.

    Raises:
        EmptyStreamError: If ``poses`` is empty.
    """

    cfg = KeyframeConfig.from_value(cfg)
    if len(poses) == 0:
        raise EmptyStreamError("Cannot select keyframes from an empty pose stream")

    if len(poses) <= cfg.n_target:
        return KeyframeSet(tuple(range(len(poses))), cfg.tau_t_init, cfg.tau_r_init, 1)

    rotations, translations = _stack(poses)
    tau_t, tau_r = cfg.tau_t_init, cfg.tau_r_init
    best: Optional[KeyframeSet] = None

    for iteration in range(1, cfg.max_iterations + 1):
        indices = _scan(rotations, translations, tau_t, tau_r)
        current = KeyframeSet(tuple(indices), tau_t, tau_r, iteration)
        logger.debug(
            "keyframe iteration %d: %d kept (tau_t=%.4f m, tau_r=%.3f deg)",
            iteration,
            len(indices),
            tau_t,
            tau_r,
        )

        if _closer(current, best, cfg.n_target):
            best = current

        if abs(len(indices) - cfg.n_target) <= cfg.tolerance:
            return current

        factor = cfg.alpha_inc if len(indices) > cfg.n_target else cfg.alpha_dec
        tau_t *= factor
        tau_r *= factor

    assert best is not None
    logger.info(
        "keyframe selection did not converge in %d iterations; keeping %d frames",
        cfg.max_iterations,
        len(best),
    )
    return replace(best, iterations_used=cfg.max_iterations)


def uniform_keyframes(n_frames: int, n_target: int) -> KeyframeSet:
    """Every ``n_frames // n_target``-th frame, the temporal-sampling baseline."""

    if n_frames <= 0:
        raise EmptyStreamError("Cannot select keyframes from an empty pose stream")
    step = max(1, n_frames // max(1, n_target))
    return KeyframeSet(tuple(range(0, n_frames, step)), 0.0, 0.0, 0)


__all__ = ["KeyframeSet", "scan_keyframes", "select_keyframes", "uniform_keyframes"]
