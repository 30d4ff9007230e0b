"""Per-channel EEG input attribution via expected gradients.

Attribution integrates the model gradient along paths from baseline EEG
windows to the sample's EEG, holding the speech streams fixed. The target
is the correct-class score margin, so positive attribution marks input
that moved the decision toward the labelled stream. Channel importance
averages attribution magnitude over samples and time; the difference of
two normalized importance maps localizes where two models disagree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import model as mm
from . import tensor as tt
from .data import CHANNEL_NAMES_32, FeatureTensor, write_feature_file
from .model import ModelParams
from .tensor import Tape, Tensor


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, (FeatureTensor, Tensor)) else np.asarray(x)


def _margin_signs(y: int) -> np.ndarray:
    # +1 on the labelled stream's score, -1 on the other
    if y not in (1, 2):
        raise ValueError(f"label must be 1 or 2, got {y}")
    return np.array([1.0, -1.0] if y == 1 else [-1.0, 1.0], dtype=np.float32)


def expected_gradients(
    params,
    sample,
    baseline_pool: Sequence,
    n_draws: int = 32,
    seed: int = 0,
    chunk: int = 64,
) -> np.ndarray:
    """Expected-gradients attribution of the EEG input, shape (C, T).

    Each draw picks a baseline B from the pool and a position alpha on the
    straight path from B to the sample's EEG; the attribution estimate is
    the average of (E - B) * grad evaluated at those path points. The
    speech streams stay fixed at the sample's own windows. Deterministic
    for a given seed.

    ``params`` is normally :class:`ModelParams`; a callable
    ``(eeg, [s1, s2], tape) -> scores`` may be substituted to attribute
    any other scoring function with the same batch conventions.
    """
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    pool = [np.asarray(_as_array(b), dtype=np.float32) for b in baseline_pool]
    if not pool:
        raise ValueError("baseline_pool must not be empty")
    e = _as_array(sample.eeg).astype(np.float32)
    s1 = _as_array(sample.s1).astype(np.float32)
    s2 = _as_array(sample.s2).astype(np.float32)
    for b in pool:
        if b.shape != e.shape:
            raise tt.ShapeError(f"baseline shape {b.shape} != EEG shape {e.shape}")
    signs = _margin_signs(int(sample.y))
    if callable(params):
        score_fn = params
    else:
        score_fn = lambda e_t, ss, tape: mm.stream_scores(e_t, ss, params, tape)  # noqa: E731

    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(pool), size=n_draws)
    alpha = rng.random(n_draws)

    total = np.zeros_like(e, dtype=np.float64)
    for a in range(0, n_draws, chunk):
        idx = pick[a : a + chunk]
        al = alpha[a : a + chunk].astype(np.float32)[:, None, None]
        bases = np.stack([pool[i] for i in idx])
        diff = e[None] - bases
        points = np.ascontiguousarray(bases + al * diff)
        m = points.shape[0]
        tape = Tape()
        e_t = Tensor(points, requires_grad=True)
        s1_t = Tensor(np.ascontiguousarray(np.broadcast_to(s1, (m, *s1.shape))))
        s2_t = Tensor(np.ascontiguousarray(np.broadcast_to(s2, (m, *s2.shape))))
        scores = score_fn(e_t, [s1_t, s2_t], tape)
        sign_t = Tensor(np.tile(signs, (m, 1)))
        margin_sum = tt.tensor_sum(tt.mul(scores, sign_t, tape), tape)
        tt.backward(margin_sum, tape)
        if e_t.grad is not None:  # a score ignoring the EEG attributes zero
            total += (diff.astype(np.float64) * e_t.grad.astype(np.float64)).sum(axis=0)
    return (total / n_draws).astype(np.float64)


@dataclass
class AttributionMap:
    """Sample-averaged attribution magnitudes for one trained model."""

    task: str
    per_channel_time: np.ndarray  # (C, T), mean |attribution| over samples
    per_channel: np.ndarray       # (C,), time-averaged and normalized to sum 1
    channel_names: tuple

    def __post_init__(self):
        c = self.per_channel_time.shape[0]
        if self.per_channel.shape != (c,) or len(self.channel_names) != c:
            raise tt.ShapeError("channel dimensions disagree")


def channel_importance(
    attributions: Sequence[np.ndarray],
    task: str = "aad",
    channel_names: Optional[Sequence[str]] = None,
) -> AttributionMap:
    """Aggregate per-sample attributions into a normalized importance map.

    Magnitudes are averaged over samples (keeping time), then over time;
    the per-channel vector is scaled to sum to 1.
    """
    mats = [np.abs(np.asarray(a, dtype=np.float64)) for a in attributions]
    if not mats:
        raise ValueError("need at least one attribution matrix")
    for a in mats[1:]:
        if a.shape != mats[0].shape:
            raise tt.ShapeError("attribution shapes disagree across samples")
    per_ct = np.mean(mats, axis=0)
    per_c = per_ct.mean(axis=1)
    s = per_c.sum()
    if s <= 0.0:
        raise ValueError("attributions are identically zero; nothing to normalize")
    names = tuple(channel_names) if channel_names is not None else tuple(
        CHANNEL_NAMES_32[: per_ct.shape[0]]
    )
    if len(names) != per_ct.shape[0]:
        raise tt.ShapeError(
            f"{len(names)} channel names for {per_ct.shape[0]} channels"
        )
    return AttributionMap(
        task=task, per_channel_time=per_ct, per_channel=per_c / s, channel_names=names
    )


def difference_map(a: AttributionMap, b: AttributionMap) -> np.ndarray:
    """Signed per-channel difference a - b of two normalized importance
    maps; entries sum to zero since each input sums to one."""
    if a.channel_names != b.channel_names:
        raise ValueError("channel orderings disagree between the two maps")
    return a.per_channel - b.per_channel


# ---------------------------------------------------------------------------
# export


def save_importance_csv(path, amap: AttributionMap) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["channel", "value"])
        for name, v in zip(amap.channel_names, amap.per_channel):
            w.writerow([name, f"{v:.8f}"])


def save_importance_ftf(path, amap: AttributionMap, sample_rate_hz: float = 64.0) -> None:
    write_feature_file(
        Path(path),
        FeatureTensor(
            amap.per_channel_time.astype(np.float32),
            sample_rate_hz,
            unit="a.u.",
            source=f"channel attribution ({amap.task})",
        ),
    )


def save_difference_csv(path, channel_names: Sequence[str], diff: np.ndarray) -> None:
    if len(channel_names) != len(diff):
        raise tt.ShapeError(f"{len(channel_names)} names for {len(diff)} values")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["channel", "difference"])
        for name, v in zip(channel_names, diff):
            w.writerow([name, f"{v:.8f}"])
