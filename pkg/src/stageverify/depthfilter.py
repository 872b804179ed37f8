"""Temporal filtering of raw per-object stereo depth samples.

Sliding median over the last few valid samples handles stereo dropouts and
spikes; an exponential smoothing stage on top of the median handles
quantization jitter. With alpha=1 the output is exactly the window median.
"""

from __future__ import annotations

import math
from collections import deque


def lower_median(values: list[float]) -> float:
    """Median with deterministic tie-breaking: the lower of the two middles."""
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


class DepthTrack:
    """Per-part depth filter state. Not ready until the first valid sample."""

    def __init__(self, n_window: int = 5, alpha: float = 0.3):
        if n_window < 1:
            raise ValueError("n_window must be >= 1")
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        self.n_window = n_window
        self.alpha = alpha
        self.window: deque[float] = deque(maxlen=n_window)
        self.ema: float | None = None

    @property
    def value(self) -> float | None:
        return self.ema

    def push(self, sample: float | None) -> float | None:
        """Feed one raw sample; returns the filtered depth, or None until ready.

        Nonpositive, non-finite, or missing samples are a defined input: they
        leave the state untouched and return the previous output.
        """
        if sample is None or not isinstance(sample, (int, float)) \
                or not math.isfinite(sample) or sample <= 0:
            return self.ema
        self.window.append(float(sample))
        med = lower_median(list(self.window))
        if self.ema is None:
            self.ema = med
        else:
            # written so alpha=1 reproduces the median bit-exactly
            self.ema = (1.0 - self.alpha) * self.ema + self.alpha * med
        return self.ema


def push_depth(track: DepthTrack, sample: float | None) -> float | None:
    return track.push(sample)
