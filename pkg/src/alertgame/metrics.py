"""AvgTTA bands, run-set aggregation and the CSV/SVG report emitters."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .game_env import GameConfig, RunSet, RunTrace


class Band(enum.IntEnum):
    GREEN = 0
    YELLOW = 1
    ORANGE = 2
    RED = 3


BAND_COLORS = {Band.GREEN: "#2e9d43", Band.YELLOW: "#e8c619",
               Band.ORANGE: "#f08a24", Band.RED: "#d62f2f"}


@dataclass(frozen=True)
class BandBoundaries:
    """1 h of AvgTTA at ``anchor_low`` alerts, 4 h at ``anchor_high``."""

    anchor_low: float = 1175.0
    anchor_high: float = 4350.0

    @classmethod
    def for_config(cls, config: GameConfig) -> "BandBoundaries":
        return cls(config.cost_anchor_low, config.cost_anchor_high)

    @property
    def hour_anchors(self) -> tuple[int, ...]:
        return (1, 2, 3, 4)

    @property
    def backlog_anchors(self) -> tuple[float, ...]:
        span = self.anchor_high - self.anchor_low
        return tuple(self.anchor_low + k * span / 3.0 for k in range(4))

    def hours(self, b):
        return backlog_to_avgtta(b, self.anchor_low, self.anchor_high)

    def classify(self, backlog) -> np.ndarray:
        """Band index per backlog; exact at the thresholds for integer input."""
        b = np.asarray(backlog, dtype=np.float64)
        excess = 3.0 * (b - self.anchor_low)
        span = self.anchor_high - self.anchor_low
        return ((excess >= span).astype(np.int64) + (excess >= 2 * span)
                + (excess >= 3 * span))


def backlog_to_avgtta(b, anchor_low: float = 1175.0, anchor_high: float = 4350.0):
    """Hours of AvgTTA for a backlog; below one hour rounds up to one."""
    if np.any(np.asarray(b) < 0):
        raise ValueError("backlog must be nonnegative")
    h = 1.0 + 3.0 * (np.asarray(b, dtype=np.float64) - anchor_low) / (anchor_high - anchor_low)
    h = np.maximum(1.0, h)
    return float(h) if np.ndim(h) == 0 else h


def color_band(hours: float) -> Band:
    if hours < 1.0:
        raise ValueError("AvgTTA is at least one hour")
    if hours < 2.0:
        return Band.GREEN
    if hours < 3.0:
        return Band.YELLOW
    if hours < 4.0:
        return Band.ORANGE
    return Band.RED


def _backlog_matrix(traces, which: str = "post") -> list[np.ndarray]:
    if isinstance(traces, RunSet):
        return list(traces.b_post if which == "post" else traces.b_pre)
    if isinstance(traces, RunTrace):
        traces = [traces]
    out = []
    for t in traces:
        if isinstance(t, RunTrace):
            out.append(t.b_post if which == "post" else t.b_pre)
        else:
            out.append(np.asarray(t))
    if not out:
        raise ValueError("empty run set")
    return out


def run_band_fractions(traces, bounds: BandBoundaries = BandBoundaries(),
                       which: str = "post") -> np.ndarray:
    """``(runs, 4)`` fraction of each run's hours per band."""
    rows = []
    for b in _backlog_matrix(traces, which):
        counts = np.bincount(bounds.classify(b), minlength=4)
        rows.append(counts / max(1, len(b)))
    return np.array(rows)


def band_proportions(traces, bounds: BandBoundaries = BandBoundaries(),
                     which: str = "post") -> np.ndarray:
    """Share of all run-hours in {green, yellow, orange, red}.

    ``which="post"`` classifies the end-of-hour backlog; ``"pre"`` the
    backlog the defender saw at the start of the hour.
    """
    counts = np.zeros(4, dtype=np.int64)
    for b in _backlog_matrix(traces, which):
        counts += np.bincount(bounds.classify(b), minlength=4)
    return counts / counts.sum()


def worst_run(traces) -> int:
    maxima = [int(np.max(b)) for b in _backlog_matrix(traces, "post")]
    return int(np.argmax(maxima))


@dataclass
class RunSetStats:
    proportions: np.ndarray
    worst_run: int
    run_max_backlog: np.ndarray
    sup_costs: np.ndarray
    run_fractions: np.ndarray

    @property
    def runs(self) -> int:
        return len(self.sup_costs)

    @property
    def mean_sup_cost(self) -> float:
        return float(np.mean(self.sup_costs))

    @property
    def worst_max_backlog(self) -> int:
        return int(self.run_max_backlog[self.worst_run])


def summarize(runs: RunSet, config: GameConfig, which: str = "post") -> RunSetStats:
    bounds = BandBoundaries.for_config(config)
    return RunSetStats(
        proportions=band_proportions(runs, bounds, which),
        worst_run=worst_run(runs),
        run_max_backlog=runs.b_post.max(axis=1),
        sup_costs=runs.sup_costs,
        run_fractions=run_band_fractions(runs, bounds, which),
    )


# --------------------------------------------------------------------------
# report emitters
# --------------------------------------------------------------------------

def write_proportions_csv(path: str | Path, rows: Iterable[tuple[str, np.ndarray, float, int, int]]) -> None:
    """Rows of ``(label, proportions, mean_sup_cost, worst_max_backlog, runs)``."""
    with open(path, "w") as fh:
        fh.write("label,green,yellow,orange,red,mean_sup_cost,worst_max_backlog,runs\n")
        for label, props, sup, worst, runs in rows:
            p = ",".join(f"{v:.6f}" for v in props)
            fh.write(f"{label},{p},{sup:.6f},{worst},{runs}\n")


def svg_trace(trace: RunTrace, config: GameConfig, title: str = "", width: int = 640,
              height: int = 320) -> str:
    """Hour-by-hour backlog as AvgTTA, each segment colored by its band."""
    bounds = BandBoundaries.for_config(config)
    hours = np.asarray(bounds.hours(trace.b_post), dtype=float).reshape(-1)
    n = len(hours)
    top = max(5.0, math.ceil(hours.max()) + 0.5)
    m = 40
    sx = (width - 2 * m) / max(1, n - 1)
    sy = (height - 2 * m) / (top - 1.0)

    def pt(i, h):
        return m + i * sx, height - m - (h - 1.0) * sy

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{m}" y="20" font-family="sans-serif" font-size="13">{title}</text>']
    for h in (2, 3, 4):
        _, y = pt(0, h)
        parts.append(f'<line x1="{m}" y1="{y:.1f}" x2="{width - m}" y2="{y:.1f}" '
                     f'stroke="#999" stroke-dasharray="4 3"/>')
        parts.append(f'<text x="{width - m + 4}" y="{y + 4:.1f}" font-size="10" '
                     f'font-family="sans-serif">{h}h</text>')
    parts.append(f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>')
    parts.append(f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>')
    bands = [color_band(h) for h in hours]
    for i in range(n - 1):
        x1, y1 = pt(i, hours[i])
        x2, y2 = pt(i + 1, hours[i + 1])
        color = BAND_COLORS[max(bands[i], bands[i + 1])]
        parts.append(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                     f'stroke="{color}" stroke-width="2"/>')
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="11" '
                 f'font-family="sans-serif" text-anchor="middle">hour</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def svg_donut(proportions: Sequence[float], title: str = "", size: int = 260) -> str:
    cx = cy = size / 2
    r_out, r_in = size * 0.42, size * 0.25
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 30}" '
             f'viewBox="0 0 {size} {size + 30}">',
             f'<rect width="{size}" height="{size + 30}" fill="white"/>']
    angle = -math.pi / 2
    for band, p in zip(Band, proportions):
        if p <= 0:
            continue
        color = BAND_COLORS[band]
        if p >= 1.0 - 1e-12:
            parts.append(f'<circle cx="{cx}" cy="{cy}" r="{(r_out + r_in) / 2}" fill="none" '
                         f'stroke="{color}" stroke-width="{r_out - r_in}"/>')
            continue
        end = angle + 2 * math.pi * p
        large = 1 if p > 0.5 else 0
        x1, y1 = cx + r_out * math.cos(angle), cy + r_out * math.sin(angle)
        x2, y2 = cx + r_out * math.cos(end), cy + r_out * math.sin(end)
        x3, y3 = cx + r_in * math.cos(end), cy + r_in * math.sin(end)
        x4, y4 = cx + r_in * math.cos(angle), cy + r_in * math.sin(angle)
        parts.append(
            f'<path d="M {x1:.2f} {y1:.2f} A {r_out} {r_out} 0 {large} 1 {x2:.2f} {y2:.2f} '
            f'L {x3:.2f} {y3:.2f} A {r_in} {r_in} 0 {large} 0 {x4:.2f} {y4:.2f} Z" fill="{color}"/>')
        angle = end
    labels = " ".join(f"{b.name.lower()} {100 * p:.1f}%" for b, p in zip(Band, proportions))
    parts.append(f'<text x="{cx}" y="{size + 18}" font-size="10" font-family="sans-serif" '
                 f'text-anchor="middle">{labels}</text>')
    if title:
        parts.append(f'<text x="{cx}" y="{cy + 4}" font-size="11" font-family="sans-serif" '
                     f'text-anchor="middle">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
