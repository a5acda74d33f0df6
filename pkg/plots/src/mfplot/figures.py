"""The three figure kinds: decay, scaling, and fixed-point convergence.

Every renderer returns the annotations it drew (name -> exact value taken from
the CSV/JSON inputs) so callers and tests can verify that figures never
recompute physics. Output is deterministic: a pinned style, a fixed SVG hash
salt, and no embedded timestamps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from mfplot.io import SchemaError, read_picard, read_poc, read_summary, read_trace  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "mflang-plots",
}


def _save(fig, out) -> list[Path]:
    """Write PNG and SVG siblings of the requested output path."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for suffix in (".png", ".svg"):
        target = out.with_suffix(suffix)
        fig.savefig(target, metadata={"Date": None} if suffix == ".svg" else None)
        written.append(target)
    plt.close(fig)
    return written


def _positive(x, y):
    mask = y > 0
    return x[mask], y[mask]


def plot_decay(trace_csv, summary_json, out, title=None) -> dict:
    """Semilog-y coupling distance (and Q-form) with the theoretical envelope.

    The envelope decays at the summary's theoretical_rate_bound from the first
    recorded value; the slope annotation is the summary's fitted_rate verbatim.
    """
    data = read_trace(trace_csv)
    summary = read_summary(summary_json) if summary_json else None
    if summary is None:
        warnings.warn("no summary given: rendering without envelope or rate annotation")
    annotations = {}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if title:
            ax.set_title(title)
        t = data["t"]
        series = [("mean_sq_dist", "mean squared coupling distance")]
        if "q_form" in data:
            series.append(("q_form", "mean quadratic form"))
        for key, label in series:
            tx, vy = _positive(t, data[key])
            if len(tx):
                ax.semilogy(tx, vy, label=label)
        if summary is not None and len(t) and summary.get("theoretical_rate_bound") is not None:
            bound = summary["theoretical_rate_bound"]
            anchor = data["mean_sq_dist"][0]
            if anchor > 0:
                ax.semilogy(t, anchor * np.exp(-bound * t), "--", color="k",
                            label=f"envelope: rate {bound!r}")
                annotations["theoretical_rate_bound"] = bound
            if summary.get("fitted_rate") is not None:
                rate = summary["fitted_rate"]
                ax.text(0.02, 0.04, f"fitted rate = {rate!r}", transform=ax.transAxes)
                annotations["fitted_rate"] = rate
        ax.set_xlabel("t")
        ax.set_ylabel("mean squared distance")
        if ax.has_data():
            ax.legend(loc="upper right")
        written = _save(fig, out)
    return {"written": written, "annotations": annotations}


def plot_scaling(poc_csv, summary_json, out, title=None) -> dict:
    """Log-log sup gap against n with the delta_d(n) reference of matching d.

    The reference curve re-scales the table's own delta_d column to the first
    data point; with a summary, the fitted slope is annotated verbatim and the
    configured tolerance band around the target slope is shaded.
    """
    data = read_poc(poc_csv)
    summary = read_summary(summary_json) if summary_json else None
    if summary is None:
        warnings.warn("no summary given: rendering without slope annotation")
    annotations = {}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if title:
            ax.set_title(title)
        n = data["n"]
        gap = data["sup_gap"]
        if len(n):
            ax.loglog(n, gap, "o-", label="sup gap")
        if len(n) >= 2:
            ref = gap[0] / data["delta_d"][0] * data["delta_d"]
            ax.loglog(n, ref, "--", color="k", label="delta_d(n) reference")
            if summary is not None:
                tol_cfg = summary.get("config", {}).get("tolerances", {})
                target = tol_cfg.get("slope_target")
                tol = tol_cfg.get("slope_tol")
                if target is not None and tol is not None:
                    lo = gap[0] * (n / n[0]) ** (target - tol)
                    hi = gap[0] * (n / n[0]) ** (target + tol)
                    ax.fill_between(n, lo, hi, alpha=0.15, color="tab:green",
                                    label=f"slope band {target!r} +- {tol!r}")
                    annotations["slope_target"] = target
                    annotations["slope_tol"] = tol
                slope = summary.get("fitted_scaling_slope")
                if slope is not None:
                    ax.text(0.02, 0.04, f"fitted slope = {slope!r}", transform=ax.transAxes)
                    annotations["fitted_scaling_slope"] = slope
        ax.set_xlabel("n")
        ax.set_ylabel("sup gap")
        if ax.has_data():
            ax.legend(loc="lower left")
        written = _save(fig, out)
    return {"written": written, "annotations": annotations}


def plot_picard(picard_csv, summary_json, out, title=None) -> dict:
    """Fixed-point convergence: semilog step distances plus per-step ratios.

    The contraction bound line sits at the ratio bound echoed in the summary.
    """
    data = read_picard(picard_csv)
    summary = read_summary(summary_json) if summary_json else None
    if summary is None:
        warnings.warn("no summary given: rendering without the contraction bound line")
    annotations = {}
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.2))
        if title:
            fig.suptitle(title)
        it = data["iter"]
        step = data["step_w1"]
        tx, vy = _positive(it, step)
        if len(tx):
            ax1.semilogy(tx, vy, "o-")
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("step W1 distance")
        ratios = data["ratio"]
        finite = np.isfinite(ratios)
        if finite.any():
            ax2.bar(it[finite], ratios[finite], width=0.8)
        if summary is not None:
            bound = summary.get("info", {}).get("ratio_bound")
            if bound is not None:
                ax2.axhline(bound, color="k", linestyle="--",
                            label=f"bound {bound!r}")
                ax2.legend(loc="upper right")
                annotations["ratio_bound"] = bound
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("step-distance ratio")
        fig.tight_layout()
        written = _save(fig, out)
    return {"written": written, "annotations": annotations}


KINDS = {"decay": plot_decay, "scaling": plot_scaling, "picard": plot_picard}


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: inputs, kind, output path and label options."""

    kind: str
    csv: str
    out: str
    summary: Optional[str] = None
    title: Optional[str] = None

    def validate(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {sorted(KINDS)}")
        if not Path(self.csv).exists():
            raise SchemaError(f"{self.csv}: input CSV not found")
        if self.summary is not None and not Path(self.summary).exists():
            raise SchemaError(f"{self.summary}: summary file not found")
        return self


def render(spec: FigureSpec) -> dict:
    """Validate a figure request and dispatch to its renderer."""
    spec.validate()
    return KINDS[spec.kind](spec.csv, spec.summary, spec.out, title=spec.title)
