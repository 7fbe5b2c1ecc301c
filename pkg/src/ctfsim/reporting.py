"""Delimited output, YAML documents, and companion figures.

Every CSV carries a header row and a fixed ISO-8601 build-stamp comment;
run-specific wall-clock times are recorded in the manifest only, so a
rerun with identical inputs produces byte-identical data files.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

from . import BUILD_STAMP, __version__  # noqa: E402


def stamp_line() -> str:
    return f"# generated {BUILD_STAMP} ctfsim {__version__} (fixed build stamp)"


def _fmt(value) -> str:
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: str, rows) -> Path:
    path = Path(path)
    lines = [stamp_line(), header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_yaml(path, doc) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, default_flow_style=False, sort_keys=False)
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Figures. PNG metadata is pinned so identical data renders identical bytes.
# ---------------------------------------------------------------------------

_SAVE_KW = dict(dpi=150, metadata={"Software": "ctfsim"})


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)


def render_vtn_vs_n(path, n_values, vtn, vt0, title="Final threshold vs pulse count"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(n_values, vtn, "o-", label="programmed V_T,N")
    ax.axhline(vt0, color="gray", ls="--", lw=1, label="initialized V_T,0")
    ax.set_xlabel("pulse count N (fixed total ON time)")
    ax.set_ylabel("threshold voltage (V)")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_gap_curves(path, curves, title="Final threshold vs inter-pulse gap"):
    """curves: list of (label, gaps, vts)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, gaps, vts in curves:
        ax.semilogx(gaps, vts, "o-", label=label, ms=3)
    ax.set_xlabel("inter-pulse gap (s)")
    ax.set_ylabel("threshold voltage (V)")
    ax.set_title(title)
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_split_curves(path, n_values, series, title="Fragmentation response by process split"):
    """series: list of (label, vtn list)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, vtn in series:
        ax.semilogx(n_values, vtn, "o-", label=label, ms=3)
    ax.set_xlabel("pulse count N (fixed total ON time)")
    ax.set_ylabel("threshold voltage (V)")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_traces(path, traces, title="Threshold vs pulse number"):
    """traces: list of (label, indices, vts)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, idx, vts in traces:
        # index 0 cannot sit on a log axis; plot from the first pulse
        pairs = [(i, v) for i, v in zip(idx, vts) if i >= 1]
        ax.semilogx([i for i, _ in pairs], [v for _, v in pairs], "o-", label=label, ms=3)
    ax.set_xlabel("pulse number n")
    ax.set_ylabel("threshold voltage (V)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_compensation(path, widths, def_uncomp, def_comp,
                        title="Write-time compensation"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog([w for w in widths], [max(d, 1e-6) for d in def_uncomp], "o-",
              color="tab:red", label="fixed applied time")
    ax.loglog([w for w in widths], [max(abs(d), 1e-6) for d in def_comp], "s-",
              color="tab:green", label="compensated effective time")
    ax.set_xlabel("pulse width (s)")
    ax.set_ylabel("|threshold deficiency| (V)")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)


def render_error_decomposition(path, reports, title="Update error components"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ns = [r.n for r in reports]
    ax.loglog(ns, [max(r.random_rel_err, 1e-6) for r in reports], "o-",
              label="random (encoding)")
    ax.loglog(ns, [max(r.systematic_rel_err, 1e-6) for r in reports], "s-",
              label="systematic (pulse division)")
    ax.loglog(ns, [max(r.gap_noise_rel, 1e-6) for r in reports], "^-",
              label="gap noise")
    ax.set_xlabel("stream length n")
    ax.set_ylabel("relative error")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)


def render_extraction(path, t_trap_points, t_crit_points,
                      title="Extracted trap timescales"):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot([v for v, _ in t_trap_points], [t * 1e6 for _, t in t_trap_points], "o-")
    ax1.set_xlabel("target threshold (V)")
    ax1.set_ylabel("per-pulse trap time (us)")
    ax1.grid(alpha=0.3)
    ax2.loglog([w for w, _ in t_crit_points], [t for _, t in t_crit_points], "o-")
    ax2.set_xlabel("pulse width (s)")
    ax2.set_ylabel("critical gap (s)")
    ax2.grid(alpha=0.3, which="both")
    fig.suptitle(title)
    return _finish(fig, path)
