"""Figure rendering for session metrics.

Turns the rows produced by the network harness into PNG figures plus a
small delimited summary, for offline inspection of a finished run.  All
rendering goes through the Agg backend so it works headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import IoError


def _columns(rows):
    t = np.array([r.time_ms for r in rows], dtype=float)
    proto = np.array([r.bytes_protocol for r in rows], dtype=float)
    base = np.array([r.bytes_baseline for r in rows], dtype=float)
    err = np.array([r.rendered_error for r in rows], dtype=float)
    dropped = np.array([r.dropped for r in rows], dtype=float)
    delivered = np.array([r.delivered for r in rows], dtype=float)
    return t, proto, base, err, dropped, delivered


def render_session_report(rows, out_dir) -> list[str]:
    """Render bandwidth / error / delivery figures plus ``summary.csv``.

    Returns the list of file paths written, in a fixed order.
    """
    if not rows:
        raise IoError("metrics are empty; nothing to plot")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create report directory {out_dir}: {exc}") \
            from exc
    t, proto, base, err, dropped, delivered = _columns(rows)
    written = []

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.step(t, np.cumsum(base), where="post",
            label="float32 matrix baseline")
    ax.step(t, np.cumsum(proto), where="post", label="motor protocol")
    ax.set_xlabel("session time (ms)")
    ax.set_ylabel("cumulative bytes")
    ax.set_title("bandwidth: protocol vs baseline")
    ax.legend()
    written.append(_save(fig, out_dir, "bandwidth.png"))

    # Rows before the first render carry NaN errors; plot the finite part.
    have_err = np.isfinite(err)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(t[have_err], err[have_err])
    ax.set_xlabel("session time (ms)")
    ax.set_ylabel("max skinned-vertex error")
    ax.set_title("rendered error at the receiver")
    if np.any(err[have_err] > 0.0):
        ax.set_yscale("log")
    written.append(_save(fig, out_dir, "rendered_error.png"))

    # delivered counts messages per tick; dropped is a running total.
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.step(t, np.cumsum(delivered), where="post", label="delivered")
    ax.step(t, dropped, where="post", label="dropped")
    ax.set_xlabel("session time (ms)")
    ax.set_ylabel("cumulative messages")
    ax.set_title("link delivery")
    ax.legend()
    written.append(_save(fig, out_dir, "delivery.png"))

    total_proto = float(proto.sum())
    total_base = float(base.sum())
    ratio = total_base / total_proto if total_proto else 0.0
    finite = err[have_err]
    summary = [
        ("rows", float(len(rows))),
        ("bytes_protocol", total_proto),
        ("bytes_baseline", total_base),
        ("bandwidth_ratio", ratio),
        ("rendered_error_max", float(finite.max()) if finite.size else 0.0),
        ("rendered_error_mean", float(finite.mean()) if finite.size else 0.0),
        ("messages_delivered", float(delivered.sum())),
        ("messages_dropped", float(dropped[-1])),
    ]
    path = os.path.join(out_dir, "summary.csv")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("metric,value\n")
            for key, value in summary:
                fh.write(f"{key},{value!r}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    written.append(path)
    return written


def _save(fig, out_dir, name: str) -> str:
    path = os.path.join(out_dir, name)
    try:
        fig.tight_layout()
        fig.savefig(path, dpi=110)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path
