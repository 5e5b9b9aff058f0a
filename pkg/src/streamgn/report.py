"""Serialization of experiment reports: delimited files, figures, manifest.

All written content is a pure function of the experiment configuration, so
repeated runs with one master seed produce byte-identical files. Wall-clock
diagnostics stay on the console. The manifest lists every written file with
its SHA-256 digest; its command field excludes --out and --jobs, which do
not affect results.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from . import __version__, stats  # noqa: E402
from .harness import ExperimentReport  # noqa: E402

__all__ = ["write_outputs", "write_manifest", "versions"]


def versions() -> dict:
    import matplotlib as mpl
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": mpl.__version__,
        "streamgn": __version__,
    }


def _clean(value):
    """Make a value strict-JSON safe (NaN/inf to None, numpy to builtin)."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def _dump_json(obj, path: Path):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _curve_rows(report):
    for curve in report.curves:
        for n, mse, stderr in zip(curve["checkpoints"], curve["mse"], curve["stderr"]):
            yield (curve["algorithm"], curve["c_alpha"], curve["alpha"],
                   curve["c_beta"], curve["beta"], n, mse, stderr)


def _pivot_rows(report):
    for sample in report.pivots:
        for v in sample.values:
            yield (sample.algorithm, sample.n_obs, float(v))


def _ecdf_rows(report):
    for sample in report.pivots:
        values = np.sort(sample.values)
        n = values.size
        for i, v in enumerate(values, start=1):
            yield (sample.algorithm, float(v), i / n, float(stats.chi2_2_cdf(v)))


def _summary(report) -> dict:
    cfg = dataclasses.asdict(report.config)
    cfg["cells"] = [dataclasses.asdict(c) for c in report.config.cells]
    # worker count cannot affect results and must not affect output bytes
    cfg.pop("jobs", None)
    return {
        "config": cfg,
        "failures": report.failures,
        "slopes": report.slopes,
        "ks": report.ks,
    }


def _figure_table(report, path: Path):
    """Heatmap of log10 MSE per algorithm over the varying parameter grid."""
    tags = list(dict.fromkeys(r["algorithm"] for r in report.rows))
    rows_by_tag = {t: [r for r in report.rows if r["algorithm"] == t] for t in tags}
    sample = rows_by_tag[tags[0]]
    axes_params = [p for p in ("c_alpha", "alpha", "c_beta", "beta")
                   if len({r[p] for r in sample}) > 1]
    fig, axs = plt.subplots(1, len(tags), figsize=(4.2 * len(tags), 3.6),
                            squeeze=False)
    if len(axes_params) >= 2:
        py, px = axes_params[:2]
        yv = sorted({r[py] for r in sample})
        xv = sorted({r[px] for r in sample})
        for ax, tag in zip(axs[0], tags):
            grid = np.full((len(yv), len(xv)), np.nan)
            for r in rows_by_tag[tag]:
                if r["mse"] is not None and np.isfinite(r["mse"]) and r["mse"] > 0:
                    grid[yv.index(r[py]), xv.index(r[px])] = np.log10(r["mse"])
            im = ax.imshow(grid, aspect="auto", cmap="viridis")
            ax.set_xticks(range(len(xv)), [f"{v:g}" for v in xv])
            ax.set_yticks(range(len(yv)), [f"{v:g}" for v in yv])
            ax.set_xlabel(px)
            ax.set_ylabel(py)
            ax.set_title(tag)
            fig.colorbar(im, ax=ax, label="log10 mse")
    else:
        for ax, tag in zip(axs[0], tags):
            rows = rows_by_tag[tag]
            vals = [r["mse"] if r["mse"] is not None else np.nan for r in rows]
            ax.bar(range(len(rows)), vals)
            ax.set_yscale("log")
            ax.set_title(tag)
            ax.set_ylabel("mse")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _figure_curves(report, path: Path):
    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    for curve in report.curves:
        label = curve["algorithm"]
        mse = np.asarray(curve["mse"], dtype=float)
        ok = np.isfinite(mse) & (mse > 0)
        ns = np.asarray(curve["checkpoints"], dtype=float)
        ax.loglog(ns[ok], mse[ok], marker=".", label=label)
    ax.set_xlabel("sample size n")
    ax.set_ylabel("mean squared error")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _figure_normality(report, path: Path):
    k = max(len(report.pivots), 1)
    fig, axs = plt.subplots(1, k, figsize=(4.6 * k, 3.6), squeeze=False)
    for ax, sample in zip(axs[0], report.pivots):
        values = np.sort(sample.values)
        n = values.size
        ax.step(values, np.arange(1, n + 1) / n, where="post",
                label=f"{sample.algorithm} empirical")
        grid = np.linspace(0, max(values.max(), 10.0), 400)
        ax.plot(grid, stats.chi2_2_cdf(grid), "k--", label="chi2(2) cdf")
        ax.set_xlabel("pivot value")
        ax.set_ylabel("cdf")
        ax.set_xlim(0, np.quantile(values, 0.995))
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_outputs(report: ExperimentReport, out_dir, fmt: str = "csv",
                  figure: str = "auto") -> list:
    """Write the report under out_dir; returns written paths.

    fmt switches the delimited outputs between csv and json; the summary is
    always JSON. figure picks the rendered view: 'table', 'curves',
    'normality', 'auto' (inferred from content), or 'none'.
    """
    if fmt not in ("csv", "json"):
        raise ValueError("format must be 'csv' or 'json'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, payload_rows=None, header=None, json_obj=None):
        path = out / name
        if name.endswith(".csv"):
            _write_csv(path, header, payload_rows)
        else:
            _dump_json(json_obj, path)
        written.append(path)

    if fmt == "csv":
        emit("table.csv", list(_curve_rows_final(report)), stats.MSE_COLUMNS)
        emit("curves.csv", list(_curve_rows(report)), stats.MSE_COLUMNS)
        if report.pivots:
            emit("pivots.csv", list(_pivot_rows(report)),
                 ("algorithm", "n_obs", "value"))
            emit("ecdf.csv", list(_ecdf_rows(report)),
                 ("algorithm", "value", "ecdf", "chi2_cdf"))
    else:
        emit("table.json", json_obj=report.rows)
        emit("curves.json", json_obj=report.curves)
        if report.pivots:
            emit("pivots.json", json_obj=[
                {"algorithm": s.algorithm, "n_obs": s.n_obs,
                 "values": [float(v) for v in s.values]}
                for s in report.pivots
            ])
            emit("ecdf.json", json_obj=[
                {"algorithm": a, "value": v, "ecdf": e, "chi2_cdf": c}
                for a, v, e, c in _ecdf_rows(report)
            ])
    emit("summary.json", json_obj=_summary(report))

    if figure == "auto":
        if report.pivots:
            figure = "normality"
        elif len(report.config.checkpoints) >= 5:
            figure = "curves"
        else:
            figure = "table"
    if figure != "none":
        path = out / f"figure_{figure}.png"
        {"table": _figure_table, "curves": _figure_curves,
         "normality": _figure_normality}[figure](report, path)
        written.append(path)
    return written


def _curve_rows_final(report):
    for row in report.rows:
        yield tuple(row[c] for c in stats.MSE_COLUMNS)


def write_manifest(out_dir, command: str, seed: int, files) -> Path:
    """Write manifest.json listing every output file with its SHA-256."""
    out = Path(out_dir)
    entries = []
    for path in sorted(Path(p) for p in files):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append({"path": str(path.relative_to(out)), "sha256": digest})
    manifest = {
        "command": command,
        "seed": int(seed),
        "versions": versions(),
        "files": entries,
    }
    path = out / "manifest.json"
    _dump_json(manifest, path)
    return path
