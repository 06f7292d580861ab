"""Across-seed summaries of evaluation CSVs, as a tidy table and SVG curves.

The standard deviation is the population form (divide by n), so a single
seed gives a band of width zero; the column is named accordingly.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from rcac.errors import ConfigurationError

SUMMARY_COLUMNS = ("env", "mode", "step", "n_seeds", "mean_return", "std_return_population")
MODE_COLOURS = {"rcac": "#d62728", "baseline": "#1f77b4", "mixed": "#2ca02c"}
FALLBACK_COLOURS = ("#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


@dataclass
class RunRecord:
    path: Path
    env: str
    mode: str
    seed: int
    steps: tuple
    returns: tuple


def _read_env(run_dir: Path) -> str:
    cfg = run_dir / "config.txt"
    if cfg.exists():
        for line in cfg.read_text().splitlines():
            key, _, value = line.partition("=")
            if key.strip() == "env":
                return value.strip()
    return "unknown"


def read_run(eval_csv) -> RunRecord:
    path = Path(eval_csv)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: no evaluation rows")
    modes = {r["mode"] for r in rows}
    seeds = {r["seed"] for r in rows}
    if len(modes) != 1 or len(seeds) != 1:
        raise ConfigurationError(f"{path}: mixes several modes or seeds")
    return RunRecord(path, _read_env(path.parent), modes.pop(), int(seeds.pop()),
                     tuple(int(r["step"]) for r in rows),
                     tuple(float(r["mean_return"]) for r in rows))


def find_eval_csvs(paths) -> list[Path]:
    """Expand directories to every ``eval.csv`` beneath them; files are kept as given."""
    found = []
    for p in map(Path, paths):
        found.extend(sorted(p.rglob("eval.csv")) if p.is_dir() else [p])
    return sorted(set(found))


def summarise(runs: list[RunRecord]) -> list[dict]:
    groups = defaultdict(list)
    for run in runs:
        groups[(run.env, run.mode)].append(run)
    rows = []
    for (env, mode), members in sorted(groups.items()):
        grids = {run.steps for run in members}
        if len(grids) > 1:
            detail = "; ".join(f"{run.path} ({len(run.steps)} evals, last step "
                               f"{run.steps[-1]})" for run in members)
            raise ConfigurationError(f"{env}/{mode}: evaluation steps differ between runs: "
                                     f"{detail}")
        seeds = [run.seed for run in members]
        if len(set(seeds)) != len(seeds):
            raise ConfigurationError(f"{env}/{mode}: seed listed twice: "
                                     + ", ".join(str(r.path) for r in members))
        values = np.array([run.returns for run in members])
        for j, step in enumerate(members[0].steps):
            col = values[:, j]
            rows.append({"env": env, "mode": mode, "step": step, "n_seeds": len(col),
                         "mean_return": float(col.mean()),
                         "std_return_population": float(col.std(ddof=0))})
    return rows


def write_summary(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([r["env"], r["mode"], r["step"], r["n_seeds"], f"{r['mean_return']:.6f}",
                        f"{r['std_return_population']:.6f}"])


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.floor(lo / step) * step
    ticks = np.arange(start, hi + step * 0.5, step)
    return [float(t) for t in ticks if lo - 1e-9 <= t <= hi + 1e-9] or [lo, hi]


def render_svg(rows, env, width=640, height=400) -> str:
    """Mean curve with a +/- one std band per mode, plain SVG markup."""
    series = defaultdict(list)
    for r in rows:
        if r["env"] == env:
            series[r["mode"]].append(r)
    if not series:
        raise ConfigurationError(f"no rows for env {env!r}")
    left, right, top, bottom = 70, 130, 40, 50
    steps = [r["step"] for rs in series.values() for r in rs]
    lows = [r["mean_return"] - r["std_return_population"] for rs in series.values() for r in rs]
    highs = [r["mean_return"] + r["std_return_population"] for rs in series.values() for r in rs]
    x0, x1 = 0.0, float(max(steps))
    y0, y1 = min(0.0, min(lows)), max(highs)
    if y1 <= y0:
        y1 = y0 + 1.0
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0 or 1.0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left}" y="{top - 15}" font-size="14">{escape(env)}: evaluation return '
           f'(mean, band = population std)</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in _nice_ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" y2="{top + ph + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">'
               f'environment steps</text>')
    spare = iter(FALLBACK_COLOURS)
    for i, (mode, rs) in enumerate(sorted(series.items())):
        colour = MODE_COLOURS.get(mode) or next(spare, "#000000")
        rs = sorted(rs, key=lambda r: r["step"])
        upper = [(px(r["step"]), py(r["mean_return"] + r["std_return_population"])) for r in rs]
        lower = [(px(r["step"]), py(r["mean_return"] - r["std_return_population"])) for r in rs]
        band = " ".join(f"{x:.2f},{y:.2f}" for x, y in upper + lower[::-1])
        line = " ".join(f"{px(r['step']):.2f},{py(r['mean_return']):.2f}" for r in rs)
        label = escape(mode)
        out.append(f'<g class="series" data-mode="{label}">')
        out.append(f'<polygon points="{band}" fill="{colour}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="2"/>')
        ly = top + 20 * i + 10
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}">{label}</text>')
        out.append('</g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def aggregate(paths, out_dir) -> list[dict]:
    """Summarise every run found under ``paths`` into ``out_dir``.

    Writes ``summary.csv`` and one ``curves_<env>.svg`` per environment.
    Output depends only on the input files, so repeated calls give identical bytes.
    """
    csvs = find_eval_csvs(paths)
    if not csvs:
        raise ConfigurationError("no eval.csv files found")
    rows = summarise([read_run(p) for p in csvs])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(rows, out / "summary.csv")
    for env in sorted({r["env"] for r in rows}):
        (out / f"curves_{env}.svg").write_text(render_svg(rows, env))
    return rows
