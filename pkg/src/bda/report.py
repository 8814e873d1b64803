"""CSV tables and a dependency-free SVG plot of loss curves."""

import csv
import io
from pathlib import Path

from .dataset import atomic_write
from .metrics import CLASS_NAMES


def confusion_csv(report):
    """Counts and row percentages; rows are truth, columns prediction."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["truth\\pred"] + list(CLASS_NAMES))
    for name, row in zip(CLASS_NAMES, report.confusion.counts.tolist()):
        w.writerow([name] + row)
    w.writerow([])
    w.writerow(["truth\\pred %"] + list(CLASS_NAMES))
    for name, row in zip(CLASS_NAMES, report.confusion.row_percent().tolist()):
        w.writerow([name] + [f"{v:.2f}" for v in row])
    return buf.getvalue()


def read_curve(path):
    """Rows of a ``stage,epoch,loss`` file as ``(stage, epoch, loss)``."""
    with open(path, newline="") as f:
        return [(int(r["stage"]), int(r["epoch"]), float(r["loss"])) for r in csv.DictReader(f)]


def curves_csv(curves):
    lines = ["stage,epoch,loss"]
    for rows in curves:
        lines += [f"{s},{e},{v:.9g}" for s, e, v in rows]
    return "\n".join(lines) + "\n"


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def curves_svg(curves, width=480, height=300, pad=40):
    """Polyline per stage, shared axes, epoch on x and loss on y."""
    pts = [p for rows in curves for p in rows]
    if not pts:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    max_e = max(max(e for _, e, _ in pts), 1)
    lo = min(v for *_, v in pts)
    hi = max(v for *_, v in pts)
    span = (hi - lo) or 1.0

    def xy(e, v):
        x = pad + (width - 2 * pad) * e / max_e
        y = height - pad - (height - 2 * pad) * (v - lo) / span
        return f"{x:.1f},{y:.1f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle">epoch</text>',
        f'<text x="4" y="{pad - 8}">loss {hi:.3g}</text>',
        f'<text x="4" y="{height - pad + 14}">{lo:.3g}</text>',
    ]
    for k, rows in enumerate(curves):
        if not rows:
            continue
        color = _COLORS[k % len(_COLORS)]
        line = " ".join(xy(e, v) for _, e, v in rows)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{line}"/>')
        out.append(f'<text x="{width - pad - 60}" y="{pad + 14 * k}" fill="{color}">stage {rows[0][0]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(report, curve_paths, out_dir):
    """Write metrics.json, confusion.csv, loss_curves.csv and loss_curves.svg."""
    out = Path(out_dir)
    curves = [read_curve(p) for p in curve_paths]
    files = {
        "metrics.json": report.to_json() + "\n",
        "confusion.csv": confusion_csv(report),
        "loss_curves.csv": curves_csv(curves),
        "loss_curves.svg": curves_svg(curves),
    }
    for name, text in files.items():
        atomic_write(out / name, text.encode())
    return [out / n for n in files]
