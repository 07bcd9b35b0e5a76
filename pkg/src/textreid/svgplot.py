"""Minimal SVG line charts for sweep results; no plotting dependency."""

from __future__ import annotations

from pathlib import Path

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 30, 40, 55
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def line_chart(series: dict, title: str, x_label: str, y_label: str) -> str:
    """series maps label -> (xs, ys); returns an SVG document string."""
    if not series:
        raise ValueError("line_chart: no series")
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        raise ValueError("line_chart: empty series")
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{_escape(title)}</text>',
    ]
    axis_bottom = MARGIN_T + plot_h
    parts.append(f'<line x1="{MARGIN_L}" y1="{axis_bottom}" x2="{MARGIN_L + plot_w}" '
                 f'y2="{axis_bottom}" stroke="black"/>')
    parts.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
                 f'y2="{axis_bottom}" stroke="black"/>')
    for tick in _ticks(x_lo, x_hi):
        x = px(tick)
        parts.append(f'<line x1="{x:.1f}" y1="{axis_bottom}" x2="{x:.1f}" '
                     f'y2="{axis_bottom + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{axis_bottom + 20}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{tick:g}</text>')
    for tick in _ticks(y_lo, y_hi):
        y = py(tick)
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{y:.1f}" x2="{MARGIN_L}" '
                     f'y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 9}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif">{tick:.3g}</text>')
    parts.append(f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 12}" '
                 f'text-anchor="middle" font-size="13" font-family="sans-serif">'
                 f'{_escape(x_label)}</text>')
    parts.append(f'<text x="18" y="{MARGIN_T + plot_h / 2}" text-anchor="middle" '
                 f'font-size="13" font-family="sans-serif" '
                 f'transform="rotate(-90 18 {MARGIN_T + plot_h / 2})">'
                 f'{_escape(y_label)}</text>')

    for idx, (label, (xs, ys)) in enumerate(series.items()):
        color = COLORS[idx % len(COLORS)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in sorted(zip(xs, ys)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" '
                         f'fill="{color}"/>')
        ly = MARGIN_T + 14 + 16 * idx
        parts.append(f'<line x1="{MARGIN_L + plot_w - 120}" y1="{ly - 4}" '
                     f'x2="{MARGIN_L + plot_w - 100}" y2="{ly - 4}" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{MARGIN_L + plot_w - 94}" y="{ly}" font-size="11" '
                     f'font-family="sans-serif">{_escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_chart(path, series: dict, title: str, x_label: str, y_label: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(line_chart(series, title, x_label, y_label), encoding="utf-8")


def sweep_charts(rows: list, out_dir) -> list:
    """rows: (patch_mask_rate, mim_weight, rank1) tuples from a sweep CSV.
    Emits one chart for the mask-rate leg and one per weight-leg anchor."""
    out_dir = Path(out_dir)
    written = []
    rate_leg = sorted((r, v) for r, w, v in rows if w == 1.0)
    if rate_leg:
        path = out_dir / "rank1_vs_mask_rate.svg"
        write_chart(path, {"weight 1.0": ([r for r, _ in rate_leg],
                                          [v for _, v in rate_leg])},
                    "Rank@1 vs patch mask rate", "patch mask rate", "rank@1")
        written.append(path)
    anchors = sorted({r for r, w, _ in rows if w != 1.0})
    for anchor in anchors:
        leg = sorted((w, v) for r, w, v in rows if r == anchor and w != 1.0)
        path = out_dir / f"rank1_vs_weight_at_rate_{anchor:g}.svg"
        write_chart(path, {f"mask rate {anchor:g}": ([w for w, _ in leg],
                                                     [v for _, v in leg])},
                    f"Rank@1 vs patch-label loss weight (mask rate {anchor:g})",
                    "loss weight", "rank@1")
        written.append(path)
    return written
