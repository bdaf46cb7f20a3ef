"""PPM line plots of the sweep report (performance and cost vs drop ratio)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError

WIDTH, HEIGHT = 480, 320
MARGIN = 40

_BLACK = (0, 0, 0)
_BLUE = (40, 80, 220)
_RED = (220, 60, 40)
_GREEN = (30, 150, 60)


def _blank() -> np.ndarray:
    img = np.full((HEIGHT, WIDTH, 3), 255, dtype=np.uint8)
    img[HEIGHT - MARGIN, MARGIN:WIDTH - MARGIN // 2] = _BLACK   # x axis
    img[MARGIN // 2:HEIGHT - MARGIN + 1, MARGIN] = _BLACK       # y axis
    return img


def _to_px(xs, ys, x_range, y_range):
    x0, x1 = x_range
    y0, y1 = y_range
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    px = MARGIN + (np.asarray(xs) - x0) / span_x * (WIDTH - MARGIN - MARGIN // 2)
    py = (HEIGHT - MARGIN) - (np.asarray(ys) - y0) / span_y * (HEIGHT - MARGIN - MARGIN // 2)
    return px.astype(int), py.astype(int)


def _draw_line(img, x0, y0, x1, y1, color):
    n = max(abs(x1 - x0), abs(y1 - y0), 1)
    xs = np.linspace(x0, x1, n + 1).round().astype(int)
    ys = np.linspace(y0, y1, n + 1).round().astype(int)
    ok = (xs >= 0) & (xs < WIDTH) & (ys >= 0) & (ys < HEIGHT)
    img[ys[ok], xs[ok]] = color


def _draw_series(img, xs, ys, x_range, y_range, color):
    px, py = _to_px(xs, ys, x_range, y_range)
    for i in range(len(px) - 1):
        _draw_line(img, px[i], py[i], px[i + 1], py[i + 1], color)
    for x, y in zip(px, py):
        img[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2] = color


def _write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def render_report(report: dict, out_dir) -> list[Path]:
    """Write iou_vs_ratio.ppm and cost_vs_ratio.ppm from a sweep report."""
    rows = report.get("per_ratio")
    if not rows:
        raise DataError("report has no per_ratio data")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ratios = [r["ratio"] for r in rows]
    x_range = (min(ratios), max(ratios))

    iou = [r["mean_iou"] for r in rows]
    iou_rand = [r["mean_iou_random"] for r in rows]
    img = _blank()
    _draw_series(img, ratios, iou, x_range, (0.0, 1.0), _BLUE)
    _draw_series(img, ratios, iou_rand, x_range, (0.0, 1.0), _RED)
    iou_path = out_dir / "iou_vs_ratio.ppm"
    _write_ppm(iou_path, img)

    cost = [r["mean_cost"] for r in rows]
    img = _blank()
    _draw_series(img, ratios, cost, x_range, (0.0, max(cost) or 1.0), _GREEN)
    cost_path = out_dir / "cost_vs_ratio.ppm"
    _write_ppm(cost_path, img)
    return [iou_path, cost_path]
