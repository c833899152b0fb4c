"""Budget-curve analytics: upper envelopes, performance-at-budget, AUC."""

from __future__ import annotations

import csv
from dataclasses import dataclass

KIND_TOKEN_COST = "token_cost"
KIND_LATENCY = "latency"

HULL_CONVEX = "convex"
HULL_STAIRCASE = "staircase"


@dataclass
class FrontierCurve:
    points: list[tuple[float, float]]  # (budget, performance), budgets increasing
    kind: str = KIND_TOKEN_COST


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def upper_envelope(points, kind: str = KIND_TOKEN_COST,
                   hull: str = HULL_CONVEX) -> FrontierCurve:
    """Attainable frontier of a (budget, performance) scatter.

    Duplicate budgets keep the best performance, points dominated by a
    cheaper-and-better one are dropped, and in convex mode the survivors are
    reduced to their upper concave hull (collinear interior points removed).
    """
    pts = [(float(b), float(p)) for b, p in points]
    if not pts:
        raise ValueError("upper_envelope: no points")
    if any(b < 0 for b, _ in pts):
        raise ValueError("upper_envelope: negative budget")
    best_at = {}
    for b, p in pts:
        if b not in best_at or p > best_at[b]:
            best_at[b] = p
    ordered = sorted(best_at.items())
    swept = []
    for b, p in ordered:
        if not swept or p > swept[-1][1]:
            swept.append((b, p))
    if hull == HULL_STAIRCASE:
        return FrontierCurve(points=swept, kind=kind)
    if hull != HULL_CONVEX:
        raise ValueError(f"unknown hull mode {hull!r}")
    stack: list[tuple[float, float]] = []
    for pt in swept:
        while len(stack) >= 2 and _cross(stack[-2], stack[-1], pt) >= 0:
            stack.pop()
        stack.append(pt)
    return FrontierCurve(points=stack, kind=kind)


def perf_at_budget(frontier: FrontierCurve, budget: float) -> float:
    """Linear interpolation on the frontier; below the first point the curve
    is anchored at (0, 0), beyond the last point it extends flat."""
    pts = frontier.points
    b0, p0 = pts[0]
    if budget <= 0:
        return 0.0 if b0 > 0 else (p0 if budget == b0 else 0.0)
    if budget < b0:
        return budget / b0 * p0
    if budget >= pts[-1][0]:
        return pts[-1][1]
    for (bl, pl), (br, pr) in zip(pts, pts[1:]):
        if bl <= budget <= br:
            return pl + (budget - bl) / (br - bl) * (pr - pl)
    raise AssertionError("unreachable")


def auc(frontier: FrontierCurve, window_max: float,
        base_point: tuple[float, float] | None = None) -> float:
    """Trapezoidal area under the frontier over [0, window_max].

    The curve is anchored at (0, 0); when a base point is supplied and the
    frontier does not reach the window it is appended first (the default for
    cross-method comparisons), otherwise the last performance extends flat.
    """
    if window_max <= 0:
        raise ValueError("auc: window_max must be positive")
    pts = list(frontier.points)
    if pts[0][0] > 0:
        pts.insert(0, (0.0, 0.0))
    if base_point is not None and pts[-1][0] < window_max:
        pts.append((float(base_point[0]), float(base_point[1])))
    if pts[-1][0] < window_max:
        pts.append((window_max, pts[-1][1]))
    area = 0.0
    for (bl, pl), (br, pr) in zip(pts, pts[1:]):
        if bl >= window_max:
            break
        if br <= window_max:
            area += (br - bl) * (pl + pr) / 2.0
        else:
            pw = pl + (window_max - bl) / (br - bl) * (pr - pl)
            area += (window_max - bl) * (pl + pw) / 2.0
            break
    return area


def write_frontier_csv(curves: dict[str, FrontierCurve], dataset: str, path):
    """Columns: kind, budget, performance, method, dataset."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "budget", "performance", "method", "dataset"])
        for method in sorted(curves):
            curve = curves[method]
            for b, p in curve.points:
                writer.writerow([curve.kind, repr(b), repr(p), method, dataset])


def budget_report(curves: dict[str, FrontierCurve], budgets: list[float],
                  window_max: float, base_points: dict[str, tuple[float, float]] | None = None):
    """Per-method P@B values at each budget plus the AUC over the window."""
    report = {}
    for method in sorted(curves):
        curve = curves[method]
        base = None if base_points is None else base_points.get(method)
        report[method] = {
            "p_at_budget": {repr(float(b)): perf_at_budget(curve, b) for b in budgets},
            "auc": auc(curve, window_max, base_point=base),
        }
    return report


def render_report(report: dict, budgets: list[float], kind: str) -> str:
    header = ["method"] + [f"P@{b:g}" for b in budgets] + ["AUC"]
    lines = ["  ".join(f"{h:>12}" for h in header)]
    for method in sorted(report):
        row = [method]
        row += [f"{report[method]['p_at_budget'][repr(float(b))]:.4f}" for b in budgets]
        row += [f"{report[method]['auc']:.6f}"]
        lines.append("  ".join(f"{c:>12}" for c in row))
    return f"[{kind}]\n" + "\n".join(lines)
