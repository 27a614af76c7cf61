"""Absorption terms g and their truncations g_k = min(g, k).

Every kind is nondecreasing, continuous and vanishes on (-inf, 0].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

KINDS = ("zero", "power", "exponential", "table")

MAX_ITERS = 100
RESIDUAL_TOL = 1e-13


class NonlinearityError(ValueError):
    pass


class ReactionSolveError(RuntimeError):
    """The scalar implicit solve did not reach its residual tolerance."""


@dataclass(frozen=True)
class NonlinearitySpec:
    """``kind`` in {"zero", "power", "exponential", "table"}.

    power: ``c r^p`` for r > 0. exponential: ``exp(a r) - 1`` for r > 0.
    table: piecewise-linear through ``(r, g)`` samples starting at (0, 0),
    extended beyond the last sample with the last slope.
    ``k`` is the truncation level (``inf`` for none).
    """

    kind: str = "zero"
    p: float = 2.0
    c: float = 1.0
    a: float = 1.0
    table: tuple[tuple[float, float], ...] = ()
    k: float = math.inf
    _tab: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NonlinearityError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if not self.k > 0:
            raise NonlinearityError(f"truncation level must be positive, got {self.k}")
        if self.kind == "power" and not (self.p > 1 and self.c > 0):
            raise NonlinearityError(f"power kind needs p > 1 and c > 0, got p={self.p}, c={self.c}")
        if self.kind == "exponential" and not self.a > 0:
            raise NonlinearityError(f"exponential kind needs a > 0, got {self.a}")
        if self.kind == "table":
            pts = [(float(r), float(v)) for r, v in self.table]
            if not pts or pts[0][0] != 0.0:
                pts = [(0.0, 0.0)] + pts
            r = np.array([q[0] for q in pts])
            v = np.array([q[1] for q in pts])
            if v[0] != 0.0:
                raise NonlinearityError("table must vanish at r = 0")
            if np.any(np.diff(r) <= 0) or np.any(np.diff(v) < 0) or len(r) < 2:
                raise NonlinearityError("table samples must have increasing r and nondecreasing g")
            object.__setattr__(self, "table", tuple(pts))
            slope = (v[-1] - v[-2]) / (r[-1] - r[-2])
            object.__setattr__(self, "_tab", (r, v, slope))

    # label used in manifests and reports
    @property
    def label(self) -> str:
        core = {
            "zero": "zero",
            "power": f"power(p={self.p:g},c={self.c:g})",
            "exponential": f"exponential(a={self.a:g})",
            "table": f"table({len(self.table)} pts)",
        }[self.kind]
        return core if math.isinf(self.k) else f"{core},k={self.k:g}"

    def truncated(self, k: float) -> "NonlinearitySpec":
        return replace(self, k=float(k))

    def untruncated(self) -> "NonlinearitySpec":
        return replace(self, k=math.inf)

    def raw(self, r):
        """g(r) without truncation, vectorized."""
        r = np.asarray(r, dtype=float)
        rp = np.maximum(r, 0.0)
        if self.kind == "zero":
            return np.zeros_like(rp)
        if self.kind == "power":
            return self.c * rp**self.p
        if self.kind == "exponential":
            with np.errstate(over="ignore"):
                return np.expm1(self.a * rp)
        r0, v0, slope = self._tab
        return np.where(rp <= r0[-1], np.interp(rp, r0, v0), v0[-1] + slope * (rp - r0[-1]))

    def __call__(self, r):
        return np.minimum(self.raw(r), self.k)

    def raw_derivative(self, r):
        r = np.asarray(r, dtype=float)
        rp = np.maximum(r, 0.0)
        if self.kind == "zero":
            return np.zeros_like(rp)
        if self.kind == "power":
            return self.c * self.p * rp ** (self.p - 1)
        if self.kind == "exponential":
            with np.errstate(over="ignore"):
                return self.a * np.exp(self.a * rp)
        r0, v0, slope = self._tab
        seg = np.diff(v0) / np.diff(r0)
        idx = np.clip(np.searchsorted(r0, rp, side="right") - 1, 0, len(seg) - 1)
        return np.where(rp >= r0[-1], slope, seg[idx])

    def threshold(self) -> float:
        """Smallest r with g(r) >= k (inf when the truncation never binds)."""
        if math.isinf(self.k) or self.kind == "zero":
            return math.inf
        if self.kind == "power":
            return (self.k / self.c) ** (1.0 / self.p)
        if self.kind == "exponential":
            return math.log1p(self.k) / self.a
        r0, v0, slope = self._tab
        if self.k <= v0[-1]:
            j = int(np.searchsorted(v0, self.k, side="left"))
            if v0[j] == v0[j - 1]:
                return float(r0[j - 1])
            return float(r0[j - 1] + (self.k - v0[j - 1]) * (r0[j] - r0[j - 1]) / (v0[j] - v0[j - 1]))
        return math.inf if slope == 0 else float(r0[-1] + (self.k - v0[-1]) / slope)


def g_eval(spec: NonlinearitySpec, r):
    """``min(g(r), k)``; scalar in, float out."""
    out = spec(r)
    return float(out) if np.ndim(out) == 0 else out


def implicit_reaction_solve(spec: NonlinearitySpec, dt: float, w):
    """Solve ``v + dt * g_k(v) = w`` nodewise.

    The map ``v -> v + dt g_k(v)`` is continuous and strictly increasing, so
    the root is unique and lies in ``[min(0, w), max(0, w)]``. Newton steps are
    kept inside a shrinking bracket; where truncation binds the root is closed
    form. Iteration stops at a residual of ``1e-13 |w|`` (or a collapsed
    bracket); :class:`ReactionSolveError` is raised if the final residual
    exceeds ``1e-12 max(1, |w|)``. The result is then snapped to the largest
    float that does not overshoot ``w``, which makes it exactly monotone.
    """
    if not dt > 0:
        raise NonlinearityError(f"dt must be positive, got {dt}")
    w_arr = np.asarray(w, dtype=float)
    scalar = w_arr.ndim == 0
    w_arr = np.atleast_1d(w_arr)
    v = w_arr.copy()
    if spec.kind == "zero":
        return float(v[0]) if scalar else v

    pos = w_arr > 0
    thr = spec.threshold()
    # truncation binds: v >= thr and v = w - dt k
    capped = pos & (w_arr - dt * spec.k >= thr) if math.isfinite(thr) else np.zeros_like(pos)
    v[capped] = w_arr[capped] - dt * spec.k
    todo = pos & ~capped
    if np.any(todo):
        ww = w_arr[todo]
        lo = np.zeros_like(ww)
        hi = np.minimum(ww, thr) if math.isfinite(thr) else ww.copy()
        x = _initial_guess(spec, dt, ww, hi)
        # relative to w: an absolute floor would let small data drift in the mass balance
        tol = RESIDUAL_TOL * np.abs(ww)
        done = np.zeros(ww.shape, dtype=bool)
        prev = np.full(ww.shape, np.inf)
        for _ in range(MAX_ITERS):
            res = x + dt * spec(x) - ww
            done = np.abs(res) <= tol
            if done.all():
                break
            slow = np.abs(res) > 0.5 * prev
            prev = np.abs(res)
            lo = np.where(res < 0, np.maximum(lo, x), lo)
            hi = np.where(res > 0, np.minimum(hi, x), hi)
            slope = 1.0 + dt * np.where(x < thr, spec.raw_derivative(x), 0.0)
            with np.errstate(invalid="ignore", over="ignore"):
                xn = x - res / slope
            bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi) | slow
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            # a collapsed bracket is as good as the arithmetic allows
            stuck = hi - lo <= 4 * np.finfo(float).eps * np.abs(hi)
            x = np.where(done, x, np.where(stuck, x, xn))
            if np.all(done | stuck):
                break
        # one more Newton step lands within an ulp or two of the root
        res = x + dt * spec(x) - ww
        slope = 1.0 + dt * np.where(x < thr, spec.raw_derivative(x), 0.0)
        with np.errstate(invalid="ignore", over="ignore"):
            xn = x - res / slope
        x = np.where(np.isfinite(xn) & (xn >= 0.0) & (xn <= ww), xn, x)
        res = np.abs(x + dt * spec(x) - ww)
        worst = float(np.max(res / np.maximum(1.0, np.abs(ww))))
        if worst > 1e-12:
            raise ReactionSolveError(
                f"implicit reaction solve for {spec.label} did not converge: relative residual {worst:.3e}"
            )
        v[todo] = x
    if np.any(pos):
        v[pos] = _canonical_root(spec, dt, w_arr[pos], v[pos])
    return float(v[0]) if scalar else v


def _canonical_root(spec, dt, w, x):
    """Largest float v with ``fl(v + dt g_k(v)) <= w``, found near ``x``.

    Newton stops anywhere inside its tolerance, so two levels with the same
    root could land on either side of each other. The largest feasible float
    is exactly nonincreasing in k and nondecreasing in w.
    """
    xi = x.view(np.int64)  # order-preserving for floats >= 0
    a, b = np.maximum(xi - 2, 0), xi + 2
    bad = ~_feasible(spec, dt, w, a) | _feasible(spec, dt, w, b)
    if bad.any():
        xb, wb = x[bad], w[bad]
        lo = np.maximum(xb * (1.0 - 1e-11), 0.0).view(np.int64)
        hi = np.nextafter(xb * (1.0 + 1e-11), np.inf).view(np.int64)
        wide = ~_feasible(spec, dt, wb, lo) | _feasible(spec, dt, wb, hi)
        # [0, w+] always brackets: F(0) = 0 and F(v) > v
        lo[wide] = 0
        hi[wide] = np.nextafter(wb[wide], np.inf).view(np.int64)
        a[bad] = _bisect(spec, dt, wb, lo, hi)
        b[bad] = a[bad] + 1
    return _bisect(spec, dt, w, a, b).view(np.float64)


def _feasible(spec, dt, w, vi):
    v = vi.view(np.float64)
    return v + dt * spec(v) <= w


def _bisect(spec, dt, w, a, b):
    while np.any(b - a > 1):
        m = a + (b - a) // 2
        ok = _feasible(spec, dt, w, m)
        a = np.where(ok, m, a)
        b = np.where(ok, b, m)
    return a


def _initial_guess(spec, dt, w, hi):
    if spec.kind == "power":
        # balance of the two terms, clipped into the bracket
        guess = np.minimum(w, (w / (dt * spec.c)) ** (1.0 / spec.p))
        return np.clip(guess, 0.0, hi)
    if spec.kind == "exponential":
        return np.clip(np.log1p(w / dt) / spec.a, 0.0, hi)
    return np.minimum(w, hi) * 0.5
