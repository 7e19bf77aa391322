"""Space-time interpolation of flow histories for path solvers.

Precomputes per saved slice the node arrays a, log-lapse derivative, S,
S_x, Sic components and the time derivative of S, then serves bilinear
(linear in x, linear in t) point evaluations.  On two-pole topologies a
query coordinate is folded into [0, L] through the pole reflections; odd
fields (the x-derivatives of even ones) flip sign per reflection, which is
exactly the smooth continuation a radial geodesic sees when it crosses a
pole.
"""

from __future__ import annotations

import numpy as np

from .errors import CoupledFlowError
from .geometry import EVEN, ODD, ScalarField, curvature, dx1

#: field name -> parity under pole reflection
_PARITY = {
    "a": EVEN,
    "w": EVEN,       # physical warp radius: |w| at the folded point
    "loga_x": ODD,
    "s": EVEN,
    "s_x": ODD,
    "s_t": EVEN,
    "sic_rad": EVEN,
    "sic_fib": EVEN,
    "w_x": ODD,
}


def get_interpolator(history) -> "FieldInterpolator":
    """Shared per-history interpolator (construction walks every saved
    state once; solvers reuse it)."""
    cached = getattr(history, "_field_interpolator", None)
    if cached is None:
        cached = FieldInterpolator(history)
        history._field_interpolator = cached
    return cached


class FieldInterpolator:
    """Bilinear evaluator of the fields the L-geodesic ODE needs."""

    def __init__(self, history):
        self.history = history
        self.grid = history.grid
        g = self.grid
        k = len(history)
        n = g.node_count
        self.times = history.times
        fields = {name: np.empty((k, n)) for name in _PARITY}
        for i in range(k):
            st = history.state(i)
            metric = st.metric
            curv = curvature(metric, st.phi)
            fields["a"][i] = metric.a
            fields["w"][i] = metric.w
            fields["loga_x"][i] = dx1(metric.a, g, EVEN) / metric.a
            fields["s"][i] = curv.s
            fields["s_x"][i] = dx1(curv.s, g, EVEN)
            fields["sic_rad"][i] = curv.sic_rad
            fields["sic_fib"][i] = curv.sic_fib
            fields["w_x"][i] = dx1(metric.w, g, ODD)
        if k >= 2:
            fields["s_t"] = np.gradient(fields["s"], self.times, axis=0)
        else:
            fields["s_t"] = np.zeros((k, n))
        self.fields = fields
        self._slice_cache = {}

    def time_slice(self, t: float) -> "TimeSlice":
        key = round(float(t), 15)
        cached = self._slice_cache.get(key)
        if cached is None:
            cached = TimeSlice(self, t)
            if len(self._slice_cache) > 4096:
                self._slice_cache.clear()
            self._slice_cache[key] = cached
        return cached


class TimeSlice:
    """All fields blended to a fixed time; evaluates at arbitrary x."""

    def __init__(self, itp: FieldInterpolator, t: float):
        times = itp.times
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise CoupledFlowError(
                f"time {t} outside history range [{times[0]}, {times[-1]}]")
        k = int(np.clip(np.searchsorted(times, t) - 1, 0, max(len(times) - 2, 0)))
        if len(times) == 1:
            lam = 0.0
            k = 0
            kp = 0
        else:
            dt = times[k + 1] - times[k]
            lam = 0.0 if dt == 0 else float(np.clip((t - times[k]) / dt, 0.0, 1.0))
            kp = k + 1
        self.rows = {name: (1 - lam) * arr[k] + lam * arr[kp]
                     for name, arr in itp.fields.items()}
        self.grid = itp.grid
        self.t = t
        g = self.grid
        self._x_nodes = g.x
        self._extent = g.extent

    def _fold(self, x):
        """Map unfolded coordinates into the chart; returns (x_in, sign)."""
        if self.grid.periodic:
            return np.mod(x, self._extent), 1.0
        period = 2.0 * self._extent
        y = np.mod(x, period)
        sign = np.where(y > self._extent, -1.0, 1.0)
        y = np.where(y > self._extent, period - y, y)
        return y, sign

    def eval(self, name: str, x):
        x = np.asarray(x, dtype=float)
        xf, sign = self._fold(x)
        if self.grid.periodic:
            vals = np.interp(xf, self._x_nodes, self.rows[name],
                             period=self._extent)
        else:
            vals = np.interp(xf, self._x_nodes, self.rows[name])
        if _PARITY[name] == ODD and not self.grid.periodic:
            vals = vals * sign
        return vals
