"""Optical activation functions and their backward responses.

A saturable absorber (SA) transmits a strong forward field nonlinearly while
a weak counter-propagating probe sees only the pump-set transparency.  The
probe transmission is therefore an optically-obtainable stand-in for the
activation derivative.  Gain saturation (GS) is the amplifying analog, with
the absorption depth replaced by a negative-signed gain factor.

Field amplitudes are normalized to the saturation threshold and treated as
real-valued.  All functions are numpy ufunc-style: scalars in, scalar out;
arrays in, elementwise arrays out.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

KINDS = ("sa", "gs", "relu", "sigmoid", "tanh", "linear")
DERIVATIVE_MODES = ("exact", "optical", "tabulated")

# exp((50/2)/(1+0)) is already ~7e10; beyond this float32 activations overflow
MAX_GAIN = 50.0


class ValidationError(ValueError):
    """A spec or table failed construction-time validation."""


def sa_forward(e_in, alpha0):
    """Pump transmission of a saturable absorber: exp(-(a0/2)/(1+E^2)) * E."""
    e_in = np.asarray(e_in)
    return np.exp(-(alpha0 / 2.0) / (1.0 + e_in * e_in)) * e_in


def sa_derivative_exact(e_in, alpha0):
    """Analytic derivative of sa_forward.

    [1 + a0 E^2/(1+E^2)^2] * exp(-(a0/2)/(1+E^2)); >= the probe response
    everywhere, approaching 1 deep in saturation.
    """
    e_in = np.asarray(e_in)
    e2 = e_in * e_in
    s = 1.0 + e2
    return (1.0 + alpha0 * e2 / (s * s)) * np.exp(-(alpha0 / 2.0) / s)


def sa_derivative_optical(e_pump, alpha0):
    """Probe transmission at pump amplitude E_P: exp(-(a0/2)/(1+E_P^2)).

    This is the response a backward-propagating error field experiences; it
    approximates sa_derivative_exact up to the bracket factor.
    """
    e_pump = np.asarray(e_pump)
    return np.exp(-(alpha0 / 2.0) / (1.0 + e_pump * e_pump))


def gs_forward(e_in, g0):
    """Transmission through a saturating amplifier: exp(+(g0/2)/(1+E^2)) * E."""
    e_in = np.asarray(e_in)
    return np.exp((g0 / 2.0) / (1.0 + e_in * e_in)) * e_in


def gs_derivative_exact(e_in, g0):
    """Analytic derivative of gs_forward: [1 - g0 E^2/(1+E^2)^2] * exp(+(g0/2)/(1+E^2))."""
    e_in = np.asarray(e_in)
    e2 = e_in * e_in
    s = 1.0 + e2
    return (1.0 - g0 * e2 / (s * s)) * np.exp((g0 / 2.0) / s)


def gs_derivative_optical(e_pump, g0):
    """Probe gain at pump amplitude E_P: exp(+(g0/2)/(1+E_P^2))."""
    e_pump = np.asarray(e_pump)
    return np.exp((g0 / 2.0) / (1.0 + e_pump * e_pump))


def baseline_forward(z, kind):
    """Standard computational activations: relu, sigmoid, tanh, linear."""
    z = np.asarray(z)
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    raise ValidationError(f"unknown baseline kind {kind!r}")


def baseline_derivative(z, kind):
    """Derivatives of the baseline activations; relu'(0) is defined as 0."""
    z = np.asarray(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype if z.dtype.kind == "f" else np.float64)
    if kind == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "linear":
        return np.ones_like(z, dtype=z.dtype if z.dtype.kind == "f" else np.float64)
    raise ValidationError(f"unknown baseline kind {kind!r}")


class DerivativeTable:
    """Symmetric tabulated backward response on [-z_max, z_max].

    Knot values are interpolated with a monotone (Fritsch-Carlson style)
    piecewise cubic, so the interpolant never overshoots neighboring samples.
    Tables must be even functions; evaluation uses |z| to make f(-z) == f(z)
    hold exactly, and clamps to the endpoint value outside the grid.  Values
    from the random-response generator lie in [0, 1]; construction itself only
    requires them to be finite and nonnegative.
    """

    def __init__(self, grid, values):
        grid = np.asarray(grid, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 4:
            raise ValidationError("table needs matching 1-d grid/values with >= 4 knots")
        if not np.all(np.diff(grid) > 0):
            raise ValidationError("table grid must be strictly ascending")
        if not (np.all(np.isfinite(grid)) and np.all(np.isfinite(values))):
            raise ValidationError("table grid/values must be finite")
        if np.any(values < 0):
            raise ValidationError("table values must be nonnegative")
        if not (np.allclose(grid, -grid[::-1], atol=1e-12) and np.allclose(values, values[::-1], atol=1e-12)):
            raise ValidationError("table must be symmetric: grid = -reversed(grid), values = reversed(values)")
        self.grid = grid
        self.values = values
        self.z_max = float(grid[-1])
        self._interp = PchipInterpolator(grid, values, extrapolate=False)

    def __call__(self, z):
        z = np.clip(np.abs(np.asarray(z, dtype=np.float64)), 0.0, self.z_max)
        return self._interp(z)

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump({"grid": self.grid.tolist(), "values": self.values.tolist()}, f)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            payload = json.load(f)
        return cls(payload["grid"], payload["values"])


@dataclass(frozen=True)
class NonlinearitySpec:
    """Activation choice: kind, saturation depth, and backward response mode.

    depth is the optical depth for SA, the gain factor for GS, and ignored for
    the computational baselines.  derivative_mode picks what multiplies the
    backpropagated error: the analytic derivative, the probe transmission, or
    a tabulated response (SA study configurations only).
    """

    kind: str
    depth: float = 0.0
    derivative_mode: str = "exact"
    table: DerivativeTable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.derivative_mode not in DERIVATIVE_MODES:
            raise ValidationError(f"derivative_mode must be one of {DERIVATIVE_MODES}")
        if self.depth < 0:
            raise ValidationError("depth must be nonnegative")
        if self.kind == "gs" and self.depth > MAX_GAIN:
            raise ValidationError(f"gain factor {self.depth} > {MAX_GAIN} would overflow float32")
        if self.derivative_mode == "tabulated":
            if self.kind != "sa":
                raise ValidationError("tabulated derivative mode is only valid for the sa kind")
            if self.table is None:
                raise ValidationError("tabulated derivative mode requires a table")
        elif self.table is not None:
            raise ValidationError("table given but derivative_mode is not 'tabulated'")

    def to_dict(self):
        d = {"kind": self.kind, "depth": self.depth, "derivative_mode": self.derivative_mode}
        if self.table is not None:
            d["table"] = {"grid": self.table.grid.tolist(), "values": self.table.values.tolist()}
        return d

    @classmethod
    def from_dict(cls, d):
        table = d.get("table")
        if table is not None:
            table = DerivativeTable(table["grid"], table["values"])
        return cls(d["kind"], d.get("depth", 0.0), d.get("derivative_mode", "exact"), table)


def forward(spec, z):
    """Apply the activation of `spec` elementwise."""
    if spec.kind == "sa":
        return sa_forward(z, spec.depth)
    if spec.kind == "gs":
        return gs_forward(z, spec.depth)
    return baseline_forward(z, spec.kind)


def backward_response(spec, z):
    """Factor that multiplies the backpropagated error at pre-activation z.

    Dispatches on derivative_mode.  No rescaling is applied in optical mode;
    the constant offset from the exact derivative is absorbed into the
    learning rate.
    """
    if spec.derivative_mode == "tabulated":
        return spec.table(z)
    if spec.kind == "sa":
        if spec.derivative_mode == "optical":
            return sa_derivative_optical(z, spec.depth)
        return sa_derivative_exact(z, spec.depth)
    if spec.kind == "gs":
        if spec.derivative_mode == "optical":
            return gs_derivative_optical(z, spec.depth)
        return gs_derivative_exact(z, spec.depth)
    return baseline_derivative(z, spec.kind)
