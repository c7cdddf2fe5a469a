"""Least-squares kernels for echo decays, recoveries and lineshapes.

Every model carries an analytic Jacobian; the optimizer is MINPACK's
Levenberg-Marquardt (scipy.optimize.least_squares, method="lm").
Decay times and stretch exponents are optimized in log space so they stay
positive; covariances are reported in the natural parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

N_STARTS = 5


class FitError(RuntimeError):
    """Optimizer failed; `best` holds the best parameters seen and `info` diagnostics."""

    def __init__(self, msg, best=None, info=None):
        super().__init__(msg)
        self.best = best
        self.info = info or {}


@dataclass(frozen=True)
class AveragingModel:
    mode: str = "phase_sensitive"
    n_averages: int = 1
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.mode not in ("phase_sensitive", "magnitude"):
            raise ValueError(f"unknown averaging mode {self.mode!r}")
        if self.n_averages < 1 or self.noise_sigma < 0:
            raise ValueError("n_averages >= 1 and noise_sigma >= 0 required")


@dataclass
class DecayFit:
    components: list
    C: float
    covariance: np.ndarray
    errors: dict
    residual_norm: float
    iterations: int
    mode: str
    frozen: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def T2(self) -> float:
        return self.components[0][0]

    @property
    def x(self) -> float:
        return self.components[0][1]

    def curve(self, two_tau) -> np.ndarray:
        """Fitted echo amplitude at two_tau (s), in the same units as the data."""
        t = np.asarray(two_tau, dtype=float)
        s = sum((t / t2) ** x for t2, x in list(self.components) + list(self.frozen))
        if self.mode == "magnitude":
            return np.sqrt(np.exp(-2.0 * s) + self.C)
        return np.exp(-s)

    def to_dict(self) -> dict:
        return {
            "components": [{"T2_s": t, "x": x} for t, x in self.components],
            "frozen": [{"T2_s": t, "x": x} for t, x in self.frozen],
            "C": self.C,
            "errors": self.errors,
            "covariance": np.asarray(self.covariance).tolist(),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "mode": self.mode,
            "flags": self.flags,
        }


# --------------------------------------------------------------------------
# stretched exponentials


class StretchedModel:
    """exp(-sum_i (t/T_i)^x_i) (phase mode) or exp(-2 sum ...) + C (magnitude mode).

    Free parameters, in order: for each free component T_i then x_i (x_i omitted
    when fixed), then C in magnitude mode. Frozen components add a fixed term.
    """

    def __init__(self, n_free, magnitude=False, frozen=(), fixed_x=None, fit_offset=True):
        self.n_free = n_free
        self.magnitude = magnitude
        self.frozen = [tuple(map(float, f)) for f in frozen]
        self.fixed_x = list(fixed_x) if fixed_x is not None else [None] * n_free
        if len(self.fixed_x) != n_free:
            raise ValueError("fixed_x must have one entry per free component")
        self.fit_offset = magnitude and fit_offset

    @property
    def n_params(self) -> int:
        return sum(1 if fx is not None else 2 for fx in self.fixed_x) + int(self.fit_offset)

    def unpack(self, theta):
        comps, k = [], 0
        for fx in self.fixed_x:
            t2 = theta[k]
            k += 1
            if fx is None:
                x = theta[k]
                k += 1
            else:
                x = fx
            comps.append((t2, x))
        c = theta[k] if self.fit_offset else 0.0
        return comps, c

    def pack(self, comps, c=0.0):
        out = []
        for (t2, x), fx in zip(comps, self.fixed_x):
            out.append(t2)
            if fx is None:
                out.append(x)
        if self.fit_offset:
            out.append(c)
        return np.array(out, dtype=float)

    def _exponent(self, t, comps):
        s = np.zeros_like(t)
        for t2, x in self.frozen + comps:
            s = s + (t / t2) ** x
        return s

    def value(self, t, theta):
        t = np.asarray(t, dtype=float)
        comps, c = self.unpack(theta)
        s = self._exponent(t, comps)
        return np.exp(-2.0 * s) + c if self.magnitude else np.exp(-s)

    def jacobian(self, t, theta):
        """d value / d theta, shape (len(t), n_params)."""
        t = np.asarray(t, dtype=float)
        comps, _ = self.unpack(theta)
        s = self._exponent(t, comps)
        outer = -2.0 * np.exp(-2.0 * s) if self.magnitude else -np.exp(-s)
        cols = []
        for (t2, x), fx in zip(comps, self.fixed_x):
            u = t / t2
            ux = u**x
            cols.append(outer * (-x / t2) * ux)
            if fx is None:
                with np.errstate(divide="ignore", invalid="ignore"):
                    lg = np.where(u > 0, np.log(np.where(u > 0, u, 1.0)), 0.0)
                cols.append(outer * ux * lg)
        if self.fit_offset:
            cols.append(np.ones_like(t))
        return np.column_stack(cols) if cols else np.zeros((len(t), 0))


def _one_over_e_time(t, a):
    below = np.flatnonzero(a < np.exp(-1.0))
    if len(below) == 0:
        return 1.5 * float(t[-1])
    k = below[0]
    if k == 0:
        return float(t[1] if len(t) > 1 else t[0])
    # linear interpolation of the crossing
    t0, t1, a0, a1 = t[k - 1], t[k], a[k - 1], a[k]
    return float(t0 + (np.exp(-1.0) - a0) * (t1 - t0) / (a1 - a0))


def _is_log_param(model: StretchedModel):
    flags = []
    for fx in model.fixed_x:
        flags.append(True)
        if fx is None:
            flags.append(True)
    if model.fit_offset:
        flags.append(False)
    return np.array(flags, dtype=bool)


def _solve(model: StretchedModel, t, y, theta0):
    is_log = _is_log_param(model)

    def to_native(z):
        return np.where(is_log, np.exp(np.clip(z, -700, 700)), z)

    def resid(z):
        return model.value(t, to_native(z)) - y

    def jac(z):
        th = to_native(z)
        return model.jacobian(t, th) * np.where(is_log, th, 1.0)[None, :]

    z0 = np.where(is_log, np.log(theta0), theta0)
    res = least_squares(resid, z0, jac=jac, method="lm", x_scale="jac", max_nfev=2000,
                        ftol=1e-15, xtol=1e-15, gtol=1e-15)
    return res, to_native(res.x)


def fit_stretched(
    two_tau,
    amplitude,
    n_components: int = 1,
    averaging: AveragingModel | None = None,
    frozen=(),
    fixed_x=None,
    seed: int = 0,
    n_starts: int = N_STARTS,
) -> DecayFit:
    """Fit a (multi-)stretched exponential decay to echo amplitudes A_e(2 tau).

    Magnitude mode fits A_e^2 = exp(-2 S) + C; phase-sensitive mode fits
    A_e = exp(-S), with S = sum_i (2 tau / T_i)^x_i over free and frozen components.
    `frozen` holds fixed (T2, x) pairs; `fixed_x` fixes exponents of free
    components (1.0 for an exponential, e.g. instantaneous diffusion).
    """
    averaging = averaging or AveragingModel()
    t = np.asarray(two_tau, dtype=float)
    a = np.asarray(amplitude, dtype=float)
    if t.shape != a.shape or t.ndim != 1:
        raise ValueError("two_tau and amplitude must be 1-D arrays of equal length")
    if len(t) < 8:
        raise ValueError("at least 8 samples are required")
    magnitude = averaging.mode == "magnitude"
    y = a**2 if magnitude else a
    model = StretchedModel(n_components, magnitude, frozen, fixed_x)

    tail = y[-max(2, len(y) // 10):]
    c0 = float(max(np.mean(tail), 0.0)) if magnitude else 0.0
    if magnitude:
        a_est = np.sqrt(np.clip(y - c0, 0.0, None))
    else:
        a_est = y
    t_e = max(_one_over_e_time(t, a_est), np.finfo(float).tiny)
    rng = np.random.default_rng(seed)
    starts = []
    for k in range(n_starts):
        comps = []
        for i, fx in enumerate(model.fixed_x):
            scale = 1.0 if k == 0 else float(np.exp(rng.normal(0.0, 0.5)))
            x0 = fx if fx is not None else (2.0 if k == 0 else float(rng.uniform(1.0, 3.5)))
            comps.append((t_e * scale * (1.0 + i), x0))
        starts.append(model.pack(comps, max(c0, 1e-12)))

    best, best_res, nfev = None, None, 0
    for theta0 in starts:
        res, theta = _solve(model, t, y, theta0)
        nfev += res.nfev
        if best_res is None or res.cost < best_res.cost:
            best, best_res = theta, res
    flags = []
    if not best_res.success:
        raise FitError("stretched-exponential fit did not converge", best=best,
                       info={"message": best_res.message, "nfev": nfev})

    if model.fit_offset and best[-1] < 0:
        flags.append("C_clamped_at_zero")
        clamped = StretchedModel(n_components, True, frozen, fixed_x, fit_offset=False)
        res, theta = _solve(clamped, t, y, best[:-1])
        nfev += res.nfev
        best = np.append(theta, 0.0)
        best_res = res

    comps, c = model.unpack(best)
    jac = model.jacobian(t, best)
    resid = model.value(t, best) - y
    if "C_clamped_at_zero" in flags:
        jac = jac[:, :-1]
    cov = _covariance(jac, resid)
    names = []
    for i, fx in enumerate(model.fixed_x):
        names.append(f"T2_{i}")
        if fx is None:
            names.append(f"x_{i}")
    if model.fit_offset and "C_clamped_at_zero" not in flags:
        names.append("C")
    errors = {n: float(np.sqrt(max(cov[k, k], 0.0))) for k, n in enumerate(names)}
    return DecayFit(
        components=[(float(t2), float(x)) for t2, x in comps],
        C=float(c),
        covariance=cov,
        errors=errors,
        residual_norm=float(np.linalg.norm(resid)),
        iterations=int(nfev),
        mode=averaging.mode,
        frozen=[tuple(f) for f in model.frozen],
        flags=flags,
    )


def _covariance(jac, resid):
    m, p = jac.shape
    if p == 0:
        return np.zeros((0, 0))
    dof = max(m - p, 1)
    s2 = float(resid @ resid) / dof
    return s2 * np.linalg.pinv(jac.T @ jac)


# --------------------------------------------------------------------------
# exponential recovery / decay


def exponential_model(t, theta):
    """offset + amplitude * exp(-t / T1); theta = (T1, amplitude, offset)."""
    t1, amp, off = theta
    return off + amp * np.exp(-np.asarray(t, dtype=float) / t1)


def exponential_jacobian(t, theta):
    t = np.asarray(t, dtype=float)
    t1, amp, _ = theta
    e = np.exp(-t / t1)
    return np.column_stack([amp * e * t / t1**2, e, np.ones_like(t)])


@dataclass
class ExpFit:
    T1: float
    amplitude: float
    offset: float
    errors: dict
    residual_norm: float


def fit_exponential(t, y) -> ExpFit:
    """Three-parameter exponential fit; the amplitude sign is free (recovery or decay)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 5 or t.shape != y.shape:
        raise ValueError("at least 5 samples of equal-length t and y are required")
    span = float(t.max() - t.min()) or 1.0
    dt = float(np.min(np.diff(np.sort(t)))) if len(t) > 1 else span
    # linear amplitude/offset for each trial time constant: robust seed for LM
    trial = np.geomspace(max(dt / 10.0, span * 1e-4), span * 10.0, 80)
    best = None
    for t1 in trial:
        basis = np.column_stack([np.exp(-t / t1), np.ones_like(t)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        r = basis @ coef - y
        cost = float(r @ r)
        if best is None or cost < best[0]:
            best = (cost, t1, coef)
    _, t1_0, (amp0, off0) = best

    def resid(z):
        return exponential_model(t, (np.exp(z[0]), z[1], z[2])) - y

    def jac(z):
        th = (np.exp(z[0]), z[1], z[2])
        j = exponential_jacobian(t, th)
        j[:, 0] *= th[0]
        return j

    res = least_squares(resid, [np.log(t1_0), amp0, off0], jac=jac, method="lm", x_scale="jac",
                        ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=2000)
    if not res.success:
        raise FitError("exponential fit did not converge", best=res.x, info={"message": res.message})
    theta = (float(np.exp(res.x[0])), float(res.x[1]), float(res.x[2]))
    r = exponential_model(t, theta) - y
    cov = _covariance(exponential_jacobian(t, theta), r)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return ExpFit(*theta, errors={"T1": float(err[0]), "amplitude": float(err[1]), "offset": float(err[2])},
                  residual_norm=float(np.linalg.norm(r)))


# --------------------------------------------------------------------------
# Lorentzian


def lorentzian_model(x, theta):
    """amplitude / (1 + ((x - center) / (fwhm / 2))^2); theta = (center, fwhm, amplitude)."""
    x0, w, amp = theta
    u = 2.0 * (np.asarray(x, dtype=float) - x0) / w
    return amp / (1.0 + u**2)


def lorentzian_jacobian(x, theta):
    x0, w, amp = theta
    x = np.asarray(x, dtype=float)
    u = 2.0 * (x - x0) / w
    den = 1.0 + u**2
    d_u = -2.0 * amp * u / den**2
    return np.column_stack([d_u * (-2.0 / w), d_u * (-u / w), 1.0 / den])


@dataclass
class LorentzFit:
    center: float
    fwhm: float
    amplitude: float
    errors: dict
    residual_norm: float


def fit_lorentzian(x, y) -> LorentzFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 5 or x.shape != y.shape:
        raise ValueError("at least 5 samples are required")
    k = int(np.argmax(np.abs(y)))
    amp0 = float(y[k])
    above = np.flatnonzero(np.abs(y) >= 0.5 * abs(amp0))
    w0 = float(x[above].max() - x[above].min()) if len(above) > 1 else float(np.ptp(x)) / 4.0
    w0 = w0 or float(np.ptp(x)) / 4.0

    def resid(z):
        return lorentzian_model(x, (z[0], np.exp(z[1]), z[2])) - y

    def jac(z):
        th = (z[0], np.exp(z[1]), z[2])
        j = lorentzian_jacobian(x, th)
        j[:, 1] *= th[1]
        return j

    res = least_squares(resid, [float(x[k]), np.log(w0), amp0], jac=jac, method="lm", x_scale="jac",
                        ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=2000)
    if not res.success:
        raise FitError("Lorentzian fit did not converge", best=res.x, info={"message": res.message})
    theta = (float(res.x[0]), float(np.exp(res.x[1])), float(res.x[2]))
    r = lorentzian_model(x, theta) - y
    cov = _covariance(lorentzian_jacobian(x, theta), r)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return LorentzFit(*theta, errors={"center": float(err[0]), "fwhm": float(err[1]), "amplitude": float(err[2])},
                      residual_norm=float(np.linalg.norm(r)))


# --------------------------------------------------------------------------
# echo averaging


def _integrals(i_traces, q_traces, dt):
    i_traces = np.atleast_2d(np.asarray(i_traces, dtype=float))
    q_traces = np.atleast_2d(np.asarray(q_traces, dtype=float))
    return i_traces.sum(axis=-1) * dt, q_traces.sum(axis=-1) * dt


def magnitude_average(i_traces, q_traces, dt: float = 1.0) -> float:
    """sqrt(mean_n([int I_n]^2 + [int Q_n]^2)); insensitive to per-trace phase."""
    i_int, q_int = _integrals(i_traces, q_traces, dt)
    return float(np.sqrt(np.mean(i_int**2 + q_int**2)))


def phase_average(i_traces, q_traces, theta: float = 0.0, dt: float = 1.0) -> float:
    """Re(e^{-i theta} mean_n(int I_n + i int Q_n))."""
    i_int, q_int = _integrals(i_traces, q_traces, dt)
    return float(np.real(np.exp(-1j * theta) * np.mean(i_int + 1j * q_int)))
