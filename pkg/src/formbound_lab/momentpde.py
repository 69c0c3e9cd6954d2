"""Finite-difference solvers for the closed moment equations and their checks.

All three parabolic systems are integrated on a periodic box with an IMEX
split: explicit first-order upwind transport, implicit spectral diffusion,
and an exact integrating factor for the zeroth-order decay.  The checks
verify the constant-1 inequalities under their admissibility gates.
"""

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels, weights
from .grid import irfftn, rfftn

log = logging.getLogger(__name__)


class AdmissibilityError(ValueError):
    """A check was requested outside its validity gates."""

    def __init__(self, gate, message):
        self.gate = gate
        super().__init__(f"[{gate}] {message}")


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdSet:
    """The explicit constants gating the moment estimates."""

    d: int
    q: int
    p: float
    delta: float
    c_delta: float
    sigma: float
    beta_2q: float
    p_c: float
    mu_e1: float
    c_hat: float
    mu_dual: float
    kappa_star: float
    delta_is_zero: bool
    admissible_e1: bool
    admissible_grad: bool
    admissible_dual: bool


def thresholds(d, q, p, delta, c_delta, sigma):
    """beta_2q = 1+4qd, p_c = (1-sqrt(delta)/sigma^2)^-1, and the mu floors.

    mu_e1 = c_delta/(4 sqrt(delta) p), c_hat = 2qd c_delta/sqrt(delta) +
    c_delta/(2 sqrt(delta)), mu_dual = 3 c_delta/(4 sqrt(delta)); for
    delta = 0 the mu floors are 0 (no lower-order term to absorb) and the
    flag ``delta_is_zero`` is set.
    """
    if sigma == 0:
        raise ValueError("sigma must be nonzero")
    sigma2 = sigma * sigma
    sq = math.sqrt(delta)
    beta_2q = 1.0 + 4.0 * q * d
    delta_is_zero = delta == 0.0
    if sq < sigma2:
        p_c = 1.0 / (1.0 - sq / sigma2)
    else:
        p_c = math.inf
    if delta_is_zero:
        mu_e1 = c_hat = mu_dual = 0.0
    else:
        mu_e1 = c_delta / (4.0 * sq * p)
        c_hat = 2.0 * q * d * c_delta / sq + c_delta / (2.0 * sq)
        mu_dual = 3.0 * c_delta / (4.0 * sq)
    kappa_star = sigma2 / 2.0 - beta_2q * sq
    return ThresholdSet(
        d=d, q=q, p=p, delta=delta, c_delta=c_delta, sigma=sigma,
        beta_2q=beta_2q, p_c=p_c, mu_e1=mu_e1, c_hat=c_hat, mu_dual=mu_dual,
        kappa_star=kappa_star, delta_is_zero=delta_is_zero,
        admissible_e1=(sq < sigma2 and p > p_c),
        admissible_grad=(sq < sigma2 / (2.0 * beta_2q)),
        admissible_dual=(sq < sigma2 / 6.0),
    )


def e2_proof_bracket(delta, sigma, theta, kappa, nu=None, eps=None, gamma=None, alpha=None):
    """The positivity bracket sigma^2/2 - nu delta (1+eps) - 1/(4 nu) - sigma gamma
    - (sigma^2/2) theta sqrt(kappa) / (4 alpha).

    Defaults follow the proof-side choices: nu = 1/(2 sqrt(delta)) and the
    remaining slack sigma^2/2 - sqrt(delta) split equally among the eps,
    gamma, and kappa terms (alpha grows with sqrt(kappa), so any kappa still
    leaves half the slack).
    """
    sigma2 = sigma * sigma
    sq = math.sqrt(delta)
    if sq >= sigma2 / 2.0:
        return -math.inf
    slack = sigma2 / 2.0 - sq
    nu = 1.0 / (2.0 * sq) if nu is None else nu
    eps = slack / (3.0 * sq) if eps is None else eps
    gamma = slack / (6.0 * sigma) if gamma is None else gamma
    if alpha is None:
        kterm = (sigma2 / 2.0) * theta * math.sqrt(kappa)
        alpha = max(1.0, 1.5 * kterm / slack)
    return (sigma2 / 2.0 - nu * delta * (1.0 + eps) - 1.0 / (4.0 * nu)
            - sigma * gamma - (sigma2 / 2.0) * theta * math.sqrt(kappa) / (4.0 * alpha))


def dual_proof_bracket(delta, sigma, theta, kappa):
    """Positivity surrogate for the weighted dual estimate.

    sigma^2/2 - 3 sqrt(delta) at the optimal quadratic split, minus the
    (sigma^2/2) theta sqrt(kappa) allowance for the weight-gradient terms.
    """
    sigma2 = sigma * sigma
    return sigma2 / 2.0 - 3.0 * math.sqrt(delta) - (sigma2 / 2.0) * theta * math.sqrt(kappa)


# ---------------------------------------------------------------------------
# solver configuration and drift preparation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    sigma: float
    mu: float
    T: float
    dt: float = None
    min_steps: int = 40
    track_p: tuple = (2.0,)
    snapshot_times: tuple = ()
    boundary_band: float = 0.9

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive (noise is always on)")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.T <= 0:
            raise ValueError("T must be positive")


def _resolve_dt(cfg, grid, max_speed):
    cfl = grid.h / (2.0 * max_speed) if max_speed > 0 else math.inf
    if cfg.dt is not None:
        if cfg.dt > cfl * (1.0 + 1e-12):
            raise ValueError(
                f"dt={cfg.dt} violates the advective CFL bound h/(2 max|b|)={cfl:.6g}")
        dt = cfg.dt
    else:
        dt = min(cfl, cfg.T / cfg.min_steps)
    nsteps = max(1, int(math.ceil(cfg.T / dt - 1e-12)))
    return cfg.T / nsteps, nsteps


def _drift_samples(field_or_series, grid, need_grad=False):
    """Capped drift samples stacked (d, *shape), plus Jacobian (d, d, *shape)."""
    from .drift import DriftField
    from .regularize import MollifiedDrift

    cap = 1.0 / grid.h
    if isinstance(field_or_series, MollifiedDrift):
        member = field_or_series
        if member.grid == grid:
            samples = member.field.params["samples"]
            grads = member.field.params["grad_samples"] if need_grad else None
        else:
            from .regularize import _gradient_samples

            samples = member.sample_on(grid)
            grads = _gradient_samples(samples, grid) if need_grad else None
    elif isinstance(field_or_series, DriftField):
        fld = field_or_series
        if fld.kind == "grid_sampled" and fld.params["grid"] == grid:
            samples = fld.params["samples"]
            grads = fld.params.get("grad_samples") if need_grad else None
            if need_grad and grads is None:
                raise ValueError("drift has no Jacobian samples; gradient solvers refuse it")
        else:
            samples = fld.sample_on(grid, cap=cap, floor=grid.h / 2.0)
            if need_grad:
                if not fld.differentiable:
                    raise ValueError("drift has no Jacobian; gradient solvers refuse it")
                grads = fld.gradient(grid.points()).reshape(grid.shape + (grid.d, grid.d))
            else:
                grads = None
    else:
        raise TypeError("expected a DriftField or MollifiedDrift")

    samples = np.where(np.isfinite(samples), samples, 0.0)
    from .drift import cap_magnitude

    samples = cap_magnitude(samples, cap)
    bstack = np.ascontiguousarray(np.moveaxis(samples, -1, 0))
    gstack = None
    if need_grad and grads is not None:
        gcap = cap * cap
        grads = np.clip(np.where(np.isfinite(grads), grads, 0.0), -gcap, gcap)
        gstack = np.ascontiguousarray(np.moveaxis(grads.reshape(grid.shape + (grid.d**2,)), -1, 0))
        gstack = gstack.reshape((grid.d, grid.d) + grid.shape)  # [r, c] = d_r b^c
    return bstack, gstack


def _field_samples(f, grid):
    if hasattr(f, "on_grid"):
        return f.on_grid(grid)
    arr = np.asarray(f, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError("initial data shape does not match the grid")
    return arr


def _grad_samples_of_f(f, grid):
    if hasattr(f, "grad_on_grid"):
        return f.grad_on_grid(grid)
    from .grid import spectral_gradient

    return spectral_gradient(_field_samples(f, grid), grid)


def lp_norm(v, grid, p):
    return float((np.sum(np.abs(v) ** p) * grid.cell_volume) ** (1.0 / p))


def _grad_sq_integral(v, grid):
    """Central-difference integral of |grad v|^2 (independent of the spectral step)."""
    total = 0.0
    for ax in range(grid.d):
        g = (np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2.0 * grid.h)
        total += np.sum(g * g)
    return float(total * grid.cell_volume)


# ---------------------------------------------------------------------------
# series container
# ---------------------------------------------------------------------------


@dataclass
class MomentSeries:
    kind: str
    times: np.ndarray
    grid: object
    sigma: float
    mu: float
    dt: float
    traces: dict
    snapshots: dict
    final: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def trace(self, name):
        return np.asarray(self.traces[name])


def _boundary_mask(grid, band):
    m = grid.meshes()
    mask = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.d):
        mask |= np.abs(m[ax]) > band * grid.half_width
    return mask


class _Tracker:
    def __init__(self):
        self.data = {}

    def push(self, **kv):
        for k, v in kv.items():
            self.data.setdefault(k, []).append(float(v))

    def arrays(self):
        return {k: np.asarray(v) for k, v in self.data.items()}


def _implicit_diffusion_factor(grid, sigma, dt):
    return 1.0 / (1.0 + dt * (sigma * sigma / 2.0) * grid.rfft_ksq())


# ---------------------------------------------------------------------------
# second-moment solver:  dv/dt = -2 mu v - b.grad v + (sigma^2/2) Lap v
# ---------------------------------------------------------------------------


def solve_second_moment(b, f, grid, cfg):
    """Time series of v = E[u^2] with v(0) = f^2 (exact at the nodes)."""
    if grid.boundary != "periodic":
        raise ValueError("the spectral IMEX solver requires a periodic box")
    bstack, _ = _drift_samples(b, grid, need_grad=False)
    max_speed = float(np.sqrt(np.sum(bstack**2, axis=0)).max())
    dt, nsteps = _resolve_dt(cfg, grid, max_speed)

    fs = _field_samples(f, grid)
    v = fs * fs
    decay = math.exp(-2.0 * cfg.mu * dt)
    mult = _implicit_diffusion_factor(grid, cfg.sigma, dt)
    bmask = _boundary_mask(grid, cfg.boundary_band)
    snap_steps = {int(round(t / dt)): t for t in cfg.snapshot_times}

    tracker = _Tracker()
    snapshots = {}
    times = [0.0]

    def record(step, v, min_pre=0.0, clip_mass=0.0):
        tot = float(np.sum(v))
        kv = {"clip_mass": clip_mass * grid.cell_volume, "min_pre_clip": min_pre,
              "boundary_frac": float(np.sum(v[bmask]) / tot) if tot > 0 else 0.0}
        for p in cfg.track_p:
            vp = v ** (p / 2.0)
            kv[f"lp_{p:g}"] = lp_norm(v, grid, p)
            kv[f"dissipation_{p:g}"] = _grad_sq_integral(vp, grid)
        tracker.push(**kv)
        if step in snap_steps:
            snapshots[snap_steps[step]] = v.copy()

    record(0, v)
    for step in range(1, nsteps + 1):
        v = v - dt * kernels.advect_upwind(v, bstack, grid.h)
        v = irfftn(mult * rfftn(v, grid), grid)
        v *= decay
        min_pre = float(v.min())
        neg = v < 0
        clip = float(-v[neg].sum()) if np.any(neg) else 0.0
        if clip:
            v = np.where(neg, 0.0, v)
        if not np.isfinite(v).all():
            raise RuntimeError(f"NaN/Inf detected at step {step} (t={step * dt:.6g})")
        times.append(step * dt)
        record(step, v, min_pre, clip)

    return MomentSeries("second_moment", np.asarray(times), grid, cfg.sigma, cfg.mu,
                        dt, tracker.arrays(), snapshots, v,
                        meta={"max_speed": max_speed, "nsteps": nsteps})


# ---------------------------------------------------------------------------
# gradient-moment system, q = 1:  V_ij = E[d_i u d_j u]
# ---------------------------------------------------------------------------


def gradient_component_index(d):
    comps = [(i, j) for i in range(d) for j in range(i, d)]
    lookup = {}
    for idx, (i, j) in enumerate(comps):
        lookup[(i, j)] = idx
        lookup[(j, i)] = idx
    return comps, lookup


def solve_gradient_moment_system_q1(b, f, grid, cfg):
    """Coupled d(d+1)/2-component evolution of the gradient second moments.

    d V_I/dt = -2 mu V_I + (sigma^2/2) Lap V_I - b.grad V_I
               - sum_k (d_i b^k V_kj + d_j b^k V_ik)   for I = (i, j);
    V_ij(0) = d_i f d_j f.  The zeroth-order rate is 2 mu: each factor of
    the product of two first derivatives carries one e^{-mu t}.
    """
    if grid.boundary != "periodic":
        raise ValueError("the spectral IMEX solver requires a periodic box")
    bstack, gstack = _drift_samples(b, grid, need_grad=True)
    max_speed = float(np.sqrt(np.sum(bstack**2, axis=0)).max())
    dt, nsteps = _resolve_dt(cfg, grid, max_speed)

    d = grid.d
    comps, lookup = gradient_component_index(d)
    mult_count = np.array([1.0 if i == j else 2.0 for (i, j) in comps])

    gf = _grad_samples_of_f(f, grid)
    V = np.stack([gf[i] * gf[j] for (i, j) in comps])
    decay = math.exp(-2.0 * cfg.mu * dt)
    mult = _implicit_diffusion_factor(grid, cfg.sigma, dt)
    snap_steps = {int(round(t / dt)): t for t in cfg.snapshot_times}

    tracker = _Tracker()
    snapshots = {}
    times = [0.0]

    def record(step, V):
        sum_v2 = 0.0
        sum_grad = 0.0
        for idx, (i, j) in enumerate(comps):
            contrib = float(np.sum(V[idx] ** 2) * grid.cell_volume)
            sum_v2 += mult_count[idx] * contrib
            sum_grad += mult_count[idx] * _grad_sq_integral(V[idx], grid)
        trace = np.zeros(grid.shape)
        for i in range(d):
            trace += V[lookup[(i, i)]]
        tracker.push(sum_v2=sum_v2, sum_grad_v2=sum_grad,
                     trace_l2=lp_norm(trace, grid, 2.0))
        if step in snap_steps:
            snapshots[snap_steps[step]] = V.copy()

    record(0, V)
    for step in range(1, nsteps + 1):
        Vnew = np.empty_like(V)
        for idx, (i, j) in enumerate(comps):
            coupling = np.zeros(grid.shape)
            for k in range(d):
                coupling += gstack[i, k] * V[lookup[(k, j)]]
                coupling += gstack[j, k] * V[lookup[(i, k)]]
            Vnew[idx] = V[idx] - dt * (kernels.advect_upwind(V[idx], bstack, grid.h) + coupling)
        for idx in range(len(comps)):
            Vnew[idx] = irfftn(mult * rfftn(Vnew[idx], grid), grid)
        V = Vnew * decay
        if not np.isfinite(V).all():
            raise RuntimeError(f"NaN/Inf detected at step {step} (t={step * dt:.6g})")
        times.append(step * dt)
        record(step, V)

    return MomentSeries("gradient_q1", np.asarray(times), grid, cfg.sigma, cfg.mu,
                        dt, tracker.arrays(), snapshots, V,
                        meta={"components": comps, "max_speed": max_speed, "nsteps": nsteps})


# ---------------------------------------------------------------------------
# dual continuity moment:  dw/dt = -2 mu w + (sigma^2/2) Lap w + 2 div(b w) - b.grad w
# ---------------------------------------------------------------------------


def solve_dual_continuity_moment(b, v0, grid, cfg, weight_params=None):
    """Forward dual evolution with w(0) = v0^2; div(b w) kept in flux form."""
    if grid.boundary != "periodic":
        raise ValueError("the spectral IMEX solver requires a periodic box")
    from .drift import DriftField
    from .regularize import MollifiedDrift

    if isinstance(b, DriftField) and not b.differentiable:
        raise ValueError("dual solver requires a drift with derivatives (mollified)")
    bstack, _ = _drift_samples(b, grid, need_grad=False)
    max_speed = float(np.sqrt(np.sum(bstack**2, axis=0)).max())
    dt, nsteps = _resolve_dt(cfg, grid, max_speed)

    v0s = _field_samples(v0, grid)
    w = v0s * v0s
    decay = math.exp(-2.0 * cfg.mu * dt)
    mult = _implicit_diffusion_factor(grid, cfg.sigma, dt)
    inv_rho = None
    if weight_params is not None:
        inv_rho = 1.0 / weights.rho_on_grid(weight_params, grid)
    snap_steps = {int(round(t / dt)): t for t in cfg.snapshot_times}

    tracker = _Tracker()
    snapshots = {}
    times = [0.0]

    def record(step, w, min_pre=0.0, clip_mass=0.0):
        kv = {"l2": lp_norm(w, grid, 2.0), "clip_mass": clip_mass * grid.cell_volume,
              "min_pre_clip": min_pre}
        if inv_rho is not None:
            kv["weighted_l2"] = lp_norm(inv_rho * w, grid, 2.0)
        tracker.push(**kv)
        if step in snap_steps:
            snapshots[snap_steps[step]] = w.copy()

    record(0, w)
    for step in range(1, nsteps + 1):
        expl = 2.0 * kernels.flux_divergence(w, bstack, grid.h) \
            - kernels.advect_upwind(w, bstack, grid.h)
        w = w + dt * expl
        w = irfftn(mult * rfftn(w, grid), grid)
        w *= decay
        min_pre = float(w.min())
        neg = w < 0
        clip = float(-w[neg].sum()) if np.any(neg) else 0.0
        if clip:
            w = np.where(neg, 0.0, w)
        if not np.isfinite(w).all():
            raise RuntimeError(f"NaN/Inf detected at step {step} (t={step * dt:.6g})")
        times.append(step * dt)
        record(step, w, min_pre, clip)

    return MomentSeries("dual", np.asarray(times), grid, cfg.sigma, cfg.mu,
                        dt, tracker.arrays(), snapshots, w,
                        meta={"max_speed": max_speed, "nsteps": nsteps})


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    tag: str
    lhs: float
    bound: float
    constant: float
    tolerance: float
    passed: bool
    margin: float
    gates: dict
    extras: dict = dc_field(default_factory=dict)

    def as_dict(self):
        return {
            "name": self.name, "tag": self.tag, "lhs": self.lhs, "bound": self.bound,
            "constant": self.constant, "tolerance": self.tolerance,
            "passed": bool(self.passed), "margin": self.margin,
            "gates": {k: bool(v) for k, v in self.gates.items()},
            "extras": self.extras,
        }


def check_e1(series, p, f, thr, tolerance=0.02):
    """sup_t ||v(t)||_p against ||f||_{2p}^2 with constant exactly 1."""
    if not math.sqrt(thr.delta) < thr.sigma**2:
        raise AdmissibilityError("sqrt_delta<sigma^2",
                                 f"sqrt(delta)={math.sqrt(thr.delta):.6g} >= sigma^2={thr.sigma**2:.6g}")
    if not p > thr.p_c:
        raise AdmissibilityError("p>p_c", f"p={p} <= p_c={thr.p_c:.6g}")
    if series.mu < thr.mu_e1 * (1.0 - 1e-12):
        raise AdmissibilityError("mu>=mu_e1", f"mu={series.mu} < mu_e1={thr.mu_e1:.6g}")
    key = f"lp_{p:g}"
    if key not in series.traces:
        raise ValueError(f"series did not track the L^{p} norm")
    lhs = float(series.trace(key).max())
    fs = _field_samples(f, series.grid)
    bound = lp_norm(fs, series.grid, 2.0 * p) ** 2
    diss = series.trace(f"dissipation_{p:g}")
    integral = float(np.trapezoid(diss, series.times))
    c1 = integral / lp_norm(fs, series.grid, 2.0 * p) ** p if bound > 0 else 0.0
    margin = (lhs - bound) / bound if bound > 0 else 0.0
    return CheckReport(
        name="second_moment_bound", tag="E1", lhs=lhs, bound=bound, constant=1.0,
        tolerance=tolerance, passed=lhs <= bound * (1.0 + tolerance), margin=margin,
        gates={"sqrt_delta<sigma^2": True, "p>p_c": True, "mu>=mu_e1": True},
        extras={"dissipation_integral": integral, "implied_C1": c1,
                "sup_time": float(series.times[int(series.trace(key).argmax())])})


def check_gradient_bound(series, f, thr, tolerance=0.02, q=1):
    """sup_t sum_I <V_I(t)^2> against sum_I <V_I(0)^2> with constant 1."""
    if q != 1:
        raise ValueError("only the q=1 system is solved")
    sq = math.sqrt(thr.delta)
    if not sq < thr.sigma**2 / (2.0 * thr.beta_2q):
        raise AdmissibilityError("sqrt_delta<sigma^2/(2 beta_2q)",
                                 f"sqrt(delta)={sq:.6g} >= {thr.sigma**2 / (2 * thr.beta_2q):.6g}")
    if thr.kappa_star <= 0:
        raise AdmissibilityError("kappa_star>0", f"kappa_star={thr.kappa_star:.6g} <= 0")
    if series.mu < thr.c_hat * (1.0 - 1e-12):
        raise AdmissibilityError("mu>=c_hat", f"mu={series.mu} < c_hat={thr.c_hat:.6g}")
    trace = series.trace("sum_v2")
    lhs = float(trace.max())
    bound = float(trace[0])
    diss = series.trace("sum_grad_v2")
    integral = float(np.trapezoid(diss, series.times))
    margin = (lhs - bound) / bound if bound > 0 else 0.0
    implied = integral / bound if bound > 0 else 0.0
    return CheckReport(
        name="gradient_moment_bound", tag="gradL2", lhs=lhs, bound=bound, constant=1.0,
        tolerance=tolerance, passed=lhs <= bound * (1.0 + tolerance), margin=margin,
        gates={"sqrt_delta<sigma^2/(2 beta_2q)": True, "kappa_star>0": True, "mu>=c_hat": True},
        extras={"kappa_star": thr.kappa_star, "dissipation_integral": integral,
                "implied_dissipation_constant": implied})


def check_dual_weighted_bound(series, v0, params, thr, tolerance=0.02):
    """sup_t ||rho^-1 w(t)||_2 against ||rho^-1 v0||_4^2 with constant 1."""
    sq = math.sqrt(thr.delta)
    if not sq < thr.sigma**2 / 6.0:
        raise AdmissibilityError("sqrt_delta<sigma^2/6",
                                 f"sqrt(delta)={sq:.6g} >= {thr.sigma**2 / 6.0:.6g}")
    if series.mu < thr.mu_dual * (1.0 - 1e-12):
        raise AdmissibilityError("mu>=mu_dual", f"mu={series.mu} < mu_dual={thr.mu_dual:.6g}")
    bracket = dual_proof_bracket(thr.delta, thr.sigma, params.theta, params.kappa)
    if bracket <= 0:
        raise AdmissibilityError("dual_bracket>0",
                                 f"weighted proof bracket {bracket:.6g} <= 0; reduce kappa")
    if "weighted_l2" not in series.traces:
        raise ValueError("series was solved without weight tracking")
    lhs = float(series.trace("weighted_l2").max())
    grid = series.grid
    v0s = _field_samples(v0, grid)
    inv_rho = 1.0 / weights.rho_on_grid(params, grid)
    bound = lp_norm(inv_rho * v0s, grid, 4.0) ** 2
    margin = (lhs - bound) / bound if bound > 0 else 0.0
    return CheckReport(
        name="dual_weighted_bound", tag="dual", lhs=lhs, bound=bound, constant=1.0,
        tolerance=tolerance, passed=lhs <= bound * (1.0 + tolerance), margin=margin,
        gates={"sqrt_delta<sigma^2/6": True, "mu>=mu_dual": True, "dual_bracket>0": True},
        extras={"dual_bracket": bracket, "kappa": params.kappa, "theta": params.theta})
