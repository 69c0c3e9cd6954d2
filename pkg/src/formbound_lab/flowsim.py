"""Monte Carlo realization of the stochastic flow and its inverse.

Paths follow the Euler-Maruyama scheme X_{k+1} = X_k - b_cap(X_k) dt +
sigma sqrt(dt) xi_k.  Flow semantics share one Brownian realization across
all starting points; expectations average over independent realizations.
Noise streams are derived deterministically from (master seed, index), so
results are bit-reproducible for any worker count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .drift import DriftField
from .regularize import MollifiedDrift

log = logging.getLogger(__name__)

# spawn-key domains keeping path, realization, and probe streams disjoint
_DOMAIN_PATHS = 0
_DOMAIN_REALIZATIONS = 1
_DOMAIN_PROBE = 2


def stream(seed, domain, *idx):
    """Deterministic generator for (master seed, domain, indices)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(domain),) + tuple(int(i) for i in idx))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class PathConfig:
    sigma: float
    dt: float
    T: float
    mu: float = 0.0
    n_paths: int = 1000
    r_cap: float = 1e-3
    seed: int = 0
    block_size: int = 512
    chunk_steps: int = 256

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.r_cap <= 0:
            raise ValueError("r_cap must be positive")

    @property
    def n_steps(self):
        return max(1, int(round(self.T / self.dt)))


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n_effective: int
    n_flagged: int = 0


def _estimate(values):
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return MCEstimate(math.nan, math.inf, 0)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if n > 1 else 0.0
    return MCEstimate(mean, std / math.sqrt(n), n)


# ---------------------------------------------------------------------------
# drift dispatch for the steppers
# ---------------------------------------------------------------------------


class _Stepper:
    """Per-drift stepping strategy; mutates X (and J) through one noise chunk."""

    def __init__(self, field, cfg, with_jac=False):
        self.cfg = cfg
        self.with_jac = with_jac
        if isinstance(field, MollifiedDrift):
            field = field.field
        self.field = field
        self.mode = "generic"
        if field.kind == "zero":
            self.mode = "zero"
        elif field.kind == "hardy" and not with_jac:
            self.mode = "hardy"
        elif field.kind == "grid_sampled" and field.d == 3:
            if not with_jac or field.params.get("grad_samples") is not None:
                self.mode = "grid"
        if with_jac and self.mode == "generic" and not field.differentiable:
            raise ValueError("drift has no Jacobian; flow Jacobians unavailable")

    def advance(self, X, J, noise, dt):
        cfg = self.cfg
        if self.mode == "zero":
            xi = noise if noise.shape[1] > 1 else noise[:, 0:1, :]
            X += cfg.sigma * math.sqrt(dt) * xi.sum(axis=0)
            return
        if self.mode == "hardy":
            p = self.field.params
            kernels.em_hardy_chunk(X, noise, dt, p["beta"], p["sign"], cfg.r_cap, cfg.sigma)
            return
        if self.mode == "grid":
            p = self.field.params
            g = p["grid"]
            grads = p.get("grad_samples")
            if self.with_jac and grads is None:
                raise ValueError("grid drift lacks gradient samples")
            kernels.em_grid_chunk(X, J, noise, dt, p["samples"],
                                  grads if self.with_jac else None,
                                  g.half_width, g.h, g.n, cfg.sigma, self.with_jac)
            return
        # generic python path: vectorized over paths, one python loop per step
        sq = cfg.sigma * math.sqrt(dt)
        cap = 1.0 / cfg.r_cap
        for k in range(noise.shape[0]):
            b = self._capped_eval(X)
            if self.with_jac:
                G = self._capped_grad(X)  # G[p, r, c] = d_r b^c
                M = np.swapaxes(G, 1, 2)
                J -= dt * np.einsum("pac,pcb->pab", M, J)
            xi = noise[k] if noise.shape[1] > 1 else noise[k, 0:1, :]
            X += -b * dt + sq * xi

    def _capped_eval(self, X):
        f = self.field
        if f.kind == "hardy":
            p = f.params
            r = np.sqrt(np.sum(X * X, axis=1))
            rc = np.maximum(r, self.cfg.r_cap)
            fac = np.where(r > 0, p["sign"] * p["beta"] / np.where(r > 0, r * rc, 1.0), 0.0)
            return fac[:, None] * X
        b = f(X)
        from .drift import cap_magnitude

        return cap_magnitude(np.where(np.isfinite(b), b, 0.0), 1.0 / self.cfg.r_cap)

    def _capped_grad(self, X):
        f = self.field
        if f.kind == "hardy":
            # evaluate the Jacobian at the radially projected point max(|x|, r_cap)
            r = np.sqrt(np.sum(X * X, axis=1))
            rc = np.maximum(r, self.cfg.r_cap)
            scale = np.where(r > 0, rc / np.where(r > 0, r, 1.0), 1.0)
            return f.gradient(X * scale[:, None])
        G = f.gradient(X)
        cap = (1.0 / self.cfg.r_cap) ** 2
        return np.clip(np.where(np.isfinite(G), G, 0.0), -cap, cap)


def _check_finite(X, where):
    if not np.isfinite(X).all():
        bad = np.argwhere(~np.isfinite(X))[0]
        raise RuntimeError(f"NaN/Inf in {where}: path {bad[0]}")


# ---------------------------------------------------------------------------
# independent paths
# ---------------------------------------------------------------------------


@dataclass
class PathResult:
    times: np.ndarray
    positions: np.ndarray  # (n_paths, n_snapshots, d)


def simulate_paths(field, x0, cfg, snapshot_times=None):
    """Independent Euler-Maruyama paths from x0 (one point or one per path)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    d = x0.shape[1]
    if x0.shape[0] == 1:
        x0 = np.tile(x0, (cfg.n_paths, 1))
    n_paths = x0.shape[0]
    nsteps = cfg.n_steps
    dt = cfg.T / nsteps
    snaps = sorted(set([cfg.T] if snapshot_times is None else list(snapshot_times)))
    snap_steps = [int(round(t / dt)) for t in snaps]
    stepper = _Stepper(field, cfg)

    out = np.empty((n_paths, len(snaps), d))
    for b0 in range(0, n_paths, cfg.block_size):
        b1 = min(b0 + cfg.block_size, n_paths)
        gens = [stream(cfg.seed, _DOMAIN_PATHS, i) for i in range(b0, b1)]
        X = np.ascontiguousarray(x0[b0:b1].copy())
        step = 0
        for sidx, target in enumerate(snap_steps):
            while step < target:
                take = min(cfg.chunk_steps, target - step)
                noise = np.stack([g.standard_normal((take, d)) for g in gens], axis=1)
                stepper.advance(X, None, noise, dt)
                step += take
            out[b0:b1, sidx] = X
        _check_finite(X, "simulate_paths")
    return PathResult(np.asarray(snaps, dtype=float), out)


# ---------------------------------------------------------------------------
# common-noise flow ensembles
# ---------------------------------------------------------------------------


@dataclass
class FlowEnsemble:
    start_points: np.ndarray          # (N, d)
    times: np.ndarray                 # (S,)
    positions: np.ndarray             # (R, S, N, d)
    jacobians: np.ndarray             # (R, S, N, d, d) or None
    noise_sums: np.ndarray            # (R, S, d): sigma * B_t per realization
    shared_noise: bool = True
    jac_resolved: bool = True
    min_det: float = math.nan

    @property
    def n_realizations(self):
        return self.positions.shape[0]


def _flow_one_realization(field, x0s, cfg, snap_steps, dt, omega, with_jac):
    d = x0s.shape[1]
    gen = stream(cfg.seed, _DOMAIN_REALIZATIONS, omega)
    stepper = _Stepper(field, cfg, with_jac=with_jac)
    X = np.ascontiguousarray(x0s.copy())
    J = np.tile(np.eye(d), (x0s.shape[0], 1, 1)) if with_jac else None
    positions = [X.copy()] if snap_steps[0] == 0 else []
    jacs = [J.copy()] if (with_jac and snap_steps[0] == 0) else []
    nsum = [np.zeros(d)] if snap_steps[0] == 0 else []
    acc = np.zeros(d)
    step = 0
    for target in snap_steps[len(positions):]:
        while step < target:
            take = min(cfg.chunk_steps, target - step)
            noise = gen.standard_normal((take, 1, d))
            stepper.advance(X, J, noise, dt)
            acc = acc + cfg.sigma * math.sqrt(dt) * noise[:, 0, :].sum(axis=0)
            step += take
        positions.append(X.copy())
        if with_jac:
            jacs.append(J.copy())
        nsum.append(acc.copy())
    _check_finite(X, f"flow realization {omega}")
    return (np.stack(positions), np.stack(jacs) if with_jac else None, np.stack(nsum))


def simulate_flow(field, x0s, cfg, n_realizations, snapshot_times=None,
                  with_jacobians=True, workers=1):
    """Common-noise flow ensemble over the given starting points.

    Within one realization all starting points see identical Brownian
    increments; Jacobians follow J <- (I - grad_b(X) dt) J when the drift
    exposes derivatives (otherwise they are omitted and flagged).
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    nsteps = cfg.n_steps
    dt = cfg.T / nsteps
    snaps = sorted(set([0.0, cfg.T] if snapshot_times is None else list(snapshot_times)))
    snap_steps = [int(round(t / dt)) for t in snaps]
    try:
        _Stepper(field, cfg, with_jac=with_jacobians)
        jac_ok = with_jacobians
    except ValueError:
        jac_ok = False
        log.warning("drift exposes no Jacobian: flow ensemble built without Jacobians")

    def work(omega):
        return _flow_one_realization(field, x0s, cfg, snap_steps, dt, omega, jac_ok)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(work, range(n_realizations)))
    else:
        results = [work(om) for om in range(n_realizations)]

    positions = np.stack([r[0] for r in results])
    jacobians = np.stack([r[1] for r in results]) if jac_ok else None
    noise_sums = np.stack([r[2] for r in results])
    min_det = math.nan
    if jac_ok:
        dets = np.linalg.det(jacobians[:, -1])
        min_det = float(dets.min())
        if min_det <= 0:
            log.warning("non-positive Jacobian determinant in ensemble: min det %.3g", min_det)
    return FlowEnsemble(x0s, np.asarray(snaps, dtype=float), positions, jacobians,
                        noise_sums, shared_noise=True, jac_resolved=jac_ok,
                        min_det=min_det)


# ---------------------------------------------------------------------------
# flow inversion
# ---------------------------------------------------------------------------


@dataclass
class InverseResult:
    y: np.ndarray
    residual: float
    extrapolated: bool
    used_fallback: bool
    nearest_index: int


def invert_flow(ensemble, t_index, realization, x):
    """Approximate Psi_t^{-1}(x) by nearest forward image plus one Newton step."""
    x = np.asarray(x, dtype=float)
    images = ensemble.positions[realization, t_index]
    diffs = images - x
    d2 = np.sum(diffs * diffs, axis=1)
    order = np.argsort(d2)
    i = int(order[0])
    lo = images.min(axis=0)
    hi = images.max(axis=0)
    extrapolated = bool(np.any(x < lo) or np.any(x > hi))
    x0 = ensemble.start_points[i]
    if ensemble.jacobians is None:
        return InverseResult(x0.copy(), float(np.sqrt(d2[i])), extrapolated, True, i)
    J = ensemble.jacobians[realization, t_index, i]
    det = np.linalg.det(J)
    if not np.isfinite(det) or abs(det) < 1e-12:
        return InverseResult(x0.copy(), float(np.sqrt(d2[i])), extrapolated, True, i)
    y = x0 + np.linalg.solve(J, x - images[i])
    # residual estimated by linearizing the flow around the runner-up point
    residual = float(np.sqrt(d2[i]))
    if images.shape[0] > 1:
        j = int(order[1])
        Jj = ensemble.jacobians[realization, t_index, j]
        pred = images[j] + Jj @ (y - ensemble.start_points[j])
        residual = float(np.linalg.norm(pred - x))
    return InverseResult(y, residual, extrapolated, False, i)


def default_start_grid(probes, sigma, T, spacing=0.25, pad_sigmas=4.0, extra=0.2):
    """Cube of starting points covering likely inverse images of the probes."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    d = probes.shape[1]
    reach = pad_sigmas * sigma * math.sqrt(T) + extra
    lo = probes.min(axis=0) - reach
    hi = probes.max(axis=0) + reach
    axes = [np.arange(lo[a], hi[a] + spacing / 2, spacing) for a in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# Monte Carlo moment estimators
# ---------------------------------------------------------------------------


def _mc_over_realizations(field, probes, t, cfg, n_realizations, start_points,
                          with_jac, workers, evaluate):
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if start_points is None:
        start_points = default_start_grid(probes, cfg.sigma, t)
    run_cfg = PathConfig(sigma=cfg.sigma, dt=cfg.dt, T=t, mu=cfg.mu,
                         n_paths=cfg.n_paths, r_cap=cfg.r_cap, seed=cfg.seed,
                         block_size=cfg.block_size, chunk_steps=cfg.chunk_steps)
    nsteps = run_cfg.n_steps
    dt = t / nsteps

    def work(omega):
        pos, jac, _ = _flow_one_realization(field, start_points, run_cfg,
                                            [nsteps], dt, omega, with_jac)
        ens = FlowEnsemble(start_points, np.asarray([t]), pos[None],
                           jac[None] if jac is not None else None,
                           np.zeros((1, 1, start_points.shape[1])))
        vals = np.empty(probes.shape[0])
        ok = np.ones(probes.shape[0], dtype=bool)
        for pi, x in enumerate(probes):
            inv = invert_flow(ens, 0, 0, x)
            vals[pi], ok[pi] = evaluate(inv, ens, 0, 0)
        return vals, ok

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(work, range(n_realizations)))
    else:
        results = [work(om) for om in range(n_realizations)]
    all_vals = np.stack([r[0] for r in results])   # (R, P)
    all_ok = np.stack([r[1] for r in results])
    out = []
    for pi in range(probes.shape[0]):
        good = all_ok[:, pi]
        est = _estimate(all_vals[good, pi])
        est.n_flagged = int((~good).sum())
        out.append(est)
    return out


def mc_second_moment(f, field, probes, t, cfg, n_realizations, start_points=None,
                     workers=1):
    """E[u^2(t, x)] = E[ e^{-2 mu t} f(Psi_t^{-1} x)^2 ] at the probe points."""
    damp = math.exp(-2.0 * cfg.mu * t)

    def evaluate(inv, ens, t_index, realization):
        val = damp * float(f.value(inv.y[None])[0]) ** 2
        return val, not (inv.extrapolated or inv.used_fallback)

    return _mc_over_realizations(field, probes, t, cfg, n_realizations, start_points,
                                 with_jac=True, workers=workers, evaluate=evaluate)


def mc_gradient_moment(f, field, probes, t, cfg, n_realizations, q=1,
                       start_points=None, workers=1):
    """E|grad u|^{2q}(t, x) via grad u(t,x) = e^{-mu t} (grad f)(y) J_y(t)^{-1}."""
    if q < 1:
        raise ValueError("q must be >= 1")
    damp = math.exp(-cfg.mu * t)

    def evaluate(inv, ens, t_index, realization):
        if inv.used_fallback:
            return math.nan, False
        J = ens.jacobians[realization, t_index, inv.nearest_index]
        det = np.linalg.det(J)
        if not np.isfinite(det) or abs(det) < 1e-12:
            return math.nan, False
        g = f.grad(inv.y[None])[0]
        grad_u = damp * np.linalg.solve(J.T, g)
        val = float(np.sum(grad_u * grad_u)) ** q
        return val, not inv.extrapolated

    return _mc_over_realizations(field, probes, t, cfg, n_realizations, start_points,
                                 with_jac=True, workers=workers, evaluate=evaluate)


def mc_time_integrated_gradient_sq(f, field, probes, cfg, n_realizations,
                                   weight_params=None, n_slices=8, workers=1):
    """Finiteness smoke estimate of E< rho |grad int_0^T u ds|^2 > over probes.

    The time integral is a left Riemann sum over n_slices inversion times.
    """
    from . import weights as weights_mod

    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    slice_times = [cfg.T * (k + 1) / n_slices for k in range(n_slices)]
    dt_slice = cfg.T / n_slices
    start_points = default_start_grid(probes, cfg.sigma, cfg.T)

    def work(omega):
        ens = simulate_flow(field, start_points,
                            PathConfig(sigma=cfg.sigma, dt=cfg.dt, T=cfg.T, mu=cfg.mu,
                                       r_cap=cfg.r_cap, seed=cfg.seed,
                                       block_size=cfg.block_size,
                                       chunk_steps=cfg.chunk_steps),
                            1, snapshot_times=slice_times, with_jacobians=True)
        acc = np.zeros_like(probes)
        for ti, ts in enumerate(slice_times):
            for pi, x in enumerate(probes):
                inv = invert_flow(ens, ti, 0, x)
                J = ens.jacobians[0, ti, inv.nearest_index]
                g = f.grad(inv.y[None])[0]
                acc[pi] += math.exp(-cfg.mu * ts) * np.linalg.solve(J.T, g) * dt_slice
        return np.sum(acc * acc, axis=1)

    vals = np.stack([work(om) for om in range(n_realizations)])  # (R, P)
    mean_sq = vals.mean(axis=0)
    if weight_params is not None:
        w = weights_mod.rho(weight_params, probes)
        return float(np.mean(w * mean_sq))
    return float(np.mean(mean_sq))


# ---------------------------------------------------------------------------
# criticality probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeRow:
    beta: float
    hit_fraction: float
    stderr: float
    q05_min_dist: float
    q50_min_dist: float
    n_paths: int


def criticality_probe(d, betas, sigma, x0, eps_ball, T, dt0, n_paths, seed=0,
                      r_cap=None, block_size=512, chunk_steps=256, workers=1):
    """Hit fractions of B(0, eps_ball) for the inward Hardy SDE over a beta sweep.

    The SDE drift is -beta x/|x|^2 (toward the origin).  The timestep adapts
    as dt = dt0 min(1, |X|^2/beta) so the 1/|x| drift stays resolved; hits
    are recorded the first time |X| <= eps_ball.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d,):
        raise ValueError("x0 must be a point in R^d")
    if r_cap is None:
        r_cap = eps_ball / 4.0

    def run_beta(bi):
        beta = float(betas[bi])
        hits = np.zeros(0, dtype=bool)
        minds = np.zeros(0)
        for b0 in range(0, n_paths, block_size):
            b1 = min(b0 + block_size, n_paths)
            nb = b1 - b0
            gens = [stream(seed, _DOMAIN_PROBE, bi, i) for i in range(b0, b1)]
            X = np.ascontiguousarray(np.tile(x0, (nb, 1)))
            t = np.zeros(nb)
            mind = np.full(nb, np.sqrt(np.sum(x0 * x0)))
            state = np.zeros(nb, dtype=np.int64)
            while np.any(state == kernels.STATE_ACTIVE):
                noise = np.stack([g.standard_normal((chunk_steps, d)) for g in gens], axis=1)
                kernels.probe_chunk(X, t, mind, state, noise, dt0, beta, 1.0,
                                    r_cap, sigma, eps_ball, T)
            hits = np.concatenate([hits, state == kernels.STATE_HIT])
            minds = np.concatenate([minds, mind])
        frac = float(hits.mean())
        stderr = math.sqrt(frac * (1.0 - frac) / n_paths) if n_paths > 1 else math.inf
        q05, q50 = np.quantile(minds, [0.05, 0.5])
        return ProbeRow(beta, frac, stderr, float(q05), float(q50), n_paths)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(run_beta, range(len(betas))))
    else:
        rows = [run_beta(bi) for bi in range(len(betas))]
    return rows


def transition_bracket(rows, lo_level=0.1, hi_level=0.9):
    """Linear-interpolation crossings of the hit-fraction curve.

    Returns (beta_lo, beta_hi) where the curve first reaches lo_level and
    hi_level; an endpoint is nan when the sweep never crosses its level.
    """
    betas = np.asarray([r.beta for r in rows])
    fracs = np.asarray([r.hit_fraction for r in rows])

    def crossing(level):
        for i in range(1, len(betas)):
            if fracs[i - 1] < level <= fracs[i]:
                f0, f1 = fracs[i - 1], fracs[i]
                w = (level - f0) / (f1 - f0)
                return float(betas[i - 1] + w * (betas[i] - betas[i - 1]))
        if fracs.size and fracs[0] >= level:
            return float(betas[0])
        return math.nan

    return crossing(lo_level), crossing(hi_level)
