"""Singular drift fields and their relative-bound certificates.

A drift is an evaluable vector field b(x) on R^d, d >= 3, together with
metadata about where it blows up and whether its Jacobian is available.
Certificates witness the quadratic-form inequality

    ||b phi||_2^2 <= delta ||grad phi||_2^2 + c_delta ||phi||_2^2 .
"""

import csv
import logging
import math
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import BoxGrid, irfftn, rfftn

log = logging.getLogger(__name__)

KINDS = ("zero", "hardy", "annulus_log", "separable", "grid_sampled", "sum")

_MAGIC = b"FBLDRIFT"


def unit_ball_volume(d):
    """Volume of the unit ball in R^d: pi^(d/2) / Gamma(d/2 + 1)."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def _check_dimension(d):
    if int(d) != d or d < 3:
        raise ValueError(f"dimension must be an integer >= 3, got {d}")
    return int(d)


class DriftField:
    """Evaluable vector field with singular-set metadata.

    Evaluation maps (m, d) point arrays to (m, d) vectors; ``gradient``
    returns (m, d, d) arrays with entry [r, c] = d_r b^c where available.
    """

    def __init__(self, d, kind, params, singular_set="", differentiable=False):
        self.d = _check_dimension(d)
        if kind not in KINDS:
            raise ValueError(f"unknown drift kind {kind!r}")
        self.kind = kind
        self.params = params
        self.singular_set = singular_set
        self.differentiable = differentiable

    def __repr__(self):
        return f"DriftField(d={self.d}, kind={self.kind!r})"

    # -- evaluation ---------------------------------------------------------

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise ValueError(f"points must have {self.d} components")
        return getattr(self, f"_eval_{self.kind}")(x)

    def magnitude(self, x):
        return np.sqrt(np.sum(self(x) ** 2, axis=1))

    def gradient(self, x):
        if not self.differentiable:
            raise ValueError(f"{self.kind} drift does not expose a Jacobian")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return getattr(self, f"_grad_{self.kind}")(x)

    def sample_on(self, grid, cap=None, floor=None):
        """Node samples, shape grid.shape + (d,).

        ``floor`` evaluates singular kinds at a distance >= floor from their
        singular set (grid-scale regularization); ``cap`` then clips the
        magnitude.  A bare magnitude cap at the singular node would inject a
        grid-independent spike into the quadratic form, so grid consumers
        pass floor = h/2 together with cap = 1/h.
        """
        if floor is not None:
            vals = self.eval_regularized(grid.points(), floor).reshape(grid.shape + (self.d,))
        else:
            vals = self(grid.points()).reshape(grid.shape + (self.d,))
        if cap is not None:
            vals = cap_magnitude(np.where(np.isfinite(vals), vals, 0.0), cap)
        return vals

    def eval_regularized(self, x, floor):
        """Evaluate with singular-set distances floored at ``floor``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "hardy":
            beta = self.params["beta"]
            sign = self.params["sign"]
            r = np.sqrt(np.sum(x * x, axis=1))
            denom = r * np.maximum(r, floor)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = sign * beta * x / denom[:, None]
            return np.where(r[:, None] > 0.0, out, 0.0)
        if self.kind == "annulus_log":
            C = self.params["C"]
            alpha = self.params["alpha"]
            beta_exp = self.params["beta_exp"]
            r = np.sqrt(np.sum(x * x, axis=1))
            t = np.maximum(np.abs(r - 1.0), min(floor, 0.5))
            inside = (r > 1.0 - alpha) & (r < 1.0 + alpha) & (r > 0.0) & (t < 1.0)
            mag = np.zeros_like(r)
            mag[inside] = np.sqrt(C / (t[inside] * (-np.log(t[inside])) ** beta_exp))
            direction = x / np.where(r > 0.0, r, 1.0)[:, None]
            return mag[:, None] * direction
        if self.kind == "sum":
            out = np.zeros_like(x)
            for part in self.params["parts"]:
                out = out + part.eval_regularized(x, floor)
            return out
        return self(x)

    def magnitude_on(self, grid):
        """|b| at the nodes, uncapped; singular nodes give inf."""
        pts = grid.points()
        with np.errstate(divide="ignore", invalid="ignore"):
            mags = np.sqrt(np.sum(self(pts) ** 2, axis=1))
        mags = np.where(np.isnan(mags), np.inf, mags)
        return mags.reshape(grid.shape)

    # -- kind implementations -----------------------------------------------

    def _eval_zero(self, x):
        return np.zeros_like(x)

    def _eval_hardy(self, x):
        beta = self.params["beta"]
        sign = self.params["sign"]
        r2 = np.sum(x * x, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = sign * beta * x / r2[:, None]
        out[r2 == 0.0] = np.inf
        return out

    def _grad_hardy(self, x):
        beta = self.params["beta"]
        sign = self.params["sign"]
        r2 = np.sum(x * x, axis=1)
        m = x.shape[0]
        out = np.empty((m, self.d, self.d))
        with np.errstate(divide="ignore", invalid="ignore"):
            eye = np.eye(self.d)
            out = sign * beta * (
                eye[None, :, :] / r2[:, None, None]
                - 2.0 * x[:, :, None] * x[:, None, :] / (r2**2)[:, None, None]
            )
        out[r2 == 0.0] = np.inf
        return out

    def _eval_annulus_log(self, x):
        # |b|^2 = C 1_{annulus} / ( | |x|-1 | * (-ln| |x|-1 |)^beta_exp ),
        # direction radial.  The density is singular on the unit sphere and
        # integrable there exactly when beta_exp > 1.
        C = self.params["C"]
        alpha = self.params["alpha"]
        beta_exp = self.params["beta_exp"]
        r = np.sqrt(np.sum(x * x, axis=1))
        t = np.abs(r - 1.0)
        inside = (r > 1.0 - alpha) & (r < 1.0 + alpha) & (r > 0.0)
        mag = np.zeros_like(r)
        good = inside & (t > 0.0) & (t < 1.0)
        mag[good] = np.sqrt(C / (t[good] * (-np.log(t[good])) ** beta_exp))
        mag[inside & (t == 0.0)] = np.inf
        with np.errstate(invalid="ignore"):
            direction = x / np.where(r > 0.0, r, 1.0)[:, None]
        return mag[:, None] * direction

    def _eval_separable(self, x):
        # b(x) = h(T x) e with a sampled 1-D profile h (linear interpolation,
        # zero outside the sampled range).
        s_grid = np.asarray(self.params["s_grid"], dtype=float)
        h_vals = np.asarray(self.params["h_values"], dtype=float)
        T = np.asarray(self.params["T"], dtype=float)
        e = np.asarray(self.params["e"], dtype=float)
        s = x @ T
        h = np.interp(s, s_grid, h_vals, left=0.0, right=0.0)
        return h[:, None] * e[None, :]

    def _eval_grid_sampled(self, x):
        from . import kernels

        g = self.params["grid"]
        return kernels.interp_vector(self.params["samples"], x, g.half_width, g.h, g.n)

    def _grad_grid_sampled(self, x):
        from . import kernels

        g = self.params["grid"]
        gs = self.params.get("grad_samples")
        if gs is None:
            raise ValueError("grid_sampled drift has no gradient samples")
        flat = gs.reshape(g.shape + (self.d * self.d,))
        out = kernels.interp_vector(flat, x, g.half_width, g.h, g.n)
        return out.reshape(-1, self.d, self.d)

    def _eval_sum(self, x):
        out = np.zeros_like(x)
        for part in self.params["parts"]:
            out = out + part(x)
        return out

    def _grad_sum(self, x):
        out = np.zeros((x.shape[0], self.d, self.d))
        for part in self.params["parts"]:
            out = out + part.gradient(x)
        return out

    # -- serialization --------------------------------------------------------

    def to_config(self):
        cfg = {"kind": self.kind, "d": self.d}
        if self.kind == "hardy":
            cfg.update(beta=self.params["beta"], sign=self.params["sign"])
        elif self.kind == "annulus_log":
            cfg.update(C=self.params["C"], alpha=self.params["alpha"],
                       beta_exp=self.params["beta_exp"])
        elif self.kind == "separable":
            cfg.update(s_grid=list(self.params["s_grid"]),
                       h_values=list(self.params["h_values"]),
                       T=list(self.params["T"]), e=list(self.params["e"]))
        elif self.kind == "grid_sampled":
            cfg.update(file=self.params.get("file", ""))
        elif self.kind == "sum":
            cfg.update(parts=[p.to_config() for p in self.params["parts"]])
        return cfg


def drift_from_config(cfg):
    kind = cfg["kind"]
    if kind == "zero":
        return zero_drift(cfg["d"])
    if kind == "hardy":
        return make_hardy_drift(cfg["d"], cfg["beta"], cfg["sign"])
    if kind == "annulus_log":
        return make_annulus_log_drift(cfg["C"], cfg["alpha"], cfg["beta_exp"], d=cfg.get("d", 3))
    if kind == "separable":
        return make_separable_drift(cfg["d"], cfg["s_grid"], cfg["h_values"], cfg["T"], cfg["e"])
    if kind == "grid_sampled":
        return load_grid_drift(cfg["file"])
    if kind == "sum":
        return sum_drifts([drift_from_config(p) for p in cfg["parts"]])
    raise ValueError(f"unknown drift kind {kind!r}")


def cap_magnitude(samples, cap):
    """Rescale vectors whose magnitude exceeds ``cap`` down to it."""
    mags = np.sqrt(np.sum(samples * samples, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(mags > cap, cap / np.where(mags > 0, mags, 1.0), 1.0)
    scale = np.where(np.isfinite(samples).all(axis=-1), scale, 0.0)
    return samples * scale[..., None]


# -- constructors ------------------------------------------------------------


def zero_drift(d):
    return DriftField(d, "zero", {}, singular_set="none")


def make_hardy_drift(d, beta, sign=1):
    """b(x) = sign * beta * |x|^-2 x, so |b(x)| = beta/|x| exactly."""
    d = _check_dimension(d)
    if beta <= 0:
        raise ValueError("beta must be positive")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return DriftField(d, "hardy", {"beta": float(beta), "sign": int(sign)},
                      singular_set="origin", differentiable=True)


def make_annulus_log_drift(C, alpha, beta_exp, d=3):
    """Radial field with |b|^2 = C 1_ann / (||x|-1| (-ln||x|-1|)^beta_exp).

    The squared magnitude is locally integrable for beta_exp > 1 but |b| is
    not in L^(2+eps) near the unit sphere for any eps > 0.
    """
    d = _check_dimension(d)
    if C <= 0:
        raise ValueError("C must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if beta_exp <= 1:
        raise ValueError("beta_exp must exceed 1")
    return DriftField(d, "annulus_log",
                      {"C": float(C), "alpha": float(alpha), "beta_exp": float(beta_exp)},
                      singular_set="unit sphere")


def make_separable_drift(d, s_grid, h_values, T, e):
    d = _check_dimension(d)
    e = np.asarray(e, dtype=float)
    nrm = np.linalg.norm(e)
    if nrm == 0:
        raise ValueError("direction e must be nonzero")
    return DriftField(d, "separable",
                      {"s_grid": np.asarray(s_grid, float), "h_values": np.asarray(h_values, float),
                       "T": np.asarray(T, float), "e": e / nrm},
                      singular_set="level sets of T", differentiable=False)


def make_grid_sampled_drift(grid, samples, grad_samples=None, file=""):
    samples = np.asarray(samples, dtype=float)
    if samples.shape != grid.shape + (grid.d,):
        raise ValueError("samples must have shape grid.shape + (d,)")
    params = {"grid": grid, "samples": samples, "file": file}
    if grad_samples is not None:
        params["grad_samples"] = np.asarray(grad_samples, dtype=float)
    return DriftField(grid.d, "grid_sampled", params, singular_set="none",
                      differentiable=grad_samples is not None)


def sum_drifts(parts):
    if not parts:
        raise ValueError("need at least one summand")
    d = parts[0].d
    if any(p.d != d for p in parts):
        raise ValueError("summands must share the dimension")
    return DriftField(d, "sum", {"parts": list(parts)},
                      singular_set="; ".join(p.singular_set for p in parts),
                      differentiable=all(p.differentiable for p in parts))


# -- grid drift file I/O -------------------------------------------------------
# Binary layout: magic "FBLDRIFT", then little-endian int64 d, int64 n,
# float64 L, then the row-major float64 samples of shape (n,)*d + (d,).
# CSV layout: one comment header "# d=<d> n=<n> L=<L>", then one row of d
# floats per node, row-major.


def save_grid_drift(path, field):
    if field.kind != "grid_sampled":
        raise ValueError("only grid_sampled drifts are saved in the grid format")
    g = field.params["grid"]
    samples = field.params["samples"]
    path = str(path)
    if path.endswith(".csv"):
        with open(path, "w", newline="") as fh:
            fh.write(f"# d={g.d} n={g.n} L={g.half_width!r}\n")
            writer = csv.writer(fh)
            for row in samples.reshape(-1, g.d):
                writer.writerow([repr(float(v)) for v in row])
    else:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<qqd", g.d, g.n, g.half_width))
            fh.write(np.ascontiguousarray(samples, dtype="<f8").tobytes())


def load_grid_drift(path):
    path = str(path)
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise ValueError("missing grid drift CSV header")
            meta = dict(tok.split("=") for tok in header[1:].split())
            d, n, L = int(meta["d"]), int(meta["n"]), float(meta["L"])
            data = np.loadtxt(fh, delimiter=",")
    else:
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path} is not a grid drift file")
            d, n, L = struct.unpack("<qqd", fh.read(24))
            data = np.frombuffer(fh.read(), dtype="<f8")
    grid = BoxGrid(int(d), float(L), int(n))
    samples = np.array(data, dtype=float).reshape(grid.shape + (int(d),))
    return make_grid_sampled_drift(grid, samples, file=path)


# -- certificates --------------------------------------------------------------


@dataclass(frozen=True)
class FormBoundCertificate:
    """Witness of ||b phi||_2^2 <= delta ||grad phi||_2^2 + c_delta ||phi||_2^2."""

    delta: float
    c_delta: float
    lam: float
    method: str
    provenance: str = ""

    def __post_init__(self):
        if self.delta < 0 or self.c_delta < 0 or self.lam < 0:
            raise ValueError("certificate constants must be nonnegative")
        if self.method == "hardy_analytic" and self.c_delta != 0:
            raise ValueError("the Hardy bound is homogeneous: c_delta must be 0")

    @property
    def sqrt_delta(self):
        return math.sqrt(self.delta)


def hardy_certificate(d, beta):
    """delta = (2 beta / (d-2))^2 with no additive term, by Hardy's inequality."""
    d = _check_dimension(d)
    if beta <= 0:
        raise ValueError("beta must be positive")
    delta = (2.0 * beta / (d - 2)) ** 2
    return FormBoundCertificate(delta, 0.0, 0.0, "hardy_analytic",
                                provenance=f"hardy d={d} beta={beta}")


def strichartz_certificate(d, weak_norm):
    """sqrt(delta) = weak_norm * Omega_d^(-1/d) * 2/(d-2); lambda-uniform."""
    d = _check_dimension(d)
    if weak_norm < 0:
        raise ValueError("weak norm must be nonnegative")
    sqrt_delta = weak_norm * unit_ball_volume(d) ** (-1.0 / d) * 2.0 / (d - 2)
    return FormBoundCertificate(sqrt_delta**2, 0.0, 0.0, "strichartz",
                                provenance=f"weak L^{d} norm {weak_norm}")


def sobolev_embedding_constant(d):
    """Sharp constant in ||u||_{2d/(d-2)} <= S_d ||grad u||_2 (Talenti)."""
    d = _check_dimension(d)
    return (math.gamma(d) / math.gamma(d / 2.0)) ** (1.0 / d) / math.sqrt(math.pi * d * (d - 2))


def ld_split_certificate(d, ld_norm, linf_norm):
    """Certificate for b = f + h with f in L^d and h bounded.

    With S = ||f||_d and H = ||h||_inf, taking lambda = (H/S)^2 gives
    sqrt(delta) = (c_sob + 1) S, so delta shrinks with the L^d part.
    """
    d = _check_dimension(d)
    if ld_norm <= 0:
        raise ValueError("ld_norm must be positive; a bounded field alone has"
                         " arbitrarily small delta (pick any split)")
    c = sobolev_embedding_constant(d)
    sqrt_delta = (c + 1.0) * ld_norm
    lam = (linf_norm / ld_norm) ** 2
    return FormBoundCertificate(sqrt_delta**2, lam * sqrt_delta**2, lam, "ld_split",
                                provenance=f"L^d+L^inf split, |f|_d={ld_norm} |h|_inf={linf_norm}")


def certificate_sum(c1, c2):
    """sqrt(delta) adds; the additive constants combine as 2(c1 + c2)."""
    sqrt_delta = c1.sqrt_delta + c2.sqrt_delta
    c_delta = 2.0 * (c1.c_delta + c2.c_delta)
    lam = c_delta / sqrt_delta**2 if sqrt_delta > 0 else 0.0
    return FormBoundCertificate(sqrt_delta**2, c_delta, lam, "sum",
                                provenance="sum rule; c_delta = 2(c1+c2) by Cauchy-Schwarz")


# -- weak L^d norm --------------------------------------------------------------


@dataclass
class WeakLdEstimate:
    """Grid estimate of sup_s s |{|b| > s}|^(1/d); a lower bound of the sup."""

    value: float
    s_argmax: float
    s_count: int
    grid: BoxGrid
    stabilized: bool
    coarse_value: float


def _super_level_volumes(mags, h, d, s_levels):
    flat = np.sort(mags.ravel())  # inf sorts last and is counted in every set
    counts = flat.size - np.searchsorted(flat, s_levels, side="left")
    return counts * h**d


def weak_ld_norm(field, grid, s_samples=64, stabilization_tol=0.1, resolve_tol=0.15):
    """Estimate the weak-L^d norm of |b| on the grid.

    Super-level volumes are node counts times h^d; singular nodes (|b| =
    inf) belong to every super-level set.  The s-levels are logarithmic
    between the smallest positive |b| and the capped maximum 1/h.  A level
    enters the maximum only if its set spans enough cells for counting to
    measure volume and the half-resolution subgrid reproduces that volume;
    the estimate is flagged not stabilized when the two grids still
    disagree at the maximizer.
    """
    if s_samples < 2:
        raise ValueError("need at least two s samples")
    mags = field.magnitude_on(grid)
    finite = mags[np.isfinite(mags)]
    positive = finite[finite > 0]
    if positive.size == 0:
        return WeakLdEstimate(0.0, 0.0, s_samples, grid, True, 0.0)
    cap = 1.0 / grid.h
    s_lo = max(positive.min(), cap * 1e-12)
    s_hi = max(min(float(finite.max()), cap), s_lo * (1 + 1e-9))
    levels = np.geomspace(s_lo, s_hi, s_samples)

    vol_fine = _super_level_volumes(mags, grid.h, grid.d, levels)
    coarse = mags[(slice(None, None, 2),) * grid.d]
    vol_coarse = _super_level_volumes(coarse, 2 * grid.h, grid.d, levels)
    min_cells = min(10_000, max(1, grid.size // 4))
    with np.errstate(invalid="ignore", divide="ignore"):
        resolved = (vol_fine >= min_cells * grid.cell_volume) & (
            np.abs(vol_coarse - vol_fine) <= resolve_tol * vol_fine)
    est = levels * vol_fine ** (1.0 / grid.d)
    if not np.any(resolved):
        idx = int(np.argmax(est))
        log.warning("no resolved s-level: weak L^d estimate is unstabilized")
        return WeakLdEstimate(float(est[idx]), float(levels[idx]), s_samples, grid,
                              False, float(levels[idx] * vol_coarse[idx] ** (1 / grid.d)))
    masked = np.where(resolved, est, 0.0)
    idx = int(np.argmax(masked))
    value = float(est[idx])
    coarse_value = float(levels[idx] * vol_coarse[idx] ** (1.0 / grid.d))
    stabilized = value > 0 and abs(coarse_value - value) / value <= stabilization_tol
    if not stabilized:
        log.warning("weak L^d estimate not stabilized: fine %.4g vs coarse %.4g",
                    value, coarse_value)
    return WeakLdEstimate(value, float(levels[idx]), s_samples, grid,
                          bool(stabilized), coarse_value)


# -- numeric form-bound estimate -------------------------------------------------


@dataclass
class FormBoundEstimate:
    delta_est: float
    residual: float
    converged: bool
    iterations: int


def estimate_form_bound_numeric(field, lam, grid, iters=300, tol=1e-9, seed=0):
    """Power iteration for the top eigenvalue of (lam-Lap)^-1/2 |b|^2 (lam-Lap)^-1/2.

    |b| is capped at 1/h; the half-inverse Laplacian is applied spectrally on
    the periodic box.  Returns the eigenvalue estimate (= delta estimate),
    the last relative change, and a convergence flag.
    """
    if grid.boundary == "periodic" and lam <= 0:
        raise ValueError("lambda must be positive on the periodic box (zero mode)")
    cap = 1.0 / grid.h
    samples = field.sample_on(grid, cap=cap, floor=grid.h / 2.0)
    m2 = np.sum(samples * samples, axis=-1)
    if not np.any(m2 > 0):
        return FormBoundEstimate(0.0, 0.0, True, 0)
    mult = 1.0 / np.sqrt(lam + grid.rfft_ksq())

    def half_inv(g):
        return irfftn(mult * rfftn(g, grid), grid)

    rng = np.random.default_rng(seed)
    g = rng.standard_normal(grid.shape)
    g /= np.linalg.norm(g.ravel())
    ev_prev = 0.0
    residual = np.inf
    for it in range(1, iters + 1):
        y = half_inv(m2 * half_inv(g))
        ev = np.linalg.norm(y.ravel())
        if ev == 0.0:
            return FormBoundEstimate(0.0, 0.0, True, it)
        g = y / ev
        residual = abs(ev - ev_prev) / ev
        ev_prev = ev
        if residual < tol:
            return FormBoundEstimate(ev, residual, True, it)
    log.warning("form-bound power iteration did not converge: residual %.3g", residual)
    return FormBoundEstimate(ev_prev, residual, False, iters)
