"""Smooth localized initial data with analytic gradients."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianBump:
    """f(x) = amplitude * exp(-|x - center|^2 / (2 width^2))."""

    d: int
    amplitude: float = 1.0
    width: float = 0.5
    center: tuple = None

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("width must be positive")
        c = self.center if self.center is not None else (0.0,) * self.d
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        if len(self.center) != self.d:
            raise ValueError("center must have length d")

    def value(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.sum((x - np.array(self.center)) ** 2, axis=1)
        return self.amplitude * np.exp(-r2 / (2.0 * self.width**2))

    def grad(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dx = x - np.array(self.center)
        r2 = np.sum(dx * dx, axis=1)
        g = self.amplitude * np.exp(-r2 / (2.0 * self.width**2))
        return -(dx / self.width**2) * g[:, None]

    def on_grid(self, grid):
        r2 = np.zeros(grid.shape)
        for ax, m in enumerate(grid.meshes()):
            r2 += (m - self.center[ax]) ** 2
        return self.amplitude * np.exp(-r2 / (2.0 * self.width**2))

    def grad_on_grid(self, grid):
        """Gradient samples, shape (d, *grid.shape)."""
        v = self.on_grid(grid)
        out = np.empty((grid.d,) + grid.shape)
        for ax, m in enumerate(grid.meshes()):
            out[ax] = -(m - self.center[ax]) / self.width**2 * v
        return out

    def scaled(self, c):
        return GaussianBump(self.d, c * self.amplitude, self.width, self.center)

    def heat_evolved_value(self, x, tau):
        """Closed form of the heat semigroup e^{(tau/2)Delta} applied to f.

        tau is the added per-axis variance; a Gaussian stays Gaussian with
        width^2 -> width^2 + tau.
        """
        s2 = self.width**2
        s2t = s2 + tau
        amp = self.amplitude * (s2 / s2t) ** (self.d / 2.0)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.sum((x - np.array(self.center)) ** 2, axis=1)
        return amp * np.exp(-r2 / (2.0 * s2t))
