"""Trajectory storage and trapezoidal quadrature of the Volterra history term.

The history term at node ``n`` is

    H_n = int_0^{t_n} B(t_n - s, u(s), zeta(s)) ds
        ~ dt * sum_i w_i B((n - i) dt, u_i, zeta_i),   w_0 = w_n = 1/2, else 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BufferOverflow, RejectedInput


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, T]`` into ``N`` steps."""

    T: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise RejectedInput(f"T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise RejectedInput(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self):
        return self.T / self.N

    def t(self, i):
        return i * self.dt

    @property
    def nodes(self):
        return np.arange(self.N + 1) * self.dt


class HistoryBuffer:
    """Stores ``(u_i, zeta_i)`` at the accepted nodes of a :class:`TimeGrid`."""

    def __init__(self, grid, dim_u, dim_zeta):
        self.grid = grid
        self.dim_u = int(dim_u)
        self.dim_zeta = int(dim_zeta)
        self.u_samples = []
        self.zeta_samples = []

    def __len__(self):
        return len(self.u_samples)

    @property
    def length(self):
        return len(self.u_samples)

    @property
    def capacity(self):
        return self.grid.N + 1

    def append(self, u, zeta):
        if len(self) >= self.capacity:
            raise BufferOverflow(f"history buffer is full ({self.capacity} nodes)")
        u = np.array(u, dtype=float)
        zeta = np.array(zeta, dtype=float)
        if u.shape != (self.dim_u,) or zeta.shape != (self.dim_zeta,):
            raise RejectedInput("sample has the wrong shape")
        u.setflags(write=False)
        zeta.setflags(write=False)
        self.u_samples.append(u)
        self.zeta_samples.append(zeta)
        return self

    def past_sum(self, op_B, n):
        """Quadrature over nodes ``0..n-1`` (the endpoint ``n`` excluded)."""
        if n < 0 or n > len(self):
            raise RejectedInput(f"node {n} needs nodes 0..{n - 1} stored, have {len(self)}")
        out = np.zeros(self.dim_u)
        if n == 0:
            return out
        dt = self.grid.dt
        out += 0.5 * np.asarray(op_B(n * dt, self.u_samples[0], self.zeta_samples[0]))
        for i in range(1, n):
            out += np.asarray(op_B((n - i) * dt, self.u_samples[i], self.zeta_samples[i]))
        return dt * out

    def endpoint(self, op_B, n, u_n, zeta_n):
        """Endpoint contribution ``dt/2 B(0, u_n, zeta_n)``; zero at ``n = 0``."""
        if n == 0:
            return np.zeros(self.dim_u)
        return 0.5 * self.grid.dt * np.asarray(op_B(0.0, u_n, zeta_n))

    def history_term(self, op_B, n):
        """Trapezoidal history term at stored node ``n``."""
        if n < 0 or n >= len(self):
            raise RejectedInput(f"node {n} is not stored (length {len(self)})")
        return self.past_sum(op_B, n) + self.endpoint(
            op_B, n, self.u_samples[n], self.zeta_samples[n])


def append(buf, u, zeta):
    return buf.append(u, zeta)


def history_term(buf, op_B, n):
    return buf.history_term(op_B, n)
