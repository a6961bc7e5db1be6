"""CSV and JSON writers for trajectories, diagnostics and studies.

Every float is written with 17 significant digits, which round-trips a 64-bit
float exactly. Headers are fixed.
"""

import json
import math
import os

import numpy as np

TRAJECTORY_HEADER = ("step", "t", "node", "u_0", "u_1", "udot_0", "udot_1", "w", "zeta")
DIAGNOSTICS_HEADER = ("step", "t", "sweeps", "final_change", "max_ratio", "picard_iterations",
                      "max_picard_ratio", "ratios")
CONVERGENCE_HEADER = ("level", "N", "dt", "difference", "order")


def fmt(x):
    """17 significant digits; empty for ``None``."""
    if x is None:
        return ""
    return f"{float(x):.17g}"


def _line(cells):
    return ",".join(cells) + "\n"


def node_fields(p, state):
    """Per-node ``(u_xy, udot_xy, w, zeta)`` rows of one state.

    Contact problems are expanded to mesh nodes in Cartesian components with
    ``w`` present on contact nodes only. Abstract problems list one row per
    coordinate index with a single vector component.
    """
    disc = p.extras.get("disc") if p.extras else None
    if disc is not None:
        n = disc.model.mesh.n_nodes
        U = disc.to_full(state.u).reshape(n, 2)
        Ud = disc.to_full(state.udot).reshape(n, 2)
        w = [None] * n
        for k, i in enumerate(disc.contact_nodes):
            w[int(i)] = state.w[k]
        return [((U[i, 0], U[i, 1]), (Ud[i, 0], Ud[i, 1]), w[i], state.zeta[i])
                for i in range(n)]
    u, ud, w, z = (np.atleast_1d(a) for a in (state.u, state.udot, state.w, state.zeta))
    rows = []
    for i in range(max(u.size, w.size, z.size)):
        rows.append(((u[i] if i < u.size else None, None),
                     (ud[i] if i < ud.size else None, None),
                     w[i] if i < w.size else None,
                     z[i] if i < z.size else None))
    return rows


def write_trajectory(path, p, traj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_line(TRAJECTORY_HEADER))
        for n, s in enumerate(traj.states):
            for node, (u, ud, w, z) in enumerate(node_fields(p, s)):
                fh.write(_line([str(n), fmt(s.t), str(node), fmt(u[0]), fmt(u[1]),
                                fmt(ud[0]), fmt(ud[1]), fmt(w), fmt(z)]))


def write_diagnostics(path, traj):
    """One row per completed step; ``ratios`` is a ``;``-separated list."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_line(DIAGNOSTICS_HEADER))
        for r in traj.records:
            final = r.changes[-1] if r.changes else None
            mx = max(r.ratios) if r.ratios else None
            fh.write(_line([str(r.step), fmt(r.t), str(r.sweeps), fmt(final), fmt(mx),
                            str(r.picard_iterations), fmt(r.max_picard_ratio),
                            ";".join(fmt(x) for x in r.ratios)]))


def write_convergence(path, table, T):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_line(CONVERGENCE_HEADER))
        for k, (N, d) in enumerate(zip(table.N, table.differences)):
            if k == 0:
                order = ""
            elif table.exact:
                order = "exact"
            else:
                order = fmt(table.orders[k - 1])
            fh.write(_line([str(k), str(N), fmt(T / N), fmt(d), order]))


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if x is None or isinstance(x, (int, str)):
        return x
    return str(x)


def write_summary(path, summary):
    """Sorted-key JSON; non-finite floats become ``null``."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_summary(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path
