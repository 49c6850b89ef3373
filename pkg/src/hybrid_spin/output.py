"""CSV output: diagnostics tables and field snapshots.

Snapshot layout: one ``#`` metadata line, a column header, then one row per node in
node-major order (theta outer, phi inner)::

    # n_theta=32 n_phi=64 kind=hybrid_density t=0.5
    i,j,theta,phi,P0,Px,Py,Pz
    0,0,0.049087,0.0,...

Complex fields are split into ``_re``/``_im`` columns.
"""

import csv
import math
import os

import numpy as np

from . import models as md

_VALUE_COLUMNS = {
    "classical": ["rho"],
    "koopman": ["chi_re", "chi_im"],
    "hybrid_spinor": ["Y0_re", "Y0_im", "Y1_re", "Y1_im"],
    "factored": ["rho", "psi0_re", "psi0_im", "psi1_re", "psi1_im"],
    "hybrid_density": ["P0", "Px", "Py", "Pz"],
}

_STATE_TYPES = {
    "classical": md.ClassicalDensity,
    "koopman": md.Koopman,
    "hybrid_spinor": md.HybridSpinor,
    "factored": md.Factored,
    "hybrid_density": md.HybridDensity,
}


def _format(v):
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return repr(float(v))


def write_table(path, rows, columns):
    """Write dict rows with a fixed column order."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_format(row.get(c, math.nan)) for c in columns])


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in r]


def _state_values(state):
    cols = []
    for arr in state.arrays():
        arr = np.asarray(arr)
        flat = arr.reshape(arr.shape[:2] + (-1,))
        if np.iscomplexobj(arr):
            for k in range(flat.shape[2]):
                cols += [flat[:, :, k].real, flat[:, :, k].imag]
        else:
            cols += [flat[:, :, k] for k in range(flat.shape[2])]
    return np.stack(cols, axis=-1)


def write_snapshot(path, state, grid, t):
    names = _VALUE_COLUMNS[state.kind]
    vals = _state_values(state)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# n_theta={grid.n_theta} n_phi={grid.n_phi} kind={state.kind} t={t!r}\n")
        w = csv.writer(fh)
        w.writerow(["i", "j", "theta", "phi"] + names)
        for i in range(grid.n_theta):
            for j in range(grid.n_phi):
                w.writerow([i, j, repr(float(grid.theta[i])), repr(float(grid.phi[j]))] + [repr(float(x)) for x in vals[i, j]])


def read_snapshot(path):
    """Return ``(state, n_theta, n_phi, t)`` from a snapshot file."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        rows = list(csv.reader(fh))
    nt, nph = int(meta["n_theta"]), int(meta["n_phi"])
    kind = meta["kind"]
    data = np.array([[float(x) for x in r[4:]] for r in rows[1:]]).reshape(nt, nph, -1)
    if kind == "classical":
        state = md.ClassicalDensity(data[..., 0])
    elif kind == "koopman":
        state = md.Koopman(data[..., 0] + 1j * data[..., 1])
    elif kind == "hybrid_spinor":
        state = md.HybridSpinor(data[..., 0::2] + 1j * data[..., 1::2])
    elif kind == "factored":
        state = md.Factored(data[..., 0], data[..., 1::2] + 1j * data[..., 2::2])
    else:
        state = md.HybridDensity(data)
    return state, nt, nph, float(meta["t"])
