"""Multi-layer similarity descriptor.

The effective similarity is ``S = sum_t phi_t * (Omega_t o Gamma_t)``: each
layer pairs a learned symmetric basis ``Gamma_t`` with a fixed constraint
matrix ``Omega_t`` and a fixed importance ``phi_t``. A single layer with an
all-ones constraint and unit importance is the plain learned-similarity
model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DivergenceError, InputError, MismatchError
from .similarity import KINDS

VARIANTS = ("linear", "tanh")
# Bases start at roughly the magnitude SGD settles at on desk-scale data, so
# the first epoch refines them instead of overwriting them.
INIT_SCALE = 0.1
REG_FORMS = ("alg1", "eq12")


class SimilarityLayers:
    """Learned bases, constraint matrices and importances of all layers.

    ``gamma`` and ``omega`` are (M, M, T) arrays; ``gamma[..., t]`` is the
    basis of layer t. Bases are kept symmetric with a zero diagonal.
    """

    def __init__(self, gamma, omega, phi, variant="linear", omega_kinds=None):
        gamma = np.ascontiguousarray(gamma, dtype=np.float64)
        omega = np.ascontiguousarray(omega, dtype=np.float64)
        phi = np.ascontiguousarray(phi, dtype=np.float64)
        if gamma.ndim != 3 or gamma.shape != omega.shape or gamma.shape[0] != gamma.shape[1]:
            raise InputError(f"gamma/omega must both be (M, M, T); got {gamma.shape}, {omega.shape}")
        if phi.shape != (gamma.shape[2],):
            raise InputError("need one importance per layer")
        if variant not in VARIANTS:
            raise InputError(f"unknown variant {variant!r}")
        self.gamma = gamma
        self.omega = omega
        self.phi = phi
        self.variant = variant
        self.omega_kinds = tuple(omega_kinds) if omega_kinds else ("ones",) * len(phi)

    @classmethod
    def initialize(cls, omegas, phi, variant="linear", seed=0, init_scale=INIT_SCALE):
        """Fresh layers with bases drawn uniformly from [0, init_scale]."""
        m = omegas[0].size
        n_layers = len(omegas)
        rng = np.random.default_rng(seed)
        gamma = np.empty((m, m, n_layers))
        omega = np.empty((m, m, n_layers))
        for t, om in enumerate(omegas):
            if om.size != m:
                raise InputError("constraint matrices differ in size")
            g = np.tril(rng.uniform(0.0, init_scale, size=(m, m)), -1)
            gamma[:, :, t] = g + g.T
            omega[:, :, t] = om.values
        return cls(gamma, omega, phi, variant, [om.kind for om in omegas])

    @property
    def num_items(self):
        return self.gamma.shape[0]

    @property
    def num_layers(self):
        return self.gamma.shape[2]

    def basis(self, t):
        return self.gamma[:, :, t]

    def copy(self):
        return SimilarityLayers(self.gamma.copy(), self.omega, self.phi.copy(),
                                self.variant, self.omega_kinds)

    def effective_matrix(self, out=None):
        if out is None:
            out = np.empty((self.num_items, self.num_items))
        return _kernels.effective_matrix(self.gamma, self.omega, self.phi, out)


def effective_row(layers, i):
    """Row i of the composed similarity, with S_ii forced to 0."""
    row = np.zeros(layers.num_items)
    for t in range(layers.num_layers):
        row = row + layers.phi[t] * layers.omega[i, :, t] * layers.gamma[i, :, t]
    row[i] = 0.0
    return row


@dataclass
class GradientSample:
    """Derivative of one prediction with respect to the bases in row i.

    ``grads[t, c]`` is d r_hat / d Gamma_t[item, neighbors[c]].
    """

    user: int
    item: int
    neighbors: np.ndarray
    prediction: float
    error: float
    grads: np.ndarray

    @property
    def empty(self):
        return self.neighbors.size == 0


def _training_values(layers, view):
    if layers.variant == "tanh":
        return view.map_to_unit(view.user_values)
    return view.user_values


def prediction_gradient(layers, u, i, view, target=None, values=None):
    """Analytic gradient of the prediction for (u, i) over every layer.

    With num = S_i . R_u and den = |S_i| . I_u the quotient derivative is
    (r_uj * den - sign(s_ij) * num) / den^2, scaled by phi_t * Omega_t[i, j]
    per layer and by 1 - tanh(z)^2 for the tanh model. ``target`` defaults
    to the user's own training value for i (range-mapped for tanh); with no
    target the error is NaN.
    """
    if values is None:
        values = _training_values(layers, view)
    lo, hi = view.user_indptr[u], view.user_indptr[u + 1]
    items = view.user_items[lo:hi]
    vals = values[lo:hi]
    if target is None:
        hit = np.flatnonzero(items == i)
        target = float(vals[hit[0]]) if hit.size else float("nan")
    keep = items != i
    items, vals = items[keep], vals[keep]

    s = effective_row(layers, i)[items]
    num = float(s @ vals)
    den = float(np.abs(s).sum())
    if den == 0.0:
        return GradientSample(u, i, items[:0], 0.0, 0.0 - target,
                              np.zeros((layers.num_layers, 0)))
    z = num / den
    ds = (vals * den - np.sign(s) * num) / (den * den)
    if layers.variant == "tanh":
        pred = float(np.tanh(z))
        ds = ds * (1.0 - pred * pred)
    else:
        pred = z
    grads = np.stack([layers.phi[t] * layers.omega[i, items, t] * ds
                      for t in range(layers.num_layers)])
    return GradientSample(u, i, items, pred, pred - target, grads)


def apply_update(layers, sample, beta, lambdas, reg_form="alg1", mu=0.0):
    """One SGD step on the entries (i, j) touched by ``sample``, mirrored to (j, i).

    The penalty gradient is lambda_t * Omega_ij * Gamma_ij (``alg1``) or
    lambda_t * Omega_ij^2 * Gamma_ij (``eq12``); a nonzero ``mu`` subtracts
    lambda_t * mu * sign(Gamma_ij).
    """
    if sample.empty:
        return
    i, js = sample.item, sample.neighbors
    for t in range(layers.num_layers):
        g = layers.gamma[i, js, t]
        w = layers.omega[i, js, t]
        reg = w * g if reg_form == "alg1" else w * w * g
        if mu != 0.0:
            reg = reg - mu * np.sign(g)
        with np.errstate(over="ignore", invalid="ignore"):
            new = g - beta * sample.error * sample.grads[t] - beta * lambdas[t] * reg
        if not np.all(np.isfinite(new)):
            raise DivergenceError(
                f"non-finite update at item {i} (user {sample.user}), layer {t}",
                sample=(sample.user, sample.item))
        layers.gamma[i, js, t] = new
        layers.gamma[js, i, t] = new


_MAGIC = b"PNBMCKPT"
_VERSION = 1


def save_checkpoint(layers, path):
    """Header, then each layer's basis as a row-major lower triangle (float64 LE).

    Header: magic, version (u32), M (u64), T (u32), variant (u8), and per
    layer phi (f64) and constraint kind (u8).
    """
    m, n_layers = layers.num_items, layers.num_layers
    rows, cols = np.tril_indices(m)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQIB", _VERSION, m, n_layers, VARIANTS.index(layers.variant)))
        for t in range(n_layers):
            fh.write(struct.pack("<dB", float(layers.phi[t]), KINDS.index(layers.omega_kinds[t])))
        for t in range(n_layers):
            fh.write(np.ascontiguousarray(layers.gamma[rows, cols, t]).astype("<f8").tobytes())


@dataclass
class Checkpoint:
    num_items: int
    variant: str
    phi: np.ndarray
    omega_kinds: tuple
    gamma: np.ndarray

    def to_layers(self, omegas):
        """Attach constraint matrices rebuilt from the training data."""
        if len(omegas) != len(self.phi):
            raise MismatchError("constraint matrix count does not match the checkpoint")
        for om, kind in zip(omegas, self.omega_kinds):
            if om.size != self.num_items:
                raise MismatchError(
                    f"checkpoint covers {self.num_items} items, corpus has {om.size}")
            if om.kind != kind:
                raise MismatchError(f"constraint kind {om.kind} != checkpoint {kind}")
        omega = np.stack([om.values for om in omegas], axis=2)
        return SimilarityLayers(self.gamma, omega, self.phi, self.variant, self.omega_kinds)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise InputError(f"{path} is not a model checkpoint")
    version, m, n_layers, variant = struct.unpack_from("<IQIB", blob, 8)
    if version != _VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    off = 8 + struct.calcsize("<IQIB")
    phi, kinds = [], []
    for _ in range(n_layers):
        p, k = struct.unpack_from("<dB", blob, off)
        off += struct.calcsize("<dB")
        phi.append(p)
        kinds.append(KINDS[k])
    tri = m * (m + 1) // 2
    data = np.frombuffer(blob, dtype="<f8", offset=off)
    if data.size != tri * n_layers:
        raise InputError(f"{path} is truncated")
    rows, cols = np.tril_indices(m)
    gamma = np.zeros((m, m, n_layers))
    for t in range(n_layers):
        gamma[rows, cols, t] = data[t * tri:(t + 1) * tri]
        gamma[cols, rows, t] = data[t * tri:(t + 1) * tri]
    return Checkpoint(m, VARIANTS[variant], np.array(phi), tuple(kinds), gamma)
