"""Fixed recurrent feature maps (reservoirs).

A reservoir is a pair of fixed weight matrices (U, W) and an activation.
It turns a vector sequence into a state sequence by the update

    h_t = act(U x_t + W h_{t-1}),    h_0 = 0,

and is never trained; all learning happens in readouts on top of the
states.  Three constructions are provided:

``build_random``
    dense i.i.d. Gaussian weights, recurrent part rescaled to an exact
    spectral radius (tanh activation).
``build_crj``
    a deterministic ring with bidirectional jump connections and
    fixed-magnitude input weights with pseudo-random signs (tanh).
``build_ldn``
    a block-diagonal linear system whose blocks are discretized Legendre
    delay systems, one block per input channel (identity activation).
    States of this reservoir carry a sliding window of each channel in a
    Legendre polynomial basis, so delayed inputs can be read back with a
    linear map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


def _activation(name: str):
    if name == "tanh":
        return np.tanh
    if name == "identity":
        return lambda z: z
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Reservoir:
    """Fixed sequence encoder with input map U (m, n) and recurrence W (m, m)."""

    U: np.ndarray
    W: np.ndarray
    activation: str = "tanh"
    kind: str = "rand"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        if self.U.ndim != 2 or self.W.ndim != 2:
            raise ValueError("U and W must be matrices")
        if self.W.shape[0] != self.W.shape[1]:
            raise ValueError("W must be square")
        if self.U.shape[0] != self.W.shape[0]:
            raise ValueError("U and W disagree on the state dimension")
        self._act = _activation(self.activation)

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.U.shape[1]

    def step(self, h: np.ndarray, x: np.ndarray) -> np.ndarray:
        """One update.  Accepts single states (m,) or batches (B, m)."""
        return self._act(x @ self.U.T + h @ self.W.T)

    def encode_sequence(self, xs: np.ndarray) -> np.ndarray:
        """Fold a (T, n) sequence from the zero state; returns the final state."""
        h = np.zeros(self.m)
        for x in np.asarray(xs, dtype=float):
            h = self.step(h, x)
        return h

    def state_sequence(self, xs: np.ndarray) -> np.ndarray:
        """All intermediate states of a (T, n) sequence as a (T, m) array."""
        xs = np.asarray(xs, dtype=float)
        out = np.zeros((len(xs), self.m))
        h = np.zeros(self.m)
        for t, x in enumerate(xs):
            h = self.step(h, x)
            out[t] = h
        return out

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.W))))

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "activation": self.activation,
            "m": self.m,
            "n": self.n,
            "meta": self.meta,
            "U": self.U.tolist(),
            "W": self.W.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Reservoir":
        d = json.loads(text)
        r = cls(U=np.array(d["U"], dtype=float), W=np.array(d["W"], dtype=float),
                activation=d["activation"], kind=d["kind"], meta=d.get("meta", {}))
        if r.m != d["m"] or r.n != d["n"]:
            raise ValueError("declared sizes do not match weight shapes")
        return r


def build_random(m: int, n: int, spectral_radius: float = 0.9,
                 input_scale: float = 1.0, seed: int = 0) -> Reservoir:
    """Dense Gaussian reservoir with W rescaled to the requested radius."""
    if not 0 < spectral_radius:
        raise ValueError("spectral_radius must be positive")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((m, m))
    rho = np.max(np.abs(np.linalg.eigvals(W)))
    W *= spectral_radius / rho
    U = rng.standard_normal((m, n)) * input_scale
    meta = {"spectral_radius": spectral_radius, "input_scale": input_scale, "seed": seed}
    return Reservoir(U=U, W=W, activation="tanh", kind="rand", meta=meta)


def build_crj(m: int, n: int, cycle_weight: float, jump_weight: float,
              jump_length: int, input_weight: float) -> Reservoir:
    """Cycle reservoir with jumps.

    W carries ``cycle_weight`` on the directed ring i -> i+1 (mod m) and
    ``jump_weight`` on bidirectional chords i <-> i+jump_length (mod m),
    walking i in steps of ``jump_length`` from 0 until the walk returns
    to 0.  U is all +/- ``input_weight`` with deterministic pseudo-random
    signs, so the construction has no free randomness at all.
    """
    if not 1 <= jump_length < m:
        raise ValueError("jump_length must be in [1, m)")
    W = np.zeros((m, m))
    for i in range(m):
        W[(i + 1) % m, i] = cycle_weight
    i = 0
    while True:
        j = (i + jump_length) % m
        W[i, j] = jump_weight
        W[j, i] = jump_weight
        i = j
        if i == 0:
            break
    # Sign pattern from the digits of pi, as is customary for this
    # architecture: digit < 5 maps to minus.  Digits are consumed one
    # input channel at a time, so no two channels share a sign column
    # unless pi happens to repeat an m-digit pattern.
    digits = _pi_digits(m * n)
    signs = np.where(digits < 5, -1.0, 1.0).reshape(n, m).T
    U = input_weight * signs
    meta = {"cycle_weight": cycle_weight, "jump_weight": jump_weight,
            "jump_length": jump_length, "input_weight": input_weight}
    return Reservoir(U=U, W=W, activation="tanh", kind="crj", meta=meta)


def _pi_digits(k: int) -> np.ndarray:
    """First k decimal digits of pi after the decimal point.

    Gibbons' streaming spigot; exact integer arithmetic, so the sign
    pattern is reproducible everywhere.
    """
    digits = []
    q, r, t, j, n, l = 1, 0, 1, 1, 3, 3
    while len(digits) < k + 1:
        if 4 * q + r - t < n * t:
            digits.append(n)
            q, r, n = 10 * q, 10 * (r - n * t), (10 * (3 * q + r)) // t - 10 * n
        else:
            q, r, t, j, n, l = (q * j, (2 * q + r) * l, t * l, j + 1,
                                (q * (7 * j + 2) + r * l) // (t * l), l + 2)
    return np.array(digits[1:k + 1])  # drop the leading 3


def ldn_system(q: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time Legendre delay system (A, B) of order q, window theta."""
    A = np.zeros((q, q))
    B = np.zeros(q)
    for i in range(q):
        B[i] = (2 * i + 1) * (-1.0) ** i / theta
        for j in range(q):
            if i < j:
                A[i, j] = (2 * i + 1) * -1.0 / theta
            else:
                A[i, j] = (2 * i + 1) * (-1.0) ** (i - j + 1) / theta
    return A, B


def build_ldn(m: int, n: int, theta: float) -> Reservoir:
    """Legendre delay network: per-channel delay blocks, identity activation.

    ``m`` must be a multiple of ``n``; each channel gets a block of order
    q = m / n.  The continuous system is discretized with a zero-order
    hold at unit timestep.
    """
    if m % n != 0:
        raise ValueError(f"m={m} must be a multiple of n={n}")
    if theta <= 0:
        raise ValueError("theta must be positive")
    q = m // n
    A, B = ldn_system(q, theta)
    Ad = scipy.linalg.expm(A)
    Bd = np.linalg.solve(A, (Ad - np.eye(q)) @ B)
    W = np.zeros((m, m))
    U = np.zeros((m, n))
    for c in range(n):
        sl = slice(c * q, (c + 1) * q)
        W[sl, sl] = Ad
        U[sl, c] = Bd
    meta = {"theta": theta, "order": q}
    return Reservoir(U=U, W=W, activation="identity", kind="ldn", meta=meta)
