"""Reservoir machines with row-addressable memory.

A lighter augmentation than the stack: the machine owns K memory rows,
each wide enough for one reservoir state.  Per step an address function
picks a row (0 = no access).  The first access to a row saves the
current state into it; every later access restores the saved state into
``h``, from where the recurrence continues.  With the address function
pinned to 0 this is exactly a plain echo state network.

The module also hosts the suffix convergence probe, which quantifies
why plain reservoirs cannot make decisions that depend on early input:
states of two sequences that share a long suffix collapse onto each
other geometrically fast, so no readout can tell them apart afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .alphabet import SymbolTable
from .reservoir import Reservoir


def _as_predictor(fn) -> Callable[[np.ndarray], np.ndarray]:
    """Accept fitted readouts (anything with .predict) or plain callables
    mapping a batch of states (B, m) to a batch of values."""
    if hasattr(fn, "predict"):
        return fn.predict
    return fn


@dataclass
class MemoryMachine:
    """Reservoir plus K state-sized memory rows.

    ``address_fn`` maps states (B, m) to integer rows in [0, K]; row 0
    means "no memory access".  ``output_fn`` maps states to outputs.
    """

    reservoir: Reservoir
    memory_rows: int
    address_fn: object
    output_fn: object
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.memory_rows < 1:
            raise ValueError("need at least one memory row")


def run_memory_machine(machine: MemoryMachine, inputs: np.ndarray) -> np.ndarray:
    """Outputs for one (T, n) input block as a (T, L) array.

    Memory starts zeroed and unwritten on every run.
    """
    r = machine.reservoir
    address = _as_predictor(machine.address_fn)
    output = _as_predictor(machine.output_fn)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, r.n)
    memory = np.zeros((machine.memory_rows, r.m))
    written = np.zeros(machine.memory_rows, dtype=bool)
    h = np.zeros(r.m)
    rows = []
    for x in inputs:
        h = r.step(h, x)
        a = int(np.asarray(address(h[None, :])).ravel()[0])
        if not 0 <= a <= machine.memory_rows:
            raise ValueError(f"address {a} outside [0, {machine.memory_rows}]")
        if a > 0:
            if written[a - 1]:
                h = memory[a - 1].copy()
            else:
                memory[a - 1] = h
                written[a - 1] = True
        rows.append(np.atleast_1d(np.asarray(output(h[None, :])).ravel().astype(float)))
    return np.stack(rows) if rows else np.zeros((0, 1))


def suffix_convergence_probe(reservoir: Reservoir, table: SymbolTable, T: int) -> float:
    """Distance between the states of a^T $ a^T and b a^T $ a^T.

    The two words differ only in a prefix symbol, then share 2T + 1
    symbols.  For contractive reservoirs the returned distance decays
    geometrically in the shared suffix length: the reservoir literally
    forgets which word it is reading, even though only one of the two is
    a palindrome.
    """
    if T < 1:
        raise ValueError("T must be positive")
    base = ["a"] * T + ["$"] + ["a"] * T
    h_plain = reservoir.encode_sequence(table.encode_word(base))
    h_marked = reservoir.encode_sequence(table.encode_word(["b"] + base))
    return float(np.linalg.norm(h_plain - h_marked))
