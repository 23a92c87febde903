"""Symbol tables: named symbols with vector codes.

Every sequence model in this package consumes vectors, while grammars and
stack traces are written in terms of named symbols.  A :class:`SymbolTable`
is the bridge: it registers terminal and nonterminal names together with
their code vectors and supports nearest-code decoding.  The zero vector is
deliberately left unregistered; it is reserved as the "no symbol" / "no
push" signal throughout.
"""

from __future__ import annotations

import json

import numpy as np


class AmbiguousSymbolError(ValueError):
    """Raised when a vector sits within tolerance of two registered codes."""


class UnknownSymbolError(KeyError):
    """Raised when a name is not registered in the table."""


class SymbolTable:
    """Registry of named symbols and their code vectors.

    Parameters
    ----------
    terminals:
        Mapping from terminal name to its code vector.
    nonterminals:
        Mapping from nonterminal name to its code vector.  Nonterminal
        codes must be nonzero, otherwise pushes of that symbol would be
        indistinguishable from "push nothing".

    All codes must share one dimension ``n``.  Insertion order is
    preserved and meaningful: classifiers map class indices to symbols
    through it.
    """

    def __init__(self, terminals: dict[str, np.ndarray], nonterminals: dict[str, np.ndarray]):
        names = list(terminals) + list(nonterminals)
        if len(set(names)) != len(names):
            raise ValueError("terminal and nonterminal names must be disjoint")
        if not names:
            raise ValueError("symbol table needs at least one symbol")
        self._codes: dict[str, np.ndarray] = {}
        dims = set()
        for name, code in list(terminals.items()) + list(nonterminals.items()):
            vec = np.asarray(code, dtype=float).copy()
            if vec.ndim != 1:
                raise ValueError(f"code for {name!r} must be a vector")
            dims.add(vec.shape[0])
            vec.flags.writeable = False
            self._codes[name] = vec
        if len(dims) != 1:
            raise ValueError(f"codes have mixed dimensions {sorted(dims)}")
        self.n = dims.pop()
        self.terminals = tuple(terminals)
        self.nonterminals = tuple(nonterminals)
        for name in self.nonterminals:
            if not np.any(self._codes[name]):
                raise ValueError(f"nonterminal {name!r} has the zero vector as code; "
                                 "zero is reserved for 'no push'")

    @classmethod
    def one_hot(cls, terminals: list[str] | tuple[str, ...],
                nonterminals: list[str] | tuple[str, ...]) -> "SymbolTable":
        """Build a table with one-hot codes, terminals first."""
        names = list(terminals) + list(nonterminals)
        eye = np.eye(len(names))
        codes = {name: eye[i] for i, name in enumerate(names)}
        return cls({t: codes[t] for t in terminals},
                   {nt: codes[nt] for nt in nonterminals})

    @property
    def symbols(self) -> tuple[str, ...]:
        return self.terminals + self.nonterminals

    def is_terminal(self, name: str) -> bool:
        return name in set(self.terminals)

    def encode(self, name: str) -> np.ndarray:
        """Return the (read-only) code vector of ``name``."""
        try:
            return self._codes[name]
        except KeyError:
            raise UnknownSymbolError(name) from None

    def encode_word(self, names) -> np.ndarray:
        """Stack the codes of a symbol sequence into a (T, n) array."""
        if len(names) == 0:
            return np.zeros((0, self.n))
        return np.stack([self.encode(name) for name in names])

    def decode(self, vector: np.ndarray, tol: float = 1e-6) -> str | None:
        """Name of the registered code within ``tol`` of ``vector``, else None.

        Raises :class:`AmbiguousSymbolError` if more than one code
        qualifies, which happens when ``tol`` exceeds half the minimum
        pairwise distance between codes.
        """
        vector = np.asarray(vector, dtype=float)
        hits = [name for name, code in self._codes.items()
                if np.linalg.norm(code - vector) <= tol]
        if len(hits) > 1:
            raise AmbiguousSymbolError(f"vector matches {hits} at tol={tol}")
        return hits[0] if hits else None

    def decode_word(self, vectors: np.ndarray, tol: float = 1e-6) -> list[str | None]:
        return [self.decode(v, tol) for v in vectors]

    def code_matrix(self, names=None) -> np.ndarray:
        """Codes of ``names`` (default: all symbols) as a matrix, row per symbol."""
        if names is None:
            names = self.symbols
        return self.encode_word(names)

    def to_json(self) -> str:
        payload = {
            "n": int(self.n),
            "terminals": [{"name": s, "code": self._codes[s].tolist()} for s in self.terminals],
            "nonterminals": [{"name": s, "code": self._codes[s].tolist()} for s in self.nonterminals],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SymbolTable":
        payload = json.loads(text)
        terminals = {e["name"]: np.array(e["code"], dtype=float) for e in payload["terminals"]}
        nonterminals = {e["name"]: np.array(e["code"], dtype=float) for e in payload["nonterminals"]}
        table = cls(terminals, nonterminals)
        if table.n != payload["n"]:
            raise ValueError("declared dimension does not match codes")
        return table

    def __repr__(self) -> str:
        return (f"SymbolTable(terminals={list(self.terminals)}, "
                f"nonterminals={list(self.nonterminals)}, n={self.n})")
