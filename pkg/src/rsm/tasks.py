"""Benchmark task definitions and dataset generation.

Nine tasks: seven symbol languages (balanced-bracket variants, a^n b^n,
marked palindromes, a JSON skeleton, and a parity latch) and two
vector-sequence memory tasks (copy, repeat copy).

Each language owns a shift-reduce automaton (the annotation teacher and
ground truth) and a probabilistic grammar (the positive-example
sampler).  Training sets also carry single-symbol corruptions
re-checked against the automaton.  The copy tasks have no grammar; their
annotations are written directly from the known stack strategy: park
the payload at the stack bottom under a fixed amount of padding, so the
target bit always sits at the same depth when it is due.

Desired outputs for language tasks follow the annotation convention:
the output flag at step t reports whether the stack holds exactly one
accepting nonterminal after the step's reductions, i.e. whether the
input consumed so far forms a member word.  The flag for the full word
appears at step T+1, when the end terminator has been processed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .alphabet import SymbolTable
from .lr1 import Automaton, ParseTrace, parse, parse_with_trace, rules_from_strings
from .stack_machine import Annotation


class SamplingExhaustedError(RuntimeError):
    """Rejection sampling hit its draw budget without filling the request."""


# ---------------------------------------------------------------------------
# probabilistic grammars


class PCFG:
    """Context-free grammar with production probabilities.

    ``productions`` maps a nonterminal to a list of (rhs, probability)
    pairs; an rhs is a string of single-character symbol names (possibly
    empty).  Symbols without productions are terminals.  The same object
    doubles as a plain CFG for exhaustive enumeration, where the
    probabilities are ignored.
    """

    def __init__(self, productions: dict[str, list[tuple[str, float]]], start: str):
        self.start = start
        self.productions: dict[str, list[tuple[tuple[str, ...], float]]] = {}
        for nt, prods in productions.items():
            rows = [(tuple(rhs), float(p)) for rhs, p in prods]
            total = sum(p for _, p in rows)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"probabilities of {nt!r} sum to {total}, not 1")
            self.productions[nt] = rows
        if start not in self.productions:
            raise ValueError(f"start symbol {start!r} has no productions")
        self.terminals = sorted({s for prods in self.productions.values()
                                 for rhs, _ in prods for s in rhs
                                 if s not in self.productions})
        self._min_yield = self._solve_min_yields()

    def _solve_min_yields(self) -> dict[str, float]:
        my = {nt: float("inf") for nt in self.productions}
        changed = True
        while changed:
            changed = False
            for nt, prods in self.productions.items():
                for rhs, _ in prods:
                    total = sum(1 if s not in self.productions else my[s] for s in rhs)
                    if total < my[nt]:
                        my[nt] = total
                        changed = True
        bad = [nt for nt, v in my.items() if not np.isfinite(v)]
        if bad:
            raise ValueError(f"nonterminals {bad} derive no terminal word")
        return my

    def min_yield(self, symbol: str) -> float:
        return self._min_yield.get(symbol, 1)

    def sample(self, rng: np.random.Generator, max_symbols: int | None = None) -> list[str] | None:
        """One leftmost derivation; None if it must exceed ``max_symbols``."""
        out: list[str] = []
        work = [self.start]
        bound = self.min_yield(self.start)
        while work:
            if max_symbols is not None and bound > max_symbols:
                return None
            sym = work.pop()
            if sym not in self.productions:
                out.append(sym)
                continue
            prods = self.productions[sym]
            u = rng.random()
            acc = 0.0
            chosen = prods[-1][0]
            for rhs, p in prods:
                acc += p
                if u < acc:
                    chosen = rhs
                    break
            work.extend(reversed(chosen))
            bound += sum(self.min_yield(s) for s in chosen) - self.min_yield(sym)
        return out


def sample_words(grammar: PCFG, count: int, min_len: int, max_len: int,
                 rng: np.random.Generator, max_draws: int = 1_000_000) -> list[list[str]]:
    """Rejection-sample ``count`` words with lengths in [min_len, max_len]."""
    if min_len > max_len or min_len < 0:
        raise ValueError("need 0 <= min_len <= max_len")
    words = []
    draws = 0
    while len(words) < count:
        draws += 1
        if draws > max_draws:
            raise SamplingExhaustedError(
                f"{draws - 1} draws produced only {len(words)}/{count} words "
                f"in the window [{min_len}, {max_len}]")
        word = grammar.sample(rng, max_symbols=max_len)
        if word is not None and min_len <= len(word) <= max_len:
            words.append(word)
    return words


def enumerate_words(grammar: PCFG, max_len: int) -> set[tuple[str, ...]]:
    """All terminal words of length <= max_len the grammar derives.

    Breadth-first closure over sentential forms, pruned by minimal
    achievable yield; independent of any shift-reduce machinery, which
    is the point: it serves as the ground-truth oracle against the
    automata.
    """
    def min_total(form: tuple[str, ...]) -> float:
        return sum(grammar.min_yield(s) for s in form)

    results: set[tuple[str, ...]] = set()
    seen = {(grammar.start,)}
    queue: deque[tuple[str, ...]] = deque(seen)
    while queue:
        form = queue.popleft()
        nt_pos = next((i for i, s in enumerate(form) if s in grammar.productions), None)
        if nt_pos is None:
            results.add(form)
            continue
        for rhs, _ in grammar.productions[form[nt_pos]]:
            new = form[:nt_pos] + rhs + form[nt_pos + 1:]
            if min_total(new) <= max_len and new not in seen:
                seen.add(new)
                queue.append(new)
    return results


# ---------------------------------------------------------------------------
# language definitions


def _dyck_members(order: int) -> tuple[Automaton, PCFG]:
    pairs = [("(", ")"), ("[", "]"), ("{", "}")][:order]
    terminals = [b for pair in pairs for b in pair]
    table = SymbolTable.one_hot(terminals, ["S"])
    entries = [("SS", "", 2, "S")]
    entries += [(f"{o}S{c}", "", 3, "S") for o, c in pairs]
    entries += [(o, c, 0, "S") for o, c in pairs]
    automaton = Automaton(table=table, rules=rules_from_strings(entries), accepting=frozenset("S"))
    open_prob = 0.49 / order
    grammar = PCFG({"S": [("", 0.51)] + [(f"{o}S{c}S", open_prob) for o, c in pairs]}, "S")
    return automaton, grammar


def _anbn_members() -> tuple[Automaton, PCFG]:
    table = SymbolTable.one_hot(["a", "b"], ["S"])
    automaton = Automaton(table=table,
                          rules=rules_from_strings([("aSb", "", 3, "S"), ("a", "b", 0, "S")]),
                          accepting=frozenset("S"))
    grammar = PCFG({"S": [("ab", 0.05), ("aSb", 0.95)]}, "S")
    return automaton, grammar


def _palindrome_members() -> tuple[Automaton, PCFG]:
    table = SymbolTable.one_hot(["a", "b", "$"], ["S"])
    automaton = Automaton(table=table,
                          rules=rules_from_strings([("$", "", 1, "S"), ("aSa", "", 3, "S"),
                                                    ("bSb", "", 3, "S")]),
                          accepting=frozenset("S"))
    grammar = PCFG({"S": [("$", 0.04), ("aSa", 0.48), ("bSb", 0.48)]}, "S")
    return automaton, grammar


def _json_members() -> tuple[Automaton, PCFG]:
    # Symbol-level skeleton: n = number, s = string, k = object key.
    table = SymbolTable.one_hot(["{", "}", "[", "]", "n", "s", "k", ":", ","], ["V", "O", "A"])
    entries = [
        ("{}", "", 2, "V"),
        ("[]", "", 2, "V"),
        ("{O}", "", 3, "V"),
        ("[A]", "", 3, "V"),
        ("n", "", 1, "V"),
        ("s", "", 1, "V"),
        ("k:V,O", "", 5, "O"),
        ("k:V", "}", 3, "O"),
        ("V,A", "", 3, "A"),
        ("V", "]", 1, "A"),
    ]
    automaton = Automaton(table=table, rules=rules_from_strings(entries), accepting=frozenset("V"))
    grammar = PCFG({
        "V": [("{}", 0.08), ("[]", 0.07), ("{O}", 0.18), ("[A]", 0.17), ("n", 0.30), ("s", 0.20)],
        "O": [("k:V", 0.45), ("k:V,O", 0.55)],
        "A": [("V", 0.45), ("V,A", 0.55)],
    }, "V")
    return automaton, grammar


def _latch_members() -> tuple[Automaton, PCFG]:
    # State S = odd number of ones so far (accepting), A = even.  The
    # single-symbol rules bootstrap the state from the first input; a
    # rule list without the bare-1 rule would reject "1" itself, so it
    # is included even though it is easy to overlook.
    table = SymbolTable.one_hot(["0", "1"], ["S", "A"])
    entries = [("S0", "", 2, "S"), ("S1", "", 2, "A"), ("A0", "", 2, "A"),
               ("A1", "", 2, "S"), ("0", "", 1, "A"), ("1", "", 1, "S")]
    automaton = Automaton(table=table, rules=rules_from_strings(entries), accepting=frozenset("S"))
    grammar = PCFG({
        "E": [("0E", 0.48), ("1D", 0.52)],          # even ones so far
        "D": [("0D", 0.48), ("1E", 0.46), ("", 0.06)],  # odd ones so far
    }, "E")
    return automaton, grammar


@dataclass(frozen=True)
class LanguageSpec:
    name: str
    automaton: Automaton
    grammar: PCFG


def language_spec(name: str) -> LanguageSpec:
    factories = {
        "dyck1": lambda: _dyck_members(1),
        "dyck2": lambda: _dyck_members(2),
        "dyck3": lambda: _dyck_members(3),
        "anbn": _anbn_members,
        "palindrome": _palindrome_members,
        "json": _json_members,
        "latch": _latch_members,
    }
    if name not in factories:
        raise KeyError(f"unknown language {name!r}; choose from {sorted(factories)}")
    automaton, grammar = factories[name]()
    return LanguageSpec(name=name, automaton=automaton, grammar=grammar)


LANGUAGE_NAMES = ("latch", "anbn", "palindrome", "dyck1", "dyck2", "dyck3", "json")


def corrupt_word(word: list[str], automaton: Automaton, rng: np.random.Generator,
                 max_tries: int = 500) -> list[str]:
    """Mutate one symbol (substitute, delete, or insert) until the result
    is rejected by the automaton."""
    terminals = automaton.table.terminals
    for _ in range(max_tries):
        w = list(word)
        op = int(rng.integers(0, 3)) if w else 2
        if op == 0:
            i = int(rng.integers(len(w)))
            w[i] = terminals[int(rng.integers(len(terminals)))]
        elif op == 1:
            i = int(rng.integers(len(w)))
            del w[i]
        else:
            i = int(rng.integers(len(w) + 1))
            w.insert(i, terminals[int(rng.integers(len(terminals)))])
        if parse(automaton, w) == 0:
            return w
    raise SamplingExhaustedError(f"could not corrupt {word} into a negative example")


def annotation_from_trace(trace: ParseTrace, table: SymbolTable) -> Annotation:
    """Turn a recognizer trace into stack-machine supervision."""
    actions = [[(j, None if name is None else table.encode(name)) for j, name in step]
               for step in trace.actions]
    return Annotation(inputs=table.encode_word(trace.word), actions=actions,
                      shifts=np.array(trace.shifts, dtype=int),
                      outputs=np.array(trace.outputs, dtype=float)[:, None])


# ---------------------------------------------------------------------------
# datasets


@dataclass
class TaskDataset:
    """Train annotations plus evaluation pairs for one task."""

    name: str
    table: SymbolTable
    out_mode: str                       # how c_out should be trained
    train: list[Annotation]
    test_inputs: list[np.ndarray]
    test_targets: list[np.ndarray]      # one (T_i + 1, L) array per test sequence
    meta: dict = field(default_factory=dict)


def make_language_task(name: str, seed: int = 0, train_count: int = 100, test_count: int = 100,
                       train_window: tuple[int, int] = (1, 50),
                       test_window: tuple[int, int] = (50, 120)) -> TaskDataset:
    """Sample a language dataset.

    Training mixes grammatical words with single-edit corruptions in
    equal parts, annotated by the recognizer, so the fitted heads see
    rejecting as well as accepting states.  Test sequences carry only
    inputs and per-step membership targets and are drawn from the
    grammar alone, at lengths past the training window.
    """
    spec = language_spec(name)
    rng = np.random.default_rng(seed)
    table = spec.automaton.table

    positives = sample_words(spec.grammar, train_count - train_count // 2,
                             *train_window, rng)
    negatives = [corrupt_word(w, spec.automaton, rng) for w in
                 sample_words(spec.grammar, train_count // 2, *train_window, rng)]
    train_words = positives + negatives
    test_words = sample_words(spec.grammar, test_count, *test_window, rng)
    train = [annotation_from_trace(parse_with_trace(spec.automaton, w), table)
             for w in train_words]
    test_traces = [parse_with_trace(spec.automaton, w) for w in test_words]
    return TaskDataset(
        name=name, table=table, out_mode="classifier", train=train,
        test_inputs=[table.encode_word(w) for w in test_words],
        test_targets=[np.array(tr.outputs, dtype=float)[:, None] for tr in test_traces],
        meta={"automaton": spec.automaton, "grammar": spec.grammar, "seed": seed,
              "train_words": train_words, "test_words": test_words},
    )


# Copy-task geometry.  Eight payload channels, one end-of-sequence
# channel (-1 while the payload streams, +1 on the marker step), and one
# channel reserved for the padding nonterminal.  The stack is padded to
# this height when the marker arrives, so during recall the due bit is
# always this many cells below the top.
COPY_CHANNELS = 10
COPY_BITS = 8
COPY_PAD_HEIGHT = 20


def copy_symbol_table() -> SymbolTable:
    eos = np.zeros(COPY_CHANNELS)
    eos[COPY_BITS] = 1.0
    pad = np.zeros(COPY_CHANNELS)
    pad[COPY_CHANNELS - 1] = 1.0
    return SymbolTable({"eos": eos}, {"S": pad})


def _copy_annotation(bits: np.ndarray, repeats: int, table: SymbolTable) -> Annotation:
    """Inputs, outputs, and stack actions for one (repeat-)copy instance."""
    L = len(bits)
    pad_code = table.encode("S")
    T = L + repeats * (L + 1)
    inputs = np.zeros((T, COPY_CHANNELS))
    inputs[:L, :COPY_BITS] = bits
    inputs[:L, COPY_BITS] = -1.0
    outputs = np.zeros((T + 1, COPY_BITS))
    actions: list[list[tuple[int, np.ndarray | None]]] = [[(0, None)] for _ in range(T + 1)]
    pos = L
    for k in range(repeats):
        inputs[pos, COPY_BITS] = 1.0
        outputs[pos + 1:pos + 1 + L] = bits
        refill = [(0, pad_code)] * (COPY_PAD_HEIGHT - L) + [(0, None)]
        if k == 0:
            actions[pos] = refill
        else:
            # Clear the stale recall block: the L zero vectors shifted
            # during the previous recall, the previous marker, and the
            # padding above the payload -- one pop of constant size.
            actions[pos] = [(COPY_PAD_HEIGHT + 1, None)] + refill
        pos += L + 1
    return Annotation(inputs=inputs, actions=actions, shifts=np.ones(T + 1, dtype=int),
                      outputs=outputs)


def make_copy_task(seed: int = 0, train_count: int = 100, test_count: int = 100,
                   max_len: int = 20) -> TaskDataset:
    """Store a bit sequence, then reproduce it after the marker.

    Payload lengths run from 1 to ``max_len`` inclusive.  At the full
    length the payload alone reaches the pad height, so the marker step
    pushes nothing and the padding function has to call "stop" on its
    very first query.
    """
    rng = np.random.default_rng(seed)
    table = copy_symbol_table()

    def build(count):
        anns = []
        for _ in range(count):
            L = int(rng.integers(1, max_len + 1))
            bits = rng.integers(0, 2, size=(L, COPY_BITS)).astype(float)
            anns.append(_copy_annotation(bits, repeats=1, table=table))
        return anns

    train = build(train_count)
    test = build(test_count)
    return TaskDataset(name="copy", table=table, out_mode="ridge", train=train,
                       test_inputs=[a.inputs for a in test],
                       test_targets=[a.outputs for a in test],
                       meta={"seed": seed, "max_len": max_len})


def make_repeat_copy_task(seed: int = 0, train_count: int = 100, test_count: int = 100,
                          max_len: int = 10, train_max_repeats: int = 10,
                          test_max_repeats: int = 20) -> TaskDataset:
    """Copy with multiple recalls; tests include more repeats than seen
    in training.

    Length and repeat bounds are inclusive, like ``make_copy_task``.
    """
    rng = np.random.default_rng(seed)
    table = copy_symbol_table()

    def build(count, max_repeats):
        anns = []
        for _ in range(count):
            L = int(rng.integers(1, max_len + 1))
            R = int(rng.integers(1, max_repeats + 1))
            bits = rng.integers(0, 2, size=(L, COPY_BITS)).astype(float)
            anns.append(_copy_annotation(bits, repeats=R, table=table))
        return anns

    train = build(train_count, train_max_repeats)
    test = build(test_count, test_max_repeats)
    # Guarantee the extrapolation regime is actually present.
    bits = rng.integers(0, 2, size=(int(rng.integers(1, max_len + 1)), COPY_BITS)).astype(float)
    test[-1] = _copy_annotation(bits, repeats=test_max_repeats, table=table)
    return TaskDataset(name="repeat_copy", table=table, out_mode="ridge", train=train,
                       test_inputs=[a.inputs for a in test],
                       test_targets=[a.outputs for a in test],
                       meta={"seed": seed, "max_len": max_len,
                             "train_max_repeats": train_max_repeats,
                             "test_max_repeats": test_max_repeats})


TASK_NAMES = LANGUAGE_NAMES + ("copy", "repeat_copy")


def make_task(name: str, seed: int = 0, **overrides) -> TaskDataset:
    """Dataset factory for every benchmark task by name."""
    if name in LANGUAGE_NAMES:
        return make_language_task(name, seed=seed, **overrides)
    if name == "copy":
        return make_copy_task(seed=seed, **overrides)
    if name == "repeat_copy":
        return make_repeat_copy_task(seed=seed, **overrides)
    raise KeyError(f"unknown task {name!r}; choose from {TASK_NAMES}")
