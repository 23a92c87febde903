"""Tests for grammars, sampling, and benchmark dataset construction."""

import itertools

import numpy as np
import pytest

from rsm.lr1 import parse, parse_with_trace
from rsm.tasks import (COPY_BITS, COPY_CHANNELS, COPY_PAD_HEIGHT, LANGUAGE_NAMES,
                       PCFG, TASK_NAMES, SamplingExhaustedError, copy_symbol_table,
                       corrupt_word, enumerate_words, language_spec,
                       make_language_task, make_task, sample_words)


class TestPCFG:
    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            PCFG({"S": [("ab", 0.5), ("aSb", 0.4)]}, "S")

    def test_start_needs_productions(self):
        with pytest.raises(ValueError, match="start"):
            PCFG({"S": [("ab", 1.0)]}, "T")

    def test_unproductive_nonterminal_rejected(self):
        with pytest.raises(ValueError, match="derive"):
            PCFG({"S": [("aS", 1.0)]}, "S")

    def test_sample_respects_symbol_bound(self, rng):
        grammar = language_spec("anbn").grammar
        for _ in range(200):
            word = grammar.sample(rng, max_symbols=6)
            assert word is None or len(word) <= 6

    def test_terminals_inferred(self):
        grammar = language_spec("json").grammar
        assert set(grammar.terminals) == {"{", "}", "[", "]", "n", "s", "k", ":", ","}


class TestSampling:
    def test_window_is_respected(self, rng):
        grammar = language_spec("dyck1").grammar
        words = sample_words(grammar, 50, 4, 10, rng)
        assert len(words) == 50
        assert all(4 <= len(w) <= 10 for w in words)

    def test_impossible_window_exhausts(self, rng):
        grammar = language_spec("anbn").grammar   # only even lengths
        with pytest.raises(SamplingExhaustedError):
            sample_words(grammar, 1, 3, 3, rng, max_draws=500)

    def test_corruptions_are_rejected_words(self, rng):
        spec = language_spec("dyck2")
        for word in sample_words(spec.grammar, 20, 2, 16, rng):
            bad = corrupt_word(word, spec.automaton, rng)
            assert parse(spec.automaton, bad) == 0


class TestEnumeration:
    def test_anbn_closed_form(self):
        got = enumerate_words(language_spec("anbn").grammar, 8)
        assert got == {tuple("ab"), tuple("aabb"), tuple("aaabbb"), tuple("aaaabbbb")}

    def test_dyck1_closed_form(self):
        got = enumerate_words(language_spec("dyck1").grammar, 4)
        assert got == {(), ("(", ")"), ("(", "(", ")", ")"), ("(", ")", "(", ")")}

    def test_latch_matches_brute_force(self):
        got = enumerate_words(language_spec("latch").grammar, 3)
        expected = {w for length in range(4)
                    for w in itertools.product("01", repeat=length)
                    if w.count("1") % 2 == 1}
        assert got == expected

    def test_grammar_and_automaton_agree_on_small_words(self):
        # The grammars drive sampling and enumeration; the automata
        # drive annotation and acceptance.  They must define the same
        # languages over non-empty words (the bracket grammars derive
        # the empty word, which no benchmark draws and the recognizers
        # reject by construction: an empty stack never reduces).
        for name, depth in (("latch", 7), ("anbn", 8), ("palindrome", 7),
                            ("dyck1", 8), ("dyck2", 6), ("json", 6)):
            spec = language_spec(name)
            members = enumerate_words(spec.grammar, depth)
            for word in members:
                if word:
                    assert parse(spec.automaton, word) == 1, (name, word)
            terminals = spec.automaton.table.terminals
            if len(terminals) ** depth <= 3000:
                for length in range(1, depth + 1):
                    for word in itertools.product(terminals, repeat=length):
                        assert parse(spec.automaton, word) == (word in members), (name, word)


class TestLanguageDatasets:
    def test_shapes_and_membership_split(self):
        ds = make_language_task("dyck2", seed=3, train_count=20, test_count=10,
                                train_window=(1, 20), test_window=(20, 40))
        assert ds.out_mode == "classifier"
        assert len(ds.train) == 20 and len(ds.test_inputs) == 10
        automaton = ds.meta["automaton"]
        for word, ann in zip(ds.meta["train_words"], ds.train):
            assert ann.outputs[-1, 0] == parse(automaton, word)
        members = ds.meta["train_words"][:10]
        corrupted = ds.meta["train_words"][10:]
        assert all(parse(automaton, w) == 1 for w in members)
        assert all(parse(automaton, w) == 0 for w in corrupted)
        assert all(parse(automaton, w) == 1 for w in ds.meta["test_words"])
        for x, y in zip(ds.test_inputs, ds.test_targets):
            assert 20 <= len(x) <= 40
            assert y.shape == (len(x) + 1, 1)

    def test_latch_prefix_outputs(self):
        spec = language_spec("latch")
        trace = parse_with_trace(spec.automaton, list("010"))
        assert trace.outputs == [0, 0, 1, 1]

    def test_determinism(self):
        a = make_language_task("anbn", seed=7, train_count=10, test_count=5)
        b = make_language_task("anbn", seed=7, train_count=10, test_count=5)
        assert a.meta["train_words"] == b.meta["train_words"]
        assert all(np.array_equal(x, y) for x, y in zip(a.test_inputs, b.test_inputs))


class TestCopyTasks:
    def test_symbol_table_layout(self):
        table = copy_symbol_table()
        assert table.terminals == ("eos",)
        assert table.nonterminals == ("S",)
        assert np.argmax(table.encode("eos")) == COPY_BITS
        assert np.argmax(table.encode("S")) == COPY_CHANNELS - 1

    def test_annotation_hand_check(self):
        ds = make_task("repeat_copy", seed=0, train_count=1, test_count=1)
        table = ds.table
        from rsm.tasks import _copy_annotation
        bits = np.array([[1, 0, 1, 1, 0, 0, 1, 0],
                         [0, 1, 1, 0, 1, 0, 0, 1],
                         [1, 1, 0, 0, 0, 1, 1, 0]], dtype=float)
        ann = _copy_annotation(bits, repeats=2, table=table)
        assert ann.inputs.shape == (11, COPY_CHANNELS)
        assert ann.outputs.shape == (12, COPY_BITS)
        assert np.array_equal(np.flatnonzero(ann.inputs[:, COPY_BITS] > 0), [3, 7])
        assert np.all(ann.inputs[:3, COPY_BITS] == -1.0)
        pad = table.encode("S")
        refill = [(0, pad)] * (COPY_PAD_HEIGHT - 3) + [(0, None)]
        def same(a, b):
            return len(a) == len(b) and all(
                ja == jb and (ca is None) == (cb is None)
                and (ca is None or np.array_equal(ca, cb))
                for (ja, ca), (jb, cb) in zip(a, b))
        assert same(ann.actions[3], refill)
        assert same(ann.actions[7], [(COPY_PAD_HEIGHT + 1, None)] + refill)
        assert all(same(ann.actions[t], [(0, None)])
                   for t in range(12) if t not in (3, 7))
        assert np.array_equal(ann.outputs[4:7], bits)
        assert np.array_equal(ann.outputs[8:11], bits)
        assert not ann.outputs[[0, 1, 2, 3, 7, 11]].any()
        assert np.all(ann.shifts == 1)

    def test_due_bit_sits_at_fixed_depth(self):
        # Replay the recorded actions symbolically and confirm the
        # payload geometry: whenever bit i of the payload is due, the
        # stack is exactly COPY_PAD_HEIGHT + 1 + i tall and the due bit
        # sits COPY_PAD_HEIGHT + 1 cells below the top.
        from rsm.tasks import _copy_annotation
        table = copy_symbol_table()
        rng = np.random.default_rng(0)
        for L, R in ((1, 3), (4, 2), (10, 12), (19, 1), (20, 1)):
            bits = rng.integers(0, 2, size=(L, COPY_BITS)).astype(float)
            ann = _copy_annotation(bits, repeats=R, table=table)
            due = {}
            for k in range(R):
                pos = L + k * (L + 1)
                for i in range(L):
                    due[pos + 1 + i] = i
            stack = []
            for t in range(ann.steps):
                for pop_count, code in ann.actions[t]:
                    if pop_count:
                        del stack[len(stack) - pop_count:]
                    if code is not None:
                        stack.append(code)
                if t in due:
                    i = due[t]
                    assert len(stack) == COPY_PAD_HEIGHT + 1 + i
                    assert np.array_equal(
                        stack[-(COPY_PAD_HEIGHT + 1)][:COPY_BITS], bits[i])
                x_t = ann.inputs[t] if t < len(ann.inputs) else np.zeros(COPY_CHANNELS)
                if ann.shifts[t]:
                    stack.append(x_t)

    def test_inclusive_length_bounds(self):
        ds = make_task("copy", seed=1, train_count=300, test_count=2)
        lengths = [(len(a.inputs) - 1) // 2 for a in ds.train]
        assert max(lengths) == 20
        assert min(lengths) == 1

    def test_repeat_bounds_and_forced_extrapolation(self):
        ds = make_task("repeat_copy", seed=2, train_count=200, test_count=50)
        train_markers = [int(np.sum(a.inputs[:, COPY_BITS] > 0)) for a in ds.train]
        assert max(train_markers) == 10
        test_markers = [int(np.sum(x[:, COPY_BITS] > 0)) for x in ds.test_inputs]
        assert test_markers[-1] == 20
        assert max(test_markers) == 20

    def test_determinism(self):
        a = make_task("copy", seed=5, train_count=10, test_count=10)
        b = make_task("copy", seed=5, train_count=10, test_count=10)
        assert all(np.array_equal(x.inputs, y.inputs) for x, y in zip(a.train, b.train))


class TestDispatch:
    def test_all_names_build(self):
        for name in TASK_NAMES:
            ds = make_task(name, seed=0, train_count=4, test_count=2)
            assert ds.name == name
            assert len(ds.train) == 4

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            make_task("sorting")

    def test_language_names_cover_seven(self):
        assert len(LANGUAGE_NAMES) == 7
        assert set(LANGUAGE_NAMES) < set(TASK_NAMES)
