"""Tests for annotation replay, machine fitting, and the run loop.

The central oracle is ``reference_collect``: a deliberately naive
single-sequence replay that refolds the stack encoding from scratch for
every recorded row.  The library's lockstep, state-caching collector has
to agree with it exactly.
"""

import numpy as np
import pytest

from rsm.classifiers import KernelClassifier, LinearReadout
from rsm.lr1 import parse_with_trace
from rsm.reservoir import build_random
from rsm.stack_machine import (Annotation, AnnotationError, CachedStack,
                               RunawayLoopError, StackMachine, _codes_to_classes,
                               _subsample_rows, collect_training, fit, run,
                               run_batch, training_fidelity)
from rsm.tasks import annotation_from_trace, language_spec, make_language_task


def fold_stack(reservoir, codes):
    g = np.zeros(reservoir.m)
    for code in codes:
        g = reservoir.step(g, code)
    return g


def reference_collect(reservoir, ann):
    """Naive replay of one annotation: no caching, no lockstep."""
    act_rows, act_pops, act_codes = [], [], []
    step_rows, step_shifts, step_outputs = [], [], []
    h = np.zeros(reservoir.m)
    stack = []
    T = len(ann.inputs)
    for t in range(T + 1):
        x_t = ann.inputs[t] if t < T else np.zeros(reservoir.n)
        h = reservoir.step(h, x_t)
        for pop_count, code in ann.actions[t]:
            act_rows.append(np.concatenate([h, fold_stack(reservoir, stack)]))
            act_pops.append(pop_count)
            act_codes.append(np.zeros(reservoir.n) if code is None
                             else np.asarray(code, dtype=float))
            if pop_count:
                del stack[len(stack) - min(pop_count, len(stack)):]
            if code is not None:
                stack.append(np.asarray(code, dtype=float))
        step_rows.append(np.concatenate([h, fold_stack(reservoir, stack)]))
        step_shifts.append(int(ann.shifts[t]))
        step_outputs.append(np.asarray(ann.outputs[t], dtype=float))
        if ann.shifts[t]:
            stack.append(np.asarray(x_t, dtype=float))
    return (np.array(act_rows), np.array(act_pops), np.array(act_codes),
            np.array(step_rows), np.array(step_shifts), np.array(step_outputs))


def constant_classifier(value, dim):
    """A kernel classifier that predicts ``value`` for every row."""
    return KernelClassifier(support_points=np.zeros((1, dim)),
                            dual_coef=np.ones((1, 1)), gamma=1.0,
                            regularization=1.0, classes=np.array([value]))


class ScriptedPops:
    """Stand-in classifier that replays a fixed list of pop counts."""

    def __init__(self, script, dim):
        self.script = list(script)
        self.support_points = np.zeros((1, dim))
        self.gamma = 1.0

    def predict(self, rows):
        return np.full(len(rows), self.script.pop(0), dtype=int)


@pytest.fixture
def small_reservoir():
    return build_random(16, 2, spectral_radius=0.9, input_scale=1.0, seed=5)


def synthetic_annotations(rng):
    c1 = np.array([0.0, 2.0])
    c2 = np.array([3.0, 0.0])
    a = Annotation(
        inputs=rng.normal(size=(2, 2)),
        actions=[[(0, None)],
                 [(1, c1), (0, None)],
                 [(2, None), (0, None)]],
        shifts=[1, 1, 0],
        outputs=np.zeros((3, 1)))
    b = Annotation(
        inputs=rng.normal(size=(4, 2)),
        actions=[[(0, None)],
                 [(0, c1), (0, None)],
                 [(1, None), (0, None)],
                 [(0, None)],
                 [(2, c2), (0, c1), (0, None)]],
        shifts=[1, 1, 1, 1, 0],
        outputs=np.ones((5, 1)))
    return a, b


class TestCollect:
    def test_matches_naive_replay_on_synthetic(self, small_reservoir, rng):
        for ann in synthetic_annotations(rng):
            data = collect_training(small_reservoir, ann)
            rows, pops, codes, srows, shifts, outs = reference_collect(small_reservoir, ann)
            assert np.allclose(data.action_states, rows, atol=1e-10)
            assert np.array_equal(data.pop_labels, pops)
            assert np.allclose(data.push_codes, codes)
            assert np.allclose(data.step_states, srows, atol=1e-10)
            assert np.array_equal(data.shift_labels, shifts)
            assert np.allclose(data.output_targets, outs)

    def test_matches_naive_replay_on_parser_annotation(self, anbn):
        reservoir = build_random(16, anbn.automaton.table.n, seed=5)
        trace = parse_with_trace(anbn.automaton, list("aaabbb"))
        ann = annotation_from_trace(trace, anbn.automaton.table)
        data = collect_training(reservoir, ann)
        rows, pops, codes, srows, shifts, outs = reference_collect(reservoir, ann)
        assert np.allclose(data.action_states, rows, atol=1e-10)
        assert np.array_equal(data.pop_labels, pops)
        assert np.allclose(data.push_codes, codes)
        assert np.allclose(data.step_states, srows, atol=1e-10)
        assert np.allclose(data.output_targets, outs)

    def test_lockstep_interleaving(self, small_reservoir, rng):
        anns = list(synthetic_annotations(rng))
        refs = [reference_collect(small_reservoir, ann) for ann in anns]
        data = collect_training(small_reservoir, anns)

        steps = [ann.steps for ann in anns]
        act_order, step_order = [], []
        counters = [0] * len(anns)
        for t in range(max(steps)):
            active = [i for i in range(len(anns)) if t < steps[i]]
            for tau in range(max(len(anns[i].actions[t]) for i in active)):
                for i in active:
                    if tau < len(anns[i].actions[t]):
                        act_order.append((i, counters[i]))
                        counters[i] += 1
            step_order.extend((i, t) for i in active)

        expected_rows = np.stack([refs[i][0][k] for i, k in act_order])
        expected_pops = np.array([refs[i][1][k] for i, k in act_order])
        expected_srows = np.stack([refs[i][3][t] for i, t in step_order])
        expected_shifts = np.array([refs[i][4][t] for i, t in step_order])
        assert np.allclose(data.action_states, expected_rows, atol=1e-10)
        assert np.array_equal(data.pop_labels, expected_pops)
        assert np.allclose(data.step_states, expected_srows, atol=1e-10)
        assert np.array_equal(data.shift_labels, expected_shifts)

    def test_row_count_formulas(self, small_reservoir, rng):
        anns = list(synthetic_annotations(rng))
        data = collect_training(small_reservoir, anns)
        assert len(data.action_states) == sum(
            len(step) for ann in anns for step in ann.actions)
        assert len(data.step_states) == sum(ann.steps for ann in anns)
        assert data.action_states.shape[1] == 2 * small_reservoir.m

    def test_recorded_stacks_match_parser(self, anbn):
        table = anbn.automaton.table
        reservoir = build_random(16, table.n, seed=5)
        for word in ("aabb", "abab", "ba"):
            trace = parse_with_trace(anbn.automaton, list(word))
            ann = annotation_from_trace(trace, table)
            data = collect_training(reservoir, ann, record_stacks=True)
            snaps = data.stack_snapshots[0]
            assert len(snaps) == trace.steps
            for t, snap in enumerate(snaps):
                decoded = [table.decode(c) for c in snap]
                expected = list(trace.stacks[t])
                if t == trace.steps - 1:
                    # The parser shifts its terminator symbol; the
                    # machine shifts the zero end-of-input vector,
                    # which decodes to None.
                    expected[-1] = None
                assert decoded == expected

    def test_empty_annotation_list_rejected(self, small_reservoir):
        with pytest.raises(ValueError):
            collect_training(small_reservoir, [])


class TestAnnotation:
    def test_validation_errors(self):
        inputs = np.zeros((2, 2))
        ok = [[(0, None)], [(0, None)], [(0, None)]]
        with pytest.raises(AnnotationError):
            Annotation(inputs=inputs, actions=ok[:2], shifts=[1, 1, 0],
                       outputs=np.zeros((3, 1)))
        with pytest.raises(AnnotationError):
            Annotation(inputs=inputs, actions=ok, shifts=[1, 1],
                       outputs=np.zeros((3, 1)))
        with pytest.raises(AnnotationError):
            Annotation(inputs=inputs, actions=[[(0, None)], [], [(0, None)]],
                       shifts=[1, 1, 0], outputs=np.zeros((3, 1)))
        with pytest.raises(AnnotationError):
            Annotation(inputs=inputs,
                       actions=[[(1, np.ones(2))], ok[1], ok[2]],
                       shifts=[1, 1, 0], outputs=np.zeros((3, 1)))
        with pytest.raises(AnnotationError):
            Annotation(inputs=inputs,
                       actions=[[(0, None), (1, np.ones(2)), (0, None)], ok[1], ok[2]],
                       shifts=[1, 1, 0], outputs=np.zeros((3, 1)))
        with pytest.raises(AnnotationError):
            Annotation(inputs=inputs,
                       actions=[[(-1, np.ones(2)), (0, None)], ok[1], ok[2]],
                       shifts=[1, 1, 0], outputs=np.zeros((3, 1)))

    def test_steps_property(self, rng):
        ann = synthetic_annotations(rng)[0]
        assert ann.steps == 3

    def test_dict_roundtrip(self, rng):
        for ann in synthetic_annotations(rng):
            back = Annotation.from_dict(ann.to_dict())
            assert np.allclose(back.inputs, ann.inputs)
            assert np.array_equal(back.shifts, ann.shifts)
            assert np.allclose(back.outputs, ann.outputs)
            assert len(back.actions) == len(ann.actions)
            for sa, sb in zip(ann.actions, back.actions):
                assert len(sa) == len(sb)
                for (ja, ca), (jb, cb) in zip(sa, sb):
                    assert ja == jb
                    assert (ca is None) == (cb is None)
                    if ca is not None:
                        assert np.allclose(ca, cb)

    def test_dict_roundtrip_empty_inputs(self):
        ann = Annotation(inputs=np.zeros((0, 3)), actions=[[(0, None)]],
                         shifts=[0], outputs=np.zeros((1, 1)))
        back = Annotation.from_dict(ann.to_dict(), n=3)
        assert back.inputs.shape == (0, 3)
        assert back.steps == 1


class TestCachedStack:
    def test_refold_consistency(self, small_reservoir, rng):
        stack = CachedStack(small_reservoir.m)
        for _ in range(60):
            if stack.height and rng.random() < 0.4:
                stack.pop(int(rng.integers(1, stack.height + 1)))
            else:
                code = rng.normal(size=2)
                stack.push(code, small_reservoir.step(stack.top_state, code))
            assert np.allclose(stack.top_state, stack.refold(small_reservoir), atol=1e-10)
        assert np.allclose(CachedStack(small_reservoir.m).top_state,
                           np.zeros(small_reservoir.m))


class TestLabelHelpers:
    def test_codes_to_classes(self, anbn):
        table = anbn.automaton.table
        nts = table.nonterminals
        codes = np.concatenate([np.zeros((1, table.n)), table.code_matrix(nts)])
        classes = _codes_to_classes(codes, table)
        assert classes[0] == 0
        assert list(classes[1:]) == list(range(1, len(nts) + 1))

    def test_codes_to_classes_rejects_unknown(self, anbn):
        table = anbn.automaton.table
        with pytest.raises(ValueError):
            _codes_to_classes(np.full((1, table.n), 0.37), table)

    def test_subsample_keeps_rare_labels_whole(self):
        labels = np.array([0] * 990 + [1] * 5 + [2] * 5)
        keep = _subsample_rows(labels, 100, seed=9)
        assert len(keep) == 100
        assert np.all(np.diff(keep) > 0)
        kept_labels = labels[keep]
        assert np.sum(kept_labels == 1) == 5
        assert np.sum(kept_labels == 2) == 5
        again = _subsample_rows(labels, 100, seed=9)
        assert np.array_equal(keep, again)
        assert len(_subsample_rows(labels, 5000, seed=9)) == 1000


class TestRunLoop:
    def make_machine(self, reservoir, c_pop=None, c_push=None, c_out=None):
        d = 2 * reservoir.m
        return StackMachine(
            reservoir=reservoir,
            c_pop=c_pop if c_pop is not None else constant_classifier(0, d),
            c_push=c_push if c_push is not None else constant_classifier(0, d),
            c_shift=constant_classifier(1, d),
            c_out=c_out if c_out is not None else constant_classifier(0, d),
            push_codes=np.concatenate([np.zeros((1, reservoir.n)),
                                       np.eye(reservoir.n)]))

    def test_inert_machine_equals_state_readout(self, small_reservoir, rng):
        from rsm.harness import state_rows
        m = small_reservoir.m
        W = np.zeros((3, 2 * m))
        W[:, :m] = rng.normal(size=(3, m))
        bias = rng.normal(size=3)
        readout = LinearReadout(weights=W, bias=bias, regularization=0.0)
        machine = self.make_machine(small_reservoir, c_out=readout)
        machine.out_mode = "ridge"
        blocks = [rng.normal(size=(T, 2)) for T in (4, 7)]
        outputs = run_batch(machine, blocks)
        for x, y in zip(blocks, outputs):
            states = state_rows(small_reservoir, [x])[0]
            assert np.allclose(y, states @ W[:, :m].T + bias, atol=1e-8)

    def test_run_matches_run_batch(self, small_reservoir, rng):
        machine = self.make_machine(small_reservoir)
        x = rng.normal(size=(5, 2))
        assert np.array_equal(run(machine, x), run_batch(machine, [x])[0])

    def test_runaway_push_raises(self, small_reservoir):
        machine = self.make_machine(
            small_reservoir, c_push=constant_classifier(1, 2 * small_reservoir.m))
        machine.max_inner_iterations = 16
        with pytest.raises(RunawayLoopError, match="16"):
            run_batch(machine, [np.ones((3, 2))])

    def test_empty_stack_pop_settles_with_underflow_flag(self, small_reservoir):
        # One real step plus the end step; the scripted readout asks to
        # pop five cells from an empty stack, which cannot change
        # anything, so the loop must settle immediately instead of
        # retrying until the budget trips.
        machine = self.make_machine(small_reservoir)
        machine.c_pop = ScriptedPops([5, 0], 2 * small_reservoir.m)
        outputs, diags = run_batch(machine, [np.ones((1, 2))], return_diagnostics=True)
        assert outputs[0].shape == (2, 1)
        assert diags[0].underflow is True
        assert diags[0].max_inner == 1

    def test_out_mode_validation(self, small_reservoir):
        with pytest.raises(ValueError):
            self.make_machine(small_reservoir).__class__(
                reservoir=small_reservoir,
                c_pop=constant_classifier(0, 2), c_push=constant_classifier(0, 2),
                c_shift=constant_classifier(1, 2), c_out=constant_classifier(0, 2),
                push_codes=np.zeros((1, 2)), out_mode="bogus")


@pytest.fixture(scope="module")
def fitted():
    ds = make_language_task("anbn", seed=0, train_count=30, test_count=10)
    reservoir = build_random(64, ds.table.n, spectral_radius=0.9,
                             input_scale=1.0, seed=11)
    machine = fit(reservoir, ds.train, ds.table)
    return ds, machine


class TestFit:
    def test_training_fidelity_is_perfect(self, fitted):
        ds, machine = fitted
        data = collect_training(machine.reservoir, ds.train)
        report = training_fidelity(machine, data, ds.table)
        assert report == {"pop": 1.0, "push": 1.0, "shift": 1.0, "out": 1.0}

    def test_free_run_reproduces_training_corpus(self, fitted):
        ds, machine = fitted
        outputs = run_batch(machine, [ann.inputs for ann in ds.train])
        for y, ann in zip(outputs, ds.train):
            assert np.array_equal(y, ann.outputs)

    def test_generalizes_in_distribution(self, fitted):
        from rsm.harness import mae
        ds, machine = fitted
        predictions = run_batch(machine, ds.test_inputs)
        assert mae(predictions, ds.test_targets) < 0.01

    def test_action_classifiers_share_supports(self, fitted):
        _, machine = fitted
        assert machine.c_pop.support_points is machine.c_push.support_points
        assert machine.c_pop.gamma == machine.c_push.gamma

    def test_row_caps_limit_supports(self):
        ds = make_language_task("anbn", seed=1, train_count=20, test_count=5)
        reservoir = build_random(48, ds.table.n, seed=2)
        machine = fit(reservoir, ds.train, ds.table,
                      max_action_rows=50, max_step_rows=40)
        assert len(machine.c_pop.support_points) <= 50
        assert len(machine.c_shift.support_points) <= 40
        y = run(machine, ds.train[0].inputs)
        assert y.shape == (ds.train[0].steps, 1)

    def test_gamma_scale_widens_every_kernel_head(self):
        ds = make_language_task("anbn", seed=1, train_count=20, test_count=5)
        reservoir = build_random(48, ds.table.n, seed=2)
        narrow = fit(reservoir, ds.train, ds.table)
        wide = fit(reservoir, ds.train, ds.table, gamma_scale=0.5)
        assert wide.c_pop.gamma == pytest.approx(narrow.c_pop.gamma * 0.5)
        assert wide.c_shift.gamma == pytest.approx(narrow.c_shift.gamma * 0.5)
        assert wide.c_out.gamma == pytest.approx(narrow.c_out.gamma * 0.5)
