"""Reservoir stack machines.

A stack machine couples one fixed reservoir with an explicit stack of
input vectors.  The reservoir is used twice: once to encode the input
prefix into a state ``h_t``, and once to encode the current stack
content into a state ``g_t`` (fold the stack bottom to top from zeros).
Four readouts drive the machine, all fed with the pair ``(h_t, g_t)``:

``c_pop``    how many cells to remove from the stack (0 = none),
``c_push``   which nonterminal code to push (0 = none),
``c_shift``  whether to push the current input vector after the step,
``c_out``    the visible output.

Per input vector (plus one trailing zero vector standing in for the end
of the sequence) the machine updates ``h``, then repeatedly queries
``c_pop`` and ``c_push`` on the same ``(h, g)`` pair and applies the
requested stack edits until both come back zero.  Querying both on the
same pair mirrors how the training rows are recorded; see
``collect_training``.

Training never runs the machine freely.  Instead, recorded stack edits
(an :class:`Annotation`, typically derived from a recognizer trace) are
replayed while reservoir states are harvested, which turns stack-machine
training into a handful of independent classification and regression
problems.

Stack cells cache their reservoir state: the state of the stack up to a
cell is fixed once the cell is written, so a pop restores the encoding
of the remaining stack by lookup instead of refolding.  This changes
nothing semantically; it only removes quadratic refold cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alphabet import SymbolTable
from .classifiers import (KernelClassifier, LinearReadout, fit_kernel_classifier,
                          fit_kernel_classifiers_shared, fit_linear_ridge, rbf_gamma_scale,
                          rbf_kernel)
from .reservoir import Reservoir


class RunawayLoopError(RuntimeError):
    """The inner pop/push loop failed to terminate within the budget."""


class AnnotationError(ValueError):
    """An annotation violates the recorded-actions format."""


@dataclass
class Annotation:
    """Recorded stack-machine behavior for one input sequence.

    ``inputs`` is the (T, n) input block; the machine itself appends the
    zero end-of-input vector, so it is not stored.  ``actions`` has T+1
    entries, one per step; each is a list of (pop_count, push_code)
    pairs closed by the sentinel ``(0, None)``.  ``shifts`` and
    ``outputs`` hold one entry per step: the shift flag and the desired
    output row.
    """

    inputs: np.ndarray
    actions: list[list[tuple[int, np.ndarray | None]]]
    shifts: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.shifts = np.asarray(self.shifts, dtype=int)
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        steps = len(self.inputs) + 1
        if self.inputs.ndim != 2:
            raise AnnotationError("inputs must be (T, n)")
        if len(self.actions) != steps or self.shifts.shape != (steps,) \
                or self.outputs.shape[0] != steps:
            raise AnnotationError(f"need {steps} steps of actions, shifts, and outputs")
        for step in self.actions:
            if not step or step[-1] != (0, None):
                raise AnnotationError("each step's actions must end with the (0, None) sentinel")
            for pop_count, code in step[:-1]:
                if pop_count == 0 and code is None:
                    raise AnnotationError("sentinel before the end of a step")
                if pop_count < 0:
                    raise AnnotationError("negative pop count")

    @property
    def steps(self) -> int:
        return len(self.inputs) + 1

    def to_dict(self) -> dict:
        n = self.inputs.shape[1]
        zero = [0.0] * n
        return {
            "x": self.inputs.tolist(),
            "J": [[int(j) for j, _ in step] for step in self.actions],
            "A": [[(zero if code is None else np.asarray(code, dtype=float).tolist())
                   for _, code in step] for step in self.actions],
            "rho": self.shifts.tolist(),
            "Y": self.outputs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, n: int | None = None) -> "Annotation":
        inputs = np.array(d["x"], dtype=float)
        if inputs.size == 0:
            inputs = inputs.reshape(0, n if n is not None else 0)
        actions = []
        for js, codes in zip(d["J"], d["A"]):
            step = []
            for j, code in zip(js, codes):
                vec = np.array(code, dtype=float)
                step.append((int(j), None if not vec.any() else vec))
            actions.append(step)
        return cls(inputs=inputs, actions=actions,
                   shifts=np.array(d["rho"], dtype=int), outputs=np.array(d["Y"], dtype=float))


class CachedStack:
    """Stack of (code, reservoir state) cells.

    ``states[i]`` is the reservoir encoding of the stack up to and
    including cell i, so the encoding of the whole stack is always
    ``top_state`` and pops need no recomputation.  State computation
    happens outside (batched); the stack only stores.
    """

    def __init__(self, m: int):
        self.m = m
        self.codes: list[np.ndarray] = []
        self.states: list[np.ndarray] = []

    @property
    def height(self) -> int:
        return len(self.codes)

    @property
    def top_state(self) -> np.ndarray:
        return self.states[-1] if self.states else np.zeros(self.m)

    def push(self, code: np.ndarray, state: np.ndarray) -> None:
        self.codes.append(np.asarray(code, dtype=float))
        self.states.append(state)

    def pop(self, count: int) -> None:
        if count:
            del self.codes[-count:]
            del self.states[-count:]

    def snapshot(self) -> list[np.ndarray]:
        return [c.copy() for c in self.codes]

    def refold(self, reservoir: Reservoir) -> np.ndarray:
        """Recompute the top state from scratch (test hook)."""
        h = np.zeros(self.m)
        for code in self.codes:
            h = reservoir.step(h, code)
        return h


@dataclass
class TrainingData:
    """The four datasets harvested by :func:`collect_training`.

    Action rows (one per recorded pop/push decision, sentinels included)
    share the feature matrix ``action_states``; step rows (one per outer
    step) share ``step_states``.
    """

    action_states: np.ndarray   # (R, 2m)
    pop_labels: np.ndarray      # (R,)
    push_codes: np.ndarray      # (R, n), zero row = no push
    step_states: np.ndarray     # (S, 2m)
    shift_labels: np.ndarray    # (S,)
    output_targets: np.ndarray  # (S, L)
    stack_snapshots: list[list[list[np.ndarray]]] | None = None


def collect_training(reservoir: Reservoir, annotations, record_stacks: bool = False) -> TrainingData:
    """Replay annotations and harvest training rows for the four readouts.

    All sequences advance in lockstep so the reservoir updates run
    batched.  Per step and sequence: update ``h``; then, for every
    recorded action including the closing sentinel, record the row
    ``(h, g)`` with its pop count and push code *before* applying the
    action; finally record ``(h, g)`` once more for the shift flag and
    output target, and apply the shift.
    """
    if isinstance(annotations, Annotation):
        annotations = [annotations]
    if not annotations:
        raise ValueError("no annotations given")
    m, n = reservoir.m, reservoir.n
    B = len(annotations)
    steps = [ann.steps for ann in annotations]
    L = annotations[0].outputs.shape[1]

    h = np.zeros((B, m))
    g = np.zeros((B, m))
    stacks = [CachedStack(m) for _ in range(B)]
    snapshots: list[list[list[np.ndarray]]] = [[] for _ in range(B)]

    act_rows, act_pops, act_codes = [], [], []
    step_rows, step_shifts, step_outputs = [], [], []

    for t in range(max(steps)):
        active = [i for i in range(B) if t < steps[i]]
        x_t = np.zeros((len(active), n))
        for k, i in enumerate(active):
            if t < steps[i] - 1:
                x_t[k] = annotations[i].inputs[t]
        h[active] = reservoir.step(h[active], x_t)

        # Inner actions, lockstep over the per-step action lists.
        pending = {i: annotations[i].actions[t] for i in active}
        tau = 0
        while pending:
            current = sorted(pending)
            rows = np.concatenate([h[current], g[current]], axis=1)
            act_rows.append(rows)
            push_ids, push_blocks = [], []
            pops = np.zeros(len(current), dtype=int)
            codes = np.zeros((len(current), n))
            for k, i in enumerate(current):
                pop_count, code = pending[i][tau]
                pops[k] = pop_count
                if pop_count:
                    stacks[i].pop(min(pop_count, stacks[i].height))
                    g[i] = stacks[i].top_state
                if code is not None:
                    codes[k] = code
                    push_ids.append(i)
                    push_blocks.append(code)
                if tau == len(pending[i]) - 1:
                    del pending[i]
            act_pops.append(pops)
            act_codes.append(codes)
            if push_ids:
                new_states = reservoir.step(g[push_ids], np.stack(push_blocks))
                for k, i in enumerate(push_ids):
                    stacks[i].push(push_blocks[k], new_states[k])
                g[push_ids] = new_states
            tau += 1

        rows = np.concatenate([h[active], g[active]], axis=1)
        step_rows.append(rows)
        shift_ids, shift_blocks = [], []
        shifts = np.zeros(len(active), dtype=int)
        outputs = np.zeros((len(active), L))
        for k, i in enumerate(active):
            shifts[k] = annotations[i].shifts[t]
            outputs[k] = annotations[i].outputs[t]
            if shifts[k]:
                shift_ids.append(i)
                shift_blocks.append(x_t[k])
        step_shifts.append(shifts)
        step_outputs.append(outputs)
        if shift_ids:
            new_states = reservoir.step(g[shift_ids], np.stack(shift_blocks))
            for k, i in enumerate(shift_ids):
                stacks[i].push(shift_blocks[k], new_states[k])
            g[shift_ids] = new_states
        if record_stacks:
            for i in active:
                snapshots[i].append(stacks[i].snapshot())

    return TrainingData(
        action_states=np.concatenate(act_rows),
        pop_labels=np.concatenate(act_pops),
        push_codes=np.concatenate(act_codes),
        step_states=np.concatenate(step_rows),
        shift_labels=np.concatenate(step_shifts),
        output_targets=np.concatenate(step_outputs),
        stack_snapshots=snapshots if record_stacks else None,
    )


@dataclass
class RunDiagnostics:
    underflow: bool = False
    max_inner: int = 0


@dataclass
class StackMachine:
    """A fitted reservoir stack machine.

    ``push_codes`` maps push class k to its code vector; row 0 is the
    zero vector ("push nothing").  ``out_mode`` selects whether ``c_out``
    is a classifier (binary membership tasks) or a ridge readout
    (vector-valued tasks).
    """

    reservoir: Reservoir
    c_pop: KernelClassifier
    c_push: KernelClassifier
    c_shift: KernelClassifier
    c_out: KernelClassifier | LinearReadout
    push_codes: np.ndarray
    out_mode: str = "classifier"
    max_inner_iterations: int = 64

    def __post_init__(self):
        if self.out_mode not in ("classifier", "ridge"):
            raise ValueError("out_mode must be 'classifier' or 'ridge'")

    @property
    def output_dim(self) -> int:
        if self.out_mode == "ridge":
            return self.c_out.weights.shape[0]
        return 1

    def _predict_actions(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cp, ca = self.c_pop, self.c_push
        if cp.support_points is ca.support_points and cp.gamma == ca.gamma:
            K = rbf_kernel(rows, cp.support_points, cp.gamma)
            pops = cp.classes[np.argmax(K @ cp.dual_coef, axis=1)]
            pushes = ca.classes[np.argmax(K @ ca.dual_coef, axis=1)]
            return pops, pushes
        return cp.predict(rows), ca.predict(rows)

    def _predict_out(self, rows: np.ndarray) -> np.ndarray:
        if self.out_mode == "ridge":
            return self.c_out.predict(rows)
        return self.c_out.predict(rows)[:, None].astype(float)


def run(machine: StackMachine, inputs: np.ndarray) -> np.ndarray:
    """Outputs of the machine on one (T, n) input block: a (T+1, L) array."""
    return run_batch(machine, [inputs])[0]


def run_batch(machine: StackMachine, input_blocks, return_diagnostics: bool = False):
    """Run the machine on many sequences in lockstep.

    Returns a list of (T_i + 1, L) output arrays, plus per-sequence
    :class:`RunDiagnostics` when requested.  Raises
    :class:`RunawayLoopError` if any inner loop exceeds the budget.
    """
    r = machine.reservoir
    m, n, L = r.m, r.n, machine.output_dim
    blocks = [np.asarray(x, dtype=float).reshape(-1, n) for x in input_blocks]
    B = len(blocks)
    steps = [len(x) + 1 for x in blocks]

    h = np.zeros((B, m))
    g = np.zeros((B, m))
    stacks = [CachedStack(m) for _ in range(B)]
    outputs = [np.zeros((s, L)) for s in steps]
    diags = [RunDiagnostics() for _ in range(B)]

    for t in range(max(steps)):
        active = [i for i in range(B) if t < steps[i]]
        x_t = np.zeros((len(active), n))
        for k, i in enumerate(active):
            if t < steps[i] - 1:
                x_t[k] = blocks[i][t]
        h[active] = r.step(h[active], x_t)

        looping = list(active)
        iteration = 0
        while looping:
            iteration += 1
            if iteration > machine.max_inner_iterations:
                raise RunawayLoopError(
                    f"inner loop exceeded {machine.max_inner_iterations} iterations "
                    f"at step {t + 1} for sequences {looping}")
            for i in looping:
                diags[i].max_inner = max(diags[i].max_inner, iteration)
            rows = np.concatenate([h[looping], g[looping]], axis=1)
            pops, pushes = machine._predict_actions(rows)
            still, push_ids, push_blocks = [], [], []
            for k, i in enumerate(looping):
                j, a = int(pops[k]), int(pushes[k])
                if j > stacks[i].height:
                    diags[i].underflow = True
                    j = stacks[i].height
                if j == 0 and a == 0:
                    # Nothing effective to do.  This also settles the
                    # sequence when the only request was popping an
                    # empty stack: the state cannot change, so looping
                    # again would repeat the same request forever.
                    continue
                if j > 0:
                    stacks[i].pop(j)
                    g[i] = stacks[i].top_state
                if a != 0:
                    push_ids.append(i)
                    push_blocks.append(machine.push_codes[a])
                still.append(i)
            if push_ids:
                new_states = r.step(g[push_ids], np.stack(push_blocks))
                for k, i in enumerate(push_ids):
                    stacks[i].push(push_blocks[k], new_states[k])
                g[push_ids] = new_states
            looping = still

        rows = np.concatenate([h[active], g[active]], axis=1)
        y = machine._predict_out(rows)
        shift_flags = machine.c_shift.predict(rows)
        shift_ids, shift_blocks = [], []
        for k, i in enumerate(active):
            outputs[i][t] = y[k]
            if shift_flags[k] > 0:
                shift_ids.append(i)
                shift_blocks.append(x_t[k])
        if shift_ids:
            new_states = r.step(g[shift_ids], np.stack(shift_blocks))
            for k, i in enumerate(shift_ids):
                stacks[i].push(shift_blocks[k], new_states[k])
            g[shift_ids] = new_states

    if return_diagnostics:
        return outputs, diags
    return outputs


def _codes_to_classes(codes: np.ndarray, table: SymbolTable) -> np.ndarray:
    """Map push-code rows to class indices: 0 for zero, else 1 + index in
    the table's nonterminal list.  Unknown codes are an error."""
    nt_codes = table.code_matrix(table.nonterminals)
    classes = np.zeros(len(codes), dtype=int)
    nonzero = np.flatnonzero(np.any(codes != 0.0, axis=1))
    for i in nonzero:
        match = np.flatnonzero(np.all(nt_codes == codes[i], axis=1))
        if len(match) != 1:
            raise ValueError(f"push code {codes[i]} does not match one registered nonterminal")
        classes[i] = match[0] + 1
    return classes


def _subsample_rows(labels: np.ndarray, max_rows: int, seed: int) -> np.ndarray:
    """Indices of a label-stratified subsample.

    Rare labels are kept whole; the surplus budget is spread over the
    frequent ones.  Deterministic under the seed.
    """
    total = len(labels)
    if total <= max_rows:
        return np.arange(total)
    rng = np.random.default_rng(seed)
    groups = {}
    for idx, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(idx)
    sizes = sorted((len(v), k) for k, v in groups.items())
    kept = []
    budget = max_rows
    remaining_groups = len(sizes)
    for size, key in sizes:
        quota = budget // remaining_groups
        members = np.array(groups[key])
        if size <= quota:
            kept.append(members)
            budget -= size
        else:
            kept.append(rng.choice(members, size=quota, replace=False))
            budget -= quota
        remaining_groups -= 1
    return np.sort(np.concatenate(kept))


def fit(reservoir: Reservoir, annotations, table: SymbolTable, out_mode: str = "classifier",
        action_reg: float = 1e-6, out_reg: float = 1e-6, gamma_scale: float = 1.0,
        max_action_rows: int | None = None, max_step_rows: int | None = None,
        seed: int = 0) -> StackMachine:
    """Train a stack machine from recorded annotations.

    Harvests the training rows with :func:`collect_training`, then fits
    ``c_pop`` and ``c_push`` on the action rows (sharing one kernel
    matrix), ``c_shift`` on the step rows, and ``c_out`` as either a
    classifier or a ridge readout depending on ``out_mode``.

    ``gamma_scale`` multiplies the kernel bandwidth heuristic for every
    classifier head.  Values below 1 widen the kernel, which matters
    when the decision must ignore most of the state: a stack full of
    random payload bits puts every test row far from every training row,
    and a narrow kernel then decides by noise instead of by the relevant
    coordinates.

    ``max_action_rows`` / ``max_step_rows`` optionally cap the dataset
    sizes by stratified subsampling; large replay corpora (the copy
    tasks) are heavily redundant, so this trades nothing but memory.
    """
    data = collect_training(reservoir, annotations)
    push_classes = _codes_to_classes(data.push_codes, table)

    X_act = data.action_states
    pop_labels = data.pop_labels
    if max_action_rows is not None and len(X_act) > max_action_rows:
        combined = pop_labels * (len(table.nonterminals) + 1) + push_classes
        keep = _subsample_rows(combined, max_action_rows, seed)
        X_act, pop_labels, push_classes = X_act[keep], pop_labels[keep], push_classes[keep]

    X_step = data.step_states
    shift_labels = data.shift_labels
    out_targets = data.output_targets
    if max_step_rows is not None and len(X_step) > max_step_rows:
        if out_mode == "classifier":
            combined = shift_labels * 2 + (out_targets[:, 0] > 0.5).astype(int)
        else:
            combined = shift_labels
        keep = _subsample_rows(combined, max_step_rows, seed + 1)
        X_step, shift_labels, out_targets = X_step[keep], shift_labels[keep], out_targets[keep]

    action_gamma = rbf_gamma_scale(X_act) * gamma_scale
    step_gamma = rbf_gamma_scale(X_step) * gamma_scale
    c_pop, c_push = fit_kernel_classifiers_shared(X_act, [pop_labels, push_classes],
                                                  action_reg, gamma=action_gamma)

    c_shift = fit_kernel_classifier(X_step, shift_labels, action_reg, gamma=step_gamma)
    if out_mode == "classifier":
        c_out = fit_kernel_classifier(X_step, (out_targets[:, 0] > 0.5).astype(int), out_reg,
                                      gamma=step_gamma)
    else:
        c_out = fit_linear_ridge(X_step, out_targets, out_reg)

    push_codes = np.concatenate([np.zeros((1, table.n)),
                                 table.code_matrix(table.nonterminals)])
    return StackMachine(reservoir=reservoir, c_pop=c_pop, c_push=c_push, c_shift=c_shift,
                        c_out=c_out, push_codes=push_codes, out_mode=out_mode)


def training_fidelity(machine: StackMachine, data: TrainingData, table: SymbolTable) -> dict:
    """Fraction of recorded decisions the fitted readouts reproduce.

    Predicts in chunks to bound the kernel matrix size.  Returns
    per-readout accuracies; 1.0 everywhere means the machine replays its
    training corpus exactly.
    """
    def chunked_predict(fn, X, chunk=2048):
        return np.concatenate([fn(X[i:i + chunk]) for i in range(0, len(X), chunk)])

    pop_hat = chunked_predict(machine.c_pop.predict, data.action_states)
    push_hat = chunked_predict(machine.c_push.predict, data.action_states)
    shift_hat = chunked_predict(machine.c_shift.predict, data.step_states)
    push_true = _codes_to_classes(data.push_codes, table)
    report = {
        "pop": float(np.mean(pop_hat == data.pop_labels)),
        "push": float(np.mean(push_hat == push_true)),
        "shift": float(np.mean(shift_hat == data.shift_labels)),
    }
    if machine.out_mode == "classifier":
        out_hat = chunked_predict(machine.c_out.predict, data.step_states)
        report["out"] = float(np.mean(out_hat == (data.output_targets[:, 0] > 0.5).astype(int)))
    return report
