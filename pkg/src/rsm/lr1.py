"""Shift-reduce recognizers with one symbol of lookahead.

An :class:`Automaton` is an ordered list of rules over a symbol table.
A rule ``(suffix, lookahead, pop_count, push)`` fires when ``suffix``
matches the top of the stack and the lookahead is either ``None``
(always applicable) or equal to the next input symbol.  Recognition
proceeds symbol by symbol: reduce with the first matching rule until
none matches, then shift the input symbol.  After the last symbol a
terminator is processed the same way; the word is accepted iff the
stack then holds exactly one accepting nonterminal plus the terminator.

``parse`` gives the accept/reject decision; ``parse_with_trace``
additionally records every reduction, the stack after every step, and
the per-step acceptance flag.  Traces are the supervision source for
stack machines: they say exactly when to pop, what to push, and what to
output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .alphabet import SymbolTable

#: Input terminator, processed after the last word symbol.  Not a symbol
#: of any table; rules can only see it through an empty lookahead.
END = "#"


class MalformedRuleError(ValueError):
    """A matching rule asked to pop more symbols than the stack holds."""


@dataclass(frozen=True)
class Rule:
    """One reduction: if ``suffix`` tops the stack (and ``lookahead`` is
    None or equals the next input), pop ``pop_count`` symbols and push
    ``push``."""

    suffix: tuple[str, ...]
    lookahead: str | None
    pop_count: int
    push: str

    def __post_init__(self):
        if self.pop_count < 0:
            raise ValueError("pop_count must be >= 0")

    def matches(self, stack: list[str], lookahead: str) -> bool:
        k = len(self.suffix)
        if k > len(stack) or tuple(stack[len(stack) - k:]) != self.suffix:
            return False
        return self.lookahead is None or self.lookahead == lookahead

    def describe(self) -> str:
        x = self.lookahead if self.lookahead is not None else "eps"
        return f"({''.join(self.suffix)}, {x}, {self.pop_count}, {self.push})"


@dataclass
class Automaton:
    table: SymbolTable
    rules: list[Rule]
    accepting: frozenset[str]

    def __post_init__(self):
        self.accepting = frozenset(self.accepting)
        symbols = set(self.table.symbols)
        for rule in self.rules:
            unknown = (set(rule.suffix) | {rule.push}) - symbols
            if unknown:
                raise ValueError(f"rule {rule.describe()} uses unregistered {sorted(unknown)}")
            if rule.lookahead is not None and not self.table.is_terminal(rule.lookahead):
                raise ValueError(f"lookahead of {rule.describe()} must be a terminal")
            if rule.push not in self.table.nonterminals:
                raise ValueError(f"rule {rule.describe()} must push a nonterminal")
        bad = self.accepting - set(self.table.nonterminals)
        if bad:
            raise ValueError(f"accepting symbols {sorted(bad)} are not nonterminals")


def match_rule(rules: list[Rule], stack: list[str], lookahead: str) -> Rule | None:
    """First rule in order that applies to (stack, lookahead), or None."""
    for rule in rules:
        if rule.matches(stack, lookahead):
            return rule
    return None


def _reduce(a: Automaton, stack: list[str], lookahead: str,
            actions: list[tuple[int, str | None]] | None = None) -> None:
    """Apply reductions in place until no rule matches."""
    while True:
        rule = match_rule(a.rules, stack, lookahead)
        if rule is None:
            return
        if rule.pop_count > len(stack):
            raise MalformedRuleError(
                f"rule {rule.describe()} pops {rule.pop_count} from a stack of {len(stack)}")
        if rule.pop_count:
            del stack[len(stack) - rule.pop_count:]
        stack.append(rule.push)
        if actions is not None:
            actions.append((rule.pop_count, rule.push))


def parse(a: Automaton, word) -> int:
    """1 if the automaton accepts the word (an iterable of terminal names)."""
    stack: list[str] = []
    for y in list(word) + [END]:
        _reduce(a, stack, y)
        stack.append(y)
    return int(len(stack) == 2 and stack[1] == END and stack[0] in a.accepting)


@dataclass
class ParseTrace:
    """Everything a recognition run did, step by step.

    For a word of T symbols there are T+1 steps (the last processes the
    terminator).  ``actions[t]`` lists the reductions applied during step
    t as (pop_count, pushed nonterminal) pairs, always closed by the
    sentinel ``(0, None)``.  ``outputs[t]`` is 1 iff, after the step's
    reductions and before its shift, the stack is a single accepting
    nonterminal.  ``stacks[t]`` is the stack after the shift.  ``shifts``
    is all ones: this recognizer shifts every input symbol.
    """

    word: list[str]
    actions: list[list[tuple[int, str | None]]] = field(default_factory=list)
    shifts: list[int] = field(default_factory=list)
    outputs: list[int] = field(default_factory=list)
    stacks: list[list[str]] = field(default_factory=list)
    accept: int = 0

    @property
    def steps(self) -> int:
        return len(self.word) + 1


def parse_with_trace(a: Automaton, word) -> ParseTrace:
    """Run the recognizer and record reductions, outputs, and stacks."""
    trace = ParseTrace(word=list(word))
    stack: list[str] = []
    for y in trace.word + [END]:
        step_actions: list[tuple[int, str | None]] = []
        _reduce(a, stack, y, step_actions)
        step_actions.append((0, None))
        trace.actions.append(step_actions)
        trace.outputs.append(int(len(stack) == 1 and stack[0] in a.accepting))
        trace.shifts.append(1)
        stack.append(y)
        trace.stacks.append(list(stack))
    trace.accept = trace.outputs[-1]
    return trace


def replay_trace(trace: ParseTrace) -> list[list[str]]:
    """Re-apply a trace's recorded actions to a fresh stack.

    Returns the stack snapshot after every step; equality with
    ``trace.stacks`` is the soundness check for recorded annotations.
    """
    stack: list[str] = []
    snapshots = []
    inputs = trace.word + [END]
    for t, actions in enumerate(trace.actions):
        for pop_count, push in actions:
            if pop_count:
                del stack[len(stack) - pop_count:]
            if push is not None:
                stack.append(push)
        if trace.shifts[t]:
            stack.append(inputs[t])
        snapshots.append(list(stack))
    return snapshots


def rules_from_strings(entries: list[tuple[str, str, int, str]]) -> list[Rule]:
    """Build rules from (suffix, lookahead, pop_count, push) string tuples.

    Suffixes are written as strings of single-character symbol names;
    the empty lookahead string means "always applicable".
    """
    return [Rule(suffix=tuple(s), lookahead=(x if x else None), pop_count=j, push=A)
            for s, x, j, A in entries]


def automaton_from_dict(d: dict) -> Automaton:
    table = SymbolTable.one_hot(d["terminals"], d["nonterminals"])
    rules = rules_from_strings([tuple(r) for r in d["rules"]])
    return Automaton(table=table, rules=rules, accepting=frozenset(d["accepting"]))


def automaton_to_dict(a: Automaton) -> dict:
    return {
        "terminals": list(a.table.terminals),
        "nonterminals": list(a.table.nonterminals),
        "rules": [["".join(r.suffix), r.lookahead or "", r.pop_count, r.push] for r in a.rules],
        "accepting": sorted(a.accepting),
    }
