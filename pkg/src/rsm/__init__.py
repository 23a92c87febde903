"""Reservoir stack machines and their baselines.

The package splits along the natural seams of the model family:

- :mod:`rsm.alphabet` -- symbol tables (names <-> code vectors)
- :mod:`rsm.reservoir` -- fixed recurrent encoders (random / cycle-jump / Legendre)
- :mod:`rsm.lr1` -- shift-reduce recognizers and parse traces
- :mod:`rsm.classifiers` -- kernel classifiers and ridge readouts
- :mod:`rsm.stack_machine` -- the stack machine: annotation replay, training, running
- :mod:`rsm.memory_machine` -- row-addressable memory machines and the convergence probe
- :mod:`rsm.tasks` -- grammars, language datasets, copy tasks
- :mod:`rsm.harness` -- experiments: models, search, results, reports
"""

from .alphabet import SymbolTable
from .classifiers import (KernelClassifier, LinearReadout, fit_kernel_classifier,
                          fit_linear_ridge, rbf_gamma_scale)
from .lr1 import Automaton, Rule, parse, parse_with_trace
from .memory_machine import MemoryMachine, run_memory_machine, suffix_convergence_probe
from .reservoir import Reservoir, build_crj, build_ldn, build_random
from .stack_machine import Annotation, StackMachine, collect_training, fit, run, run_batch
from .tasks import TaskDataset, make_task

__all__ = [
    "SymbolTable", "KernelClassifier", "LinearReadout", "fit_kernel_classifier",
    "fit_linear_ridge", "rbf_gamma_scale", "Automaton", "Rule", "parse",
    "parse_with_trace", "MemoryMachine", "run_memory_machine",
    "suffix_convergence_probe", "Reservoir", "build_crj", "build_ldn", "build_random",
    "Annotation", "StackMachine", "collect_training", "fit", "run", "run_batch",
    "TaskDataset", "make_task",
]

__version__ = "0.1.0"
