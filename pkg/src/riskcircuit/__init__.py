"""Venue-visit risk circuits: tensors, points budgets, ledger, simulator."""

from .circuit import (BoxOp, CircuitBuilder, CircuitDoc, Flag, SystemId,
                      SystemRef, TerminalClosure, Wire, classify,
                      is_deterministic, parse, serialize, split_at, validate)
from .hidden import (ExtendedState, Factor, HiddenSpace, SystemKind,
                     build_space, extend_with_position)
from .inference import (ClosurePolicy, RiskReport, circuit_probability,
                        close_fragment, infection_probability, points_cost,
                        state_of)
from .rates import OutcomeRateMatrix, RateModel, assemble_q, solve_kfe, tensor_of_box
from .tensor import (Axis, ContractionPlan, OpTensor, brute_force_prob,
                     check_conditions, contract, plan_contraction)

__version__ = "0.1.0"
