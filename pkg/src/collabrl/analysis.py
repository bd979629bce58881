"""Static analysis of Python candidates: structural features, a time-complexity
class estimate with confidence, and cyclomatic complexity.

The complexity predictor follows the scikit-learn estimator protocol
(``fit`` / ``predict_proba`` / ``predict`` / ``get_params``) so a learned
model can replace :class:`RuleComplexityPredictor` without touching callers::

    from sklearn.pipeline import make_pipeline
    model = make_pipeline(FeatureExtractor(), RuleComplexityPredictor())
    model.predict(["for x in a:\n    print(x)\n"])
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .errors import ConfigError


class ComplexityClass(str, Enum):
    CONST = "Const"
    LOG_N = "LogN"
    LINEAR = "Linear"
    LINEAR_LOG = "LinearLog"
    QUADRATIC = "Quadratic"
    CUBIC = "Cubic"
    EXPONENTIAL = "Exponential"

    @property
    def rank(self) -> int:
        return CLASS_ORDER.index(self)


CLASS_ORDER: tuple[ComplexityClass, ...] = tuple(ComplexityClass)

DEFAULT_COSTS = {
    ComplexityClass.CONST: 0.0,
    ComplexityClass.LOG_N: 0.1,
    ComplexityClass.LINEAR: 0.25,
    ComplexityClass.LINEAR_LOG: 0.4,
    ComplexityClass.QUADRATIC: 0.6,
    ComplexityClass.CUBIC: 0.8,
    ComplexityClass.EXPONENTIAL: 1.0,
}


@dataclass(frozen=True)
class CostTable:
    """Normalized cost per complexity class; strictly increasing from 0 to 1."""

    costs: dict = field(default_factory=lambda: dict(DEFAULT_COSTS))

    def __post_init__(self):
        costs = {ComplexityClass(k): float(v) for k, v in self.costs.items()}
        object.__setattr__(self, "costs", costs)
        self.validate()

    def validate(self) -> None:
        missing = [c.value for c in CLASS_ORDER if c not in self.costs]
        if missing:
            raise ConfigError(f"cost table is missing classes: {missing}")
        values = [self.costs[c] for c in CLASS_ORDER]
        if values[0] != 0.0 or values[-1] != 1.0:
            raise ConfigError("cost table must map Const to 0 and Exponential to 1")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"cost table must be strictly increasing, got {values}")

    def __getitem__(self, cls) -> float:
        return self.costs[ComplexityClass(cls)]

    def to_dict(self) -> dict:
        return {c.value: self.costs[c] for c in CLASS_ORDER}


def cost_score(cls: ComplexityClass, table: CostTable | None = None) -> float:
    table = table or CostTable()
    table.validate()
    return table[cls]


@dataclass(frozen=True)
class StructuralFeatures:
    max_loop_depth: int = 0
    loop_count: int = 0
    has_recursion: bool = False
    has_halving_loop: bool = False
    calls_sort: bool = False
    recursive_call_sites: int = 0
    has_memoization: bool = False
    parse_ok: bool = True
    input_size_vars: tuple[str, ...] = ()

    # Column order of ``as_vector``; input_size_vars is descriptive only.
    VECTOR_FIELDS = (
        "max_loop_depth",
        "loop_count",
        "has_recursion",
        "has_halving_loop",
        "calls_sort",
        "recursive_call_sites",
        "has_memoization",
        "parse_ok",
    )

    def as_vector(self) -> list[float]:
        return [float(getattr(self, name)) for name in self.VECTOR_FIELDS]

    @classmethod
    def from_vector(cls, row: Sequence[float]) -> "StructuralFeatures":
        kwargs = {}
        for name, value in zip(cls.VECTOR_FIELDS, row):
            default = getattr(cls, name) if hasattr(cls, name) else 0
            kwargs[name] = bool(value) if isinstance(default, bool) else int(value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in self.VECTOR_FIELDS}
        out["input_size_vars"] = list(self.input_size_vars)
        return out


@dataclass(frozen=True)
class ComplexityEstimate:
    cls: ComplexityClass
    confidence: float
    distribution: dict
    cost: float

    def to_dict(self) -> dict:
        return {
            "class": self.cls.value,
            "confidence": self.confidence,
            "cost": self.cost,
            "distribution": {c.value: self.distribution[c] for c in CLASS_ORDER},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ComplexityEstimate":
        return cls(
            cls=ComplexityClass(data["class"]),
            confidence=float(data["confidence"]),
            distribution={ComplexityClass(k): float(v) for k, v in data["distribution"].items()},
            cost=float(data["cost"]),
        )


# ---------------------------------------------------------------------------
# Feature extraction

_SORT_NAMES = {"sorted"}
_SORT_ATTRS = {"sort"}
_MEMO_DECORATORS = {"lru_cache", "cache"}
_SHRINK_OPS = (ast.FloorDiv, ast.Div, ast.Mult, ast.RShift, ast.LShift)
_INPUT_CALLS = {"input", "readline", "read", "readlines"}


def _is_growth_constant(node: ast.AST, op: ast.operator) -> bool:
    if not isinstance(node, ast.Constant) or isinstance(node.value, bool):
        return False
    if not isinstance(node.value, (int, float)):
        return False
    if isinstance(op, (ast.RShift, ast.LShift)):
        return node.value >= 1
    return node.value > 1


def _call_name(call: ast.Call) -> str | None:
    func = call.func
    if isinstance(func, ast.Name):
        return func.id
    if isinstance(func, ast.Attribute):
        return func.attr
    return None


def _decorator_name(node: ast.expr) -> str | None:
    if isinstance(node, ast.Call):
        node = node.func
    if isinstance(node, ast.Name):
        return node.id
    if isinstance(node, ast.Attribute):
        return node.attr
    return None


def _halves_range(loop: ast.While) -> bool:
    """True if the loop body shrinks or grows a variable geometrically."""
    for node in ast.walk(loop):
        if isinstance(node, ast.AugAssign) and isinstance(node.op, _SHRINK_OPS):
            if _is_growth_constant(node.value, node.op):
                return True
        if isinstance(node, ast.Assign) and isinstance(node.value, ast.BinOp):
            binop = node.value
            if isinstance(binop.op, _SHRINK_OPS) and _is_growth_constant(binop.right, binop.op):
                targets = {t.id for t in node.targets if isinstance(t, ast.Name)}
                operands = {n.id for n in ast.walk(binop.left) if isinstance(n, ast.Name)}
                # x = x // 2 halves x; mid = (lo + hi) // 2 halves a search range.
                if targets & operands or len(operands) >= 2:
                    return True
    return False


class _FeatureVisitor(ast.NodeVisitor):
    def __init__(self):
        self.max_depth = 0
        self.loop_count = 0
        self.halving = False
        self.calls_sort = False
        self.recursive_sites = 0
        self.memoized = False
        self._depth = 0
        self._functions: list[str] = []
        self._memo_names: set[str] = set()

    def _enter_loop(self, node, halving=False):
        self.loop_count += 1
        self._depth += 1
        self.max_depth = max(self.max_depth, self._depth)
        if halving:
            self.halving = True
        self.generic_visit(node)
        self._depth -= 1

    def visit_For(self, node):
        self._enter_loop(node)

    visit_AsyncFor = visit_For

    def visit_While(self, node):
        self._enter_loop(node, halving=_halves_range(node))

    def _visit_comprehension(self, node):
        # Each generator clause is one loop level.
        n = len(node.generators)
        self.loop_count += n
        self._depth += n
        self.max_depth = max(self.max_depth, self._depth)
        self.generic_visit(node)
        self._depth -= n

    visit_ListComp = visit_SetComp = visit_DictComp = visit_GeneratorExp = _visit_comprehension

    def visit_FunctionDef(self, node):
        if any(_decorator_name(d) in _MEMO_DECORATORS for d in node.decorator_list):
            self._memo_names.add(node.name)
        self._functions.append(node.name)
        outer_depth, self._depth = self._depth, 0
        self.generic_visit(node)
        self._depth = outer_depth
        self._functions.pop()

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_Call(self, node):
        name = _call_name(node)
        if (isinstance(node.func, ast.Name) and name in _SORT_NAMES) or (
            isinstance(node.func, ast.Attribute) and name in _SORT_ATTRS
        ):
            self.calls_sort = True
        if name and name in self._functions:
            self.recursive_sites += 1
            if name in self._memo_names:
                self.memoized = True
        self.generic_visit(node)

    def visit_Compare(self, node):
        # ``if key in memo`` style manual memoization.
        for op, comparator in zip(node.ops, node.comparators):
            if isinstance(op, (ast.In, ast.NotIn)) and isinstance(comparator, ast.Name):
                if comparator.id.lower() in {"memo", "cache", "dp", "seen_results", "table"}:
                    self.memoized = True
        self.generic_visit(node)


def _input_size_vars(tree: ast.Module) -> tuple[str, ...]:
    names: list[str] = []
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            names.extend(a.arg for a in node.args.args if a.arg not in {"self", "cls"})
    for node in ast.walk(tree):
        if isinstance(node, ast.Assign) and any(
            isinstance(n, ast.Call) and _call_name(n) in _INPUT_CALLS for n in ast.walk(node.value)
        ):
            for target in node.targets:
                names.extend(n.id for n in ast.walk(target) if isinstance(n, ast.Name))
    return tuple(dict.fromkeys(names))


def extract_features(source: str) -> StructuralFeatures:
    try:
        tree = ast.parse(source)
    except (SyntaxError, ValueError):
        return StructuralFeatures(parse_ok=False)
    visitor = _FeatureVisitor()
    visitor.visit(tree)
    return StructuralFeatures(
        max_loop_depth=visitor.max_depth,
        loop_count=visitor.loop_count,
        has_recursion=visitor.recursive_sites > 0,
        has_halving_loop=visitor.halving,
        calls_sort=visitor.calls_sort,
        recursive_call_sites=visitor.recursive_sites,
        has_memoization=visitor.memoized,
        parse_ok=True,
        input_size_vars=_input_size_vars(tree),
    )


# ---------------------------------------------------------------------------
# Prediction


def rule_class(features: StructuralFeatures) -> tuple[ComplexityClass, float]:
    """The rule table: (predicted class, confidence) for parseable programs."""
    depth = features.max_loop_depth
    if features.recursive_call_sites >= 2 and not features.has_memoization:
        return ComplexityClass.EXPONENTIAL, 0.60
    if depth >= 3:
        return ComplexityClass.CUBIC, 0.85
    if depth == 2:
        return ComplexityClass.QUADRATIC, 0.90
    if features.calls_sort:
        return ComplexityClass.LINEAR_LOG, 0.80
    if features.has_halving_loop:
        return ComplexityClass.LOG_N, 0.80
    if depth == 1:
        return ComplexityClass.LINEAR, 0.90
    return ComplexityClass.CONST, 0.90


def rule_distribution(features: StructuralFeatures) -> np.ndarray:
    k = len(CLASS_ORDER)
    if not features.parse_ok:
        return np.full(k, 1.0 / k)
    cls, confidence = rule_class(features)
    i = cls.rank
    neighbours = [j for j in (i - 1, i + 1) if 0 <= j < k]
    dist = np.zeros(k)
    dist[i] = confidence
    dist[neighbours] = (1.0 - confidence) / len(neighbours)
    return dist


def _as_features(X) -> list[StructuralFeatures]:
    if isinstance(X, StructuralFeatures):
        return [X]
    rows = []
    for row in X:
        rows.append(row if isinstance(row, StructuralFeatures) else StructuralFeatures.from_vector(row))
    return rows


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Transforms source strings into the numeric feature matrix."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: Iterable[str]) -> np.ndarray:
        rows = [extract_features(src).as_vector() for src in X]
        return np.asarray(rows, dtype=float).reshape(len(rows), len(StructuralFeatures.VECTOR_FIELDS))


class RuleComplexityPredictor(ClassifierMixin, BaseEstimator):
    """Deterministic stand-in for a learned complexity classifier.

    Accepts either ``StructuralFeatures`` objects or rows of the feature
    matrix produced by :class:`FeatureExtractor`.  ``fit`` only records the
    class set; the rules themselves are fixed.
    """

    def __init__(self, cost_table: CostTable | None = None):
        self.cost_table = cost_table

    def fit(self, X=None, y=None):
        self.classes_ = np.array([c.value for c in CLASS_ORDER])
        return self

    def predict_proba(self, X) -> np.ndarray:
        return np.vstack([rule_distribution(f) for f in _as_features(X)])

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return np.array([CLASS_ORDER[i].value for i in proba.argmax(axis=1)])

    def estimate(self, features: StructuralFeatures) -> ComplexityEstimate:
        table = self.cost_table or CostTable()
        return estimate_from_distribution(self.predict_proba([features])[0], table)


def estimate_from_distribution(dist: Sequence[float], table: CostTable) -> ComplexityEstimate:
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (len(CLASS_ORDER),) or not np.all(np.isfinite(dist)) or np.any(dist < 0):
        raise ValueError("distribution must be a finite non-negative vector over the class set")
    if not math.isclose(float(dist.sum()), 1.0, abs_tol=1e-9):
        raise ValueError(f"distribution sums to {dist.sum()}, not 1")
    i = int(dist.argmax())
    cls = CLASS_ORDER[i]
    return ComplexityEstimate(
        cls=cls,
        confidence=float(dist[i]),
        distribution={c: float(p) for c, p in zip(CLASS_ORDER, dist)},
        cost=table[cls],
    )


def predict_complexity(features: StructuralFeatures, table: CostTable | None = None,
                       predictor=None) -> ComplexityEstimate:
    """Distribution, argmax class, confidence and cost for one program.

    ``predictor`` is anything with ``predict_proba`` over feature rows whose
    columns follow ``CLASS_ORDER``; the rule predictor is the default.
    """
    table = table or CostTable()
    predictor = predictor or RuleComplexityPredictor()
    return estimate_from_distribution(predictor.predict_proba([features])[0], table)


def estimate_source(source: str, table: CostTable | None = None, predictor=None) -> ComplexityEstimate:
    return predict_complexity(extract_features(source), table, predictor)


# ---------------------------------------------------------------------------
# Cyclomatic complexity


def _decision_points(node: ast.AST) -> int:
    """Decision points under ``node``, not descending into nested functions or classes."""
    count = 0
    for child in ast.iter_child_nodes(node):
        if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef, ast.Lambda, ast.ClassDef)):
            continue
        if isinstance(child, (ast.If, ast.For, ast.AsyncFor, ast.While, ast.IfExp, ast.ExceptHandler)):
            count += 1
        elif isinstance(child, ast.BoolOp):
            count += len(child.values) - 1
        elif isinstance(child, ast.comprehension):
            count += 1 + len(child.ifs)
        elif isinstance(child, ast.match_case):
            count += 1
        count += _decision_points(child)
    return count


def _function_nodes(tree: ast.AST):
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.Lambda)):
            yield node


def cyclomatic_complexity(source: str) -> int | None:
    """Sum over functions of (1 + decision points); None if the source does not parse.

    Decision points outside any function are added to the total; a program
    with no functions counts as a single unit with base 1.
    """
    try:
        tree = ast.parse(source)
    except (SyntaxError, ValueError):
        return None
    functions = list(_function_nodes(tree))
    module_points = _decision_points(tree)
    if not functions:
        return 1 + module_points
    return module_points + sum(1 + _decision_points(fn) for fn in functions)


__all__ = [
    "CLASS_ORDER",
    "ComplexityClass",
    "ComplexityEstimate",
    "CostTable",
    "FeatureExtractor",
    "RuleComplexityPredictor",
    "StructuralFeatures",
    "cost_score",
    "cyclomatic_complexity",
    "estimate_source",
    "extract_features",
    "predict_complexity",
]
