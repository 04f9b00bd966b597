"""Structural checks: what the selection estimator is allowed to see."""

import ast
import inspect
from pathlib import Path

from hybridfl import estimator, protocol

FORBIDDEN = {"X", "survivors", "dr", "reliability", "reliabilities", "P", "profiles", "clients",
             "client", "ids", "k"}


def test_estimator_signatures_only_take_observables():
    assert list(inspect.signature(estimator.estimate_theta).parameters) == ["history", "window"]
    assert list(inspect.signature(estimator.selection_proportion).parameters) == ["C", "theta_hat", "n_r"]
    assert list(inspect.signature(estimator.compute_q).parameters) == ["S_count", "C", "n_r"]
    fields = list(estimator.RegionHistory.__dataclass_fields__)
    assert fields == ["n_r", "theta_init", "C_r", "q_r", "S_count"]
    for fn in (estimator.estimate_theta, estimator.selection_proportion, estimator.compute_q,
               estimator.RegionHistory.append):
        assert not FORBIDDEN & set(inspect.signature(fn).parameters)


def _calls(tree, names):
    for node in ast.walk(tree):
        if isinstance(node, ast.Call):
            f = node.func
            name = f.id if isinstance(f, ast.Name) else getattr(f, "attr", None)
            if name in names:
                yield node


def test_protocol_never_feeds_ground_truth_to_estimator():
    tree = ast.parse(Path(protocol.__file__).read_text())
    calls = [c for c in _calls(tree, {"estimate_theta", "selection_proportion", "compute_q", "append"})
             if not (isinstance(c.func, ast.Attribute) and c.func.attr == "append")
             or "histories" in ast.unparse(c.func.value)]
    assert any("histories" in ast.unparse(c) for c in calls)
    for call in calls:
        for node in ast.walk(call):
            # nothing derived from the survivor set X or drop-out draws
            if isinstance(node, ast.Attribute):
                assert node.attr not in {"X", "dr", "reliability", "completion"}, ast.unparse(call)
            if isinstance(node, ast.Name):
                assert node.id not in {"X", "draws", "profiles"}, ast.unparse(call)


def test_monte_carlo_oracle_is_unused_by_protocol():
    src = Path(protocol.__file__).read_text()
    assert "expected_survivors_mc" not in src and "sample_survivor_counts" not in src
