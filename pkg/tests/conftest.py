import pytest

from capplan.core import Configuration, JobGraph, ResourceProfile, linear_graph
from capplan.simulator import GroundTruthSpec, OperatorGroundTruth


def chain_spec(bases, cap=1e9, noise=0.0, tau=20.0, **gt_kwargs):
    names = [f"op{i}" for i in range(len(bases))]
    graph = linear_graph(names)
    per_op = {n: OperatorGroundTruth(b, noise_level=noise, **gt_kwargs) for n, b in zip(names, bases)}
    return GroundTruthSpec(graph, per_op, cap, warmup_time_constant_s=tau)


def config_of(spec, values):
    return Configuration(dict(zip(spec.graph.operators, values)))


@pytest.fixture
def abc_graph():
    return JobGraph(("A", "B", "C"), (("source", "A"), ("A", "B"), ("B", "C"), ("C", "sink")))


@pytest.fixture
def p4096():
    return ResourceProfile(4096)
