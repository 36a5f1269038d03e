import numpy as np
import pytest

from hydrocar.model import Dataset
from hydrocar.network import PipeSegment, WaterNetwork, parse_network

Y_NETWORK_NODES = "node_id,x,y\nA,0,0\nB,10,0\nC,0,30\n"
Y_NETWORK_SEGMENTS = "from_node,to_node,length_m\nA,B,10\nA,C,30\n"


@pytest.fixture
def y_network():
    return parse_network(Y_NETWORK_NODES, Y_NETWORK_SEGMENTS)


@pytest.fixture
def chain():
    """A ->(5) X ->(7) B."""
    return WaterNetwork(
        ("A", "X", "B"), (PipeSegment("A", "X", 5.0), PipeSegment("X", "B", 7.0))
    )


def make_dataset(net, node_ids, outcomes, ages=None, genders=None, houses=None, locations=None):
    n = len(node_ids)
    return Dataset(
        ids=np.array([f"p{i}" for i in range(n)], dtype=object),
        outcome=np.asarray(outcomes, dtype=int),
        age=np.asarray(ages if ages is not None else [40.0] * n, dtype=float),
        gender=np.asarray(genders if genders is not None else [0] * n, dtype=int),
        house_id=np.array(houses if houses is not None else [f"h{i}" for i in range(n)], dtype=object),
        node_id=np.array(node_ids, dtype=object),
        location=np.asarray(locations if locations is not None else np.full((n, 2), np.nan), dtype=float),
        network=net,
    )
