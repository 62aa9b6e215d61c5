import numpy as np
import pytest
import torch

from graspfield.runtime import configure

configure(1, True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def sphere_scene():
    from graspfield.synthetic.grasp import generate_grasp_scene
    from graspfield.synthetic.objects import ObjectSpec

    return generate_grasp_scene(ObjectSpec("sphere", (0.035,)), 0, seed=0)


@pytest.fixture(scope="session")
def small_dataset(sphere_scene):
    from graspfield.synthetic.dataset import make_dataset

    return make_dataset(sphere_scene, n_views=3, resolution=24, seed=0)


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
