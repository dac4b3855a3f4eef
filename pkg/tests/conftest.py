import numpy as np
import pytest

from ghostflood.imagecore import parse_transform
from ghostflood.mock import MockDetector, MockDetectorConfig, default_template_library
from ghostflood.oracle import QueryBudget
from ghostflood.patchdb import harvest
from ghostflood.synthetic import write_corpus


@pytest.fixture(scope="session")
def library():
    return default_template_library()


@pytest.fixture(scope="session")
def detector(library):
    return MockDetector(MockDetectorConfig(templates=library))


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, library):
    directory = tmp_path_factory.mktemp("corpus")
    write_corpus(directory, library, n_images=8, size=320, seed=11)
    return directory


@pytest.fixture(scope="session")
def corpus_paths(corpus_dir):
    return sorted(corpus_dir.glob("*.png"))


@pytest.fixture(scope="session")
def patch_index(corpus_paths, detector):
    budget = QueryBudget(4000)
    rng = np.random.default_rng(0)
    augspec = [parse_transform("jitter"), parse_transform("posterize:4")]
    return harvest(corpus_paths, detector, augspec, budget, rng)
