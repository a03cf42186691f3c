import numpy as np
import pytest

from pnbm.data import RatingDataset, SplitSpec, center, split

FIXTURE_LINES = "1\t10\t4.0\n1\t20\t2.0\n2\t10\t5.0\n2\t30\t1.0\n"


@pytest.fixture
def fixture_file(tmp_path):
    p = tmp_path / "fixture.tsv"
    p.write_text(FIXTURE_LINES)
    return p


def dataset(triplets, num_users=None, num_items=None, scale=None):
    u, i, r = zip(*triplets)
    return RatingDataset.from_arrays(u, i, r, num_users, num_items, scale)


def planted(n_users=20, n_items=10, seed=0, density=0.75):
    """Two item clusters; each user leans toward one of them."""
    rng = np.random.default_rng(seed)
    cluster = np.arange(n_items) % 2
    taste = rng.choice([-1.0, 1.0], size=n_users)
    trip = []
    for u in range(n_users):
        for i in range(n_items):
            if rng.random() < density:
                lean = taste[u] if cluster[i] == 0 else -taste[u]
                r = np.clip(np.round(3 + 1.5 * lean + rng.normal(0, 0.3)), 1, 5)
                trip.append((u, i, float(r)))
    return RatingDataset.from_arrays(*zip(*trip), n_users, n_items, (1.0, 5.0))


@pytest.fixture
def planted_parts():
    ds = planted()
    return split(ds, SplitSpec(0.8, 0.1, 0.1, seed=3))


@pytest.fixture
def planted_view(planted_parts):
    return center(planted_parts[0])
