import numpy as np
import pytest

from evprofiler.features import FEATURE_NAMES, FeatureMatrix


@pytest.fixture
def feature_matrix_builder():
    """Build a FeatureMatrix with a given sessions-per-EV layout.

    Rows are cheap separable stand-ins (a distinct per-EV offset plus noise
    in the leading columns), enough for the sampling/balancing machinery
    that only cares about labels and row identity.
    """

    def build(counts: dict[str, int], seed: int = 0) -> FeatureMatrix:
        rng = np.random.default_rng(seed)
        ids, labels, rows = [], [], []
        for index, ev in enumerate(sorted(counts)):
            for k in range(counts[ev]):
                ids.append(f"{ev}-{k:04d}")
                labels.append(ev)
                row = rng.normal(0, 0.05, len(FEATURE_NAMES))
                row[0] += 3.0 * index
                row[1] += 1.5 * index
                row[2] += 0.5 * (index % 7)
                rows.append(row)
        return FeatureMatrix(tuple(ids), tuple(labels),
                             np.array(rows).reshape(len(ids), len(FEATURE_NAMES)))

    return build
