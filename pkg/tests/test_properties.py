"""Randomized structural properties of the spaces and operators.

Every test draws from an explicitly seeded generator, so failures
reproduce; the helpers return measured numbers that the acceptance gate
reuses without re-sampling.
"""

import numpy as np

import helpers
from helpers import get_grid


class TestWeightAlgebra:
    def test_identities(self):
        d = helpers.weight_algebra_defects(np.random.default_rng(101))
        assert d["multiplicativity"] <= 1e-12
        assert d["shift"] <= 1e-12
        assert d["monotonicity_excess"] <= 1e-15
        assert d["regularising_excess"] <= 1e-15

    def test_embedding_has_constant_one(self):
        assert helpers.embedding_excess(get_grid(512),
                                        np.random.default_rng(102)) <= 1e-9

    def test_regularising_multiplication_contracts(self):
        assert helpers.regularising_excess(get_grid(512),
                                           np.random.default_rng(103)) <= 1e-9


class TestOperatorStructure:
    def test_bilinearity(self):
        d = helpers.bilinearity_defects(get_grid(512),
                                        np.random.default_rng(104))
        assert d["b2_scaling"] <= 1e-13
        assert d["bw_scaling"] <= 1e-13
        assert d["b2_additivity"] <= 1e-6
        assert d["bw_additivity"] <= 1e-6

    def test_moment_transfer_two_routes(self):
        d = helpers.fubini_defects(get_grid(1024), np.random.default_rng(7))
        assert d["one"] <= 1e-6
        assert d["exp"] <= 1e-6

    def test_three_linearization_routes(self):
        g = get_grid(1024)
        rng = np.random.default_rng(105)
        for _ in range(2):
            assert helpers.three_form_gap(helpers.rand_smooth(g, rng)) <= 1e-6


class TestContinuityProbes:
    """Operator norms probed over twenty random admissible inputs.

    The estimates guarantee uniform bounds; numerically that shows up as
    ratio samples that are finite, positive, below a frozen ceiling, and
    not heavy-tailed relative to their own median.
    """

    def test_probe_ratios(self):
        ratios = helpers.continuity_ratios(get_grid(512),
                                           np.random.default_rng(20240817))
        ceilings = {"b2": 2.0, "bw": 2.0, "l": 5.0, "a0": 10.0}
        for name, r in ratios.items():
            assert np.all(np.isfinite(r)), name
            assert np.all(r > 0.0), name
            assert r.max() <= ceilings[name], name
            assert r.max() <= 10.0 * np.median(r), name
