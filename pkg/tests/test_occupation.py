import math

import numpy as np
import pytest
from closed_forms import kl
from hypothesis import given
from hypothesis import strategies as st

from nclln.exceptions import InfeasibleBeta
from nclln.large_deviations import contraction_check, contraction_rate, donsker_varadhan_J, simplex_grid
from nclln.process_models import TransitionModel, flip_chain, iid_model


def test_stationary_has_zero_cost():
    m = TransitionModel.from_kernel([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]])
    assert donsker_varadhan_J(m, m.stationary) == pytest.approx(0.0, abs=1e-8)


def test_iid_is_relative_entropy():
    m = iid_model([0.5, 0.5])
    assert donsker_varadhan_J(m, [0.9, 0.1]) == pytest.approx(kl([0.9, 0.1], [0.5, 0.5]), abs=1e-8)
    assert donsker_varadhan_J(m, [0.9, 0.1]) == pytest.approx(0.3680642071684971, abs=1e-8)


@given(st.floats(0.02, 0.98), st.floats(0.1, 0.9))
def test_iid_relative_entropy_property(x, p):
    m = iid_model([p, 1 - p])
    assert donsker_varadhan_J(m, [x, 1 - x]) == pytest.approx(kl([x, 1 - x], [p, 1 - p]), abs=1e-7)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.7])
def test_point_mass_bound(p):
    m = flip_chain(1 - p)
    assert donsker_varadhan_J(m, [1.0, 0.0]) <= -math.log(p) + 1e-9


def test_simplex_grid():
    g = simplex_grid(3, 4)
    assert g.shape == (15, 3)
    np.testing.assert_allclose(g.sum(axis=1), 1.0)


def test_contraction_zero_at_mean():
    # the 400-point grid has spacing 1/399, so the closest measure to mu is 1/399 off in mean
    assert contraction_check(flip_chain(0.1), [1, -1], 0.0) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.5])
def test_contraction_matches_rate(beta):
    m = flip_chain(0.1)
    assert abs(contraction_rate(m, [1, -1], beta) - contraction_check(m, [1, -1], beta)) <= 5e-3


def test_infeasible():
    with pytest.raises(InfeasibleBeta):
        contraction_check(flip_chain(0.1), [1, -1], 1.5)
