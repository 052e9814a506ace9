import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from entsource import quantum_state as qs
from entsource.quantum_state import DensityMatrix, StateError

from conftest import random_density

seeds = st.integers(0, 2**32 - 1)
ranks = st.integers(1, 4)


def test_phi_plus_matrix():
    rho = qs.bell_state("phi+").elements
    expected = np.zeros((4, 4))
    expected[np.ix_([0, 3], [0, 3])] = 0.5
    np.testing.assert_allclose(rho, expected, atol=1e-15)


@pytest.mark.parametrize("kind", qs.BELL_KINDS)
def test_bell_states_pure(kind):
    rho = qs.bell_state(kind)
    assert np.trace(rho.elements).real == pytest.approx(1)
    assert qs.purity(rho) == pytest.approx(1)


def test_psi_minus_populations():
    rho = qs.bell_state("psi-").elements
    assert rho[1, 1].real == pytest.approx(0.5)
    assert rho[0, 0].real == pytest.approx(0.0)


def test_unknown_bell_kind():
    with pytest.raises(ValueError):
        qs.bell_state("chi+")


@pytest.mark.parametrize(
    "a, b, p",
    [("H", "H", 0.5), ("H", "V", 0.0), ("D", "D", 0.5), ("R", "L", 0.5), ("R", "R", 0.0)],
)
def test_phi_plus_born(a, b, p):
    assert qs.coincidence_probability(qs.bell_state(), a, b) == pytest.approx(p, abs=1e-15)


def test_angle_analyzers_match_labels():
    rho = qs.werner(0.6)
    assert qs.coincidence_probability(rho, 45.0, 135) == pytest.approx(qs.coincidence_probability(rho, "D", "A"))
    assert qs.coincidence_probability(rho, 0, 90.0) == pytest.approx(qs.coincidence_probability(rho, "H", "V"))


def test_coincidence_probability_rejects_invalid():
    with pytest.raises(StateError):
        qs.coincidence_probability(np.eye(4), "H", "H")


def test_partial_trace_examples():
    np.testing.assert_allclose(qs.partial_trace(qs.bell_state(), "A"), np.eye(2) / 2, atol=1e-15)
    sigma = qs.bloch_state([0.3, -0.2, 0.5])
    tau = qs.bloch_state([0, 0, -1])
    prod = qs.product_state(sigma, tau)
    np.testing.assert_allclose(qs.partial_trace(prod, "A"), sigma, atol=1e-15)
    np.testing.assert_allclose(qs.partial_trace(prod, "B"), tau, atol=1e-15)
    for p in (0.0, 0.37, 1.0):
        np.testing.assert_allclose(qs.partial_trace(qs.werner(p), "A"), np.eye(2) / 2, atol=1e-15)


def test_scalar_metric_examples():
    mixed = qs.maximally_mixed()
    assert qs.purity(mixed) == pytest.approx(0.25)
    assert qs.von_neumann_entropy(mixed) == pytest.approx(2.0)
    assert qs.renyi2_entropy(qs.bell_state(), "A") == pytest.approx(math.log(2), abs=1e-12)
    assert qs.purity(qs.werner(0.9)) == pytest.approx(0.8575, abs=1e-12)
    assert qs.von_neumann_entropy(qs.bell_state()) == pytest.approx(0, abs=1e-9)


def test_werner_examples():
    np.testing.assert_allclose(qs.werner(1).elements, qs.bell_state().elements, atol=1e-15)
    np.testing.assert_allclose(qs.werner(0).elements, np.eye(4) / 4, atol=1e-15)
    assert qs.coincidence_probability(qs.werner(0.9), "H", "H") == pytest.approx(0.475, abs=1e-12)


@pytest.mark.parametrize("p", [-0.1, 1.1])
def test_werner_range(p):
    with pytest.raises(ValueError):
        qs.werner(p)


def test_mix_weight_validation():
    with pytest.raises(ValueError):
        qs.mix([qs.bell_state(), qs.maximally_mixed()], [0.7, 0.7])
    with pytest.raises(ValueError):
        qs.mix([qs.bell_state()], [-1.0])


def test_density_matrix_contract():
    with pytest.raises(StateError):
        DensityMatrix(np.diag([0.5, 0.5, 0.5, -0.5]).astype(complex))
    with pytest.raises(StateError):
        DensityMatrix(np.eye(4) / 3)
    bad = np.eye(4, dtype=complex) / 4
    bad[0, 1] = 0.1
    with pytest.raises(StateError):
        DensityMatrix(bad)


def test_tiny_negative_eigenvalues_clamped():
    m = np.diag([0.5, 0.5 + 5e-11, -5e-11, 0.0]).astype(complex)
    rho = DensityMatrix(m)
    assert qs.von_neumann_entropy(rho) == pytest.approx(1.0, abs=1e-9)


def test_json_round_trip():
    rho = DensityMatrix(random_density(4))
    text = json.dumps(rho.to_json())
    back = DensityMatrix.from_json(json.loads(text))
    np.testing.assert_array_equal(back.elements, rho.elements)
    assert rho.to_json()["basis"] == ["HH", "HV", "VH", "VV"]


def test_source_model_fractions():
    with pytest.raises(ValueError):
        qs.SourceStateModel(bell_fraction=0.5, depolarized_fraction=0.2, impurity_fraction=0.2)
    with pytest.raises(ValueError):
        qs.SourceStateModel(pre_rotation_a=np.array([[1, 1], [0, 1]]))


def test_source_model_impurity():
    m = qs.SourceStateModel(bell_fraction=0.9, impurity_fraction=0.1, impurity_a=(1, 0, 0), impurity_b=(1, 0, 0))
    red = qs.partial_trace(m.to_density_matrix(), "A")
    assert np.linalg.norm(qs.bloch_vector(red)) == pytest.approx(0.1)


def test_rotation_unitary_moves_bloch_vector():
    u = qs.rotation_unitary([0, 0, 1], 90)
    h = qs.projector("H")
    np.testing.assert_allclose(qs.bloch_vector(u @ h @ u.conj().T), [0, 1, 0], atol=1e-12)


# -- properties ---------------------------------------------------------------------


@given(seeds, ranks)
def test_random_states_valid(seed, rank):
    rho = DensityMatrix(random_density(seed, rank))
    lam = rho.eigenvalues()
    assert qs.purity(rho) == pytest.approx(float(np.sum(lam**2)), abs=1e-12)
    assert 0.25 - 1e-12 <= qs.purity(rho) <= 1 + 1e-12
    assert -1e-12 <= qs.von_neumann_entropy(rho) <= 2 + 1e-12
    for side in "AB":
        assert -1e-12 <= qs.renyi2_entropy(rho, side) <= math.log(2) + 1e-12
        red = qs.partial_trace(rho, side)
        assert np.trace(red).real == pytest.approx(1)
        assert np.linalg.eigvalsh(red).min() > -1e-12


@given(seeds, st.sampled_from([("H", "V"), ("D", "A"), ("R", "L")]), st.sampled_from([("H", "V"), ("D", "A"), ("R", "L")]))
def test_born_probabilities_sum_to_one(seed, pa, pb):
    rho = random_density(seed)
    total = sum(qs.coincidence_probability(rho, a, b) for a in pa for b in pb)
    assert total == pytest.approx(1, abs=1e-10)


@given(seeds)
def test_pure_state_properties(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    v /= np.linalg.norm(v)
    rho = np.outer(v, v.conj())
    assert qs.von_neumann_entropy(rho) == pytest.approx(0, abs=1e-9)
    assert qs.renyi2_entropy(rho, "A") == pytest.approx(qs.renyi2_entropy(rho, "B"), abs=1e-9)


@given(seeds, seeds)
def test_fidelity_properties(s1, s2):
    rho, sigma = random_density(s1), random_density(s2, 2)
    assert qs.fidelity(rho, rho) == pytest.approx(1, abs=1e-9)
    f = qs.fidelity(rho, sigma)
    assert f == pytest.approx(qs.fidelity(sigma, rho), abs=1e-9)
    assert -1e-12 <= f <= 1 + 1e-9


def _bloch(rng):
    v = rng.normal(size=3)
    return tuple(v / np.linalg.norm(v) * rng.uniform(0, 1))


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), seeds)
def test_source_model_always_valid(b, d, i, seed):
    total = b + d + i
    if total == 0:
        return
    rng = np.random.default_rng(seed)
    m = qs.SourceStateModel(
        bell_kind=str(rng.choice(qs.BELL_KINDS)),
        bell_fraction=b / total,
        depolarized_fraction=d / total,
        impurity_fraction=i / total,
        impurity_a=_bloch(rng),
        impurity_b=_bloch(rng),
        pre_rotation_a=qs.rotation_unitary(rng.normal(size=3), rng.uniform(0, 360)),
        pre_rotation_b=qs.rotation_unitary(rng.normal(size=3), rng.uniform(0, 360)),
    )
    qs.check_density(m.to_density_matrix().elements)
