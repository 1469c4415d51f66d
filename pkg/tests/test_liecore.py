import numpy as np
import pytest

import liecore
from liecore import AlgebraElement, GroupElement
from errors import DegenerateInputError, NotUnipotentError, SingularMatrixError, UnsupportedAlgebraError


def test_sl_rank():
    assert liecore.sl_rank('sl2r') == 2
    assert liecore.sl_rank('sl3r') == 3
    with pytest.raises(UnsupportedAlgebraError):
        liecore.sl_rank('so3')
    with pytest.raises(UnsupportedAlgebraError):
        liecore.sl_rank('sl1r')


def test_algebra_element_rejects_trace():
    with pytest.raises(DegenerateInputError):
        AlgebraElement(np.eye(3), 'sl3r')


def test_group_element_rejects_determinant():
    with pytest.raises(DegenerateInputError):
        GroupElement(2 * np.eye(2), 'sl2r')


def test_killing_form_sl2():
    basis = liecore.sl_basis(2)
    H = basis[0]
    assert np.isclose(liecore.killing_form(H, H, basis), 8.0)


def test_killing_form_is_trace_form(rng):
    # B(X, Y) = 2n tr(XY) on sl(n)
    for n in (2, 3):
        basis = liecore.sl_basis(n)
        mats = np.stack([b.entries for b in basis])
        for _ in range(50):
            X = AlgebraElement(np.tensordot(rng.normal(size=len(basis)), mats, 1), f'sl{n}r')
            Y = AlgebraElement(np.tensordot(rng.normal(size=len(basis)), mats, 1), f'sl{n}r')
            expected = 2 * n * np.trace(X.entries @ Y.entries)
            assert np.isclose(liecore.killing_form(X, Y, basis), expected)


def test_theta_gram_positive_definite():
    gram = liecore.theta_gram(liecore.sl_basis(3))
    assert np.allclose(gram, gram.T)
    assert np.linalg.eigvalsh(gram).min() > 0


def test_cartan_decompose():
    X = AlgebraElement([[1.0, 2.0, 0.0], [5.0, -1.0, 3.0], [0.0, 1.0, 0.0]], 'sl3r')
    k, p = liecore.cartan_decompose(X)
    assert np.allclose(k.entries, -k.entries.T)
    assert np.allclose(p.entries, p.entries.T)
    assert np.allclose(k.entries + p.entries, X.entries)


def test_restricted_roots_sl3():
    datum = liecore.restricted_roots('sl3r')
    summary = datum.summary()
    assert summary['rank'] == 2
    assert summary['step'] == 2
    assert summary['positive_roots'] == ['e1-e2', 'e1-e3', 'e2-e3']
    assert summary['grading'] == {'1': ['e1-e2', 'e2-e3'], '2': ['e1-e3']}
    assert summary['simple_roots'] == ['e1-e2', 'e2-e3']


def test_restricted_roots_sl2():
    datum = liecore.restricted_roots('sl2r')
    assert datum.rank == 1
    assert datum.step == 1
    assert len(datum.positive) == 1


def test_root_sum():
    datum = liecore.restricted_roots('sl3r')
    r12, r23, r13 = datum.index((0, 1)), datum.index((1, 2)), datum.index((0, 2))
    assert datum.root_sum(r12, r23) == r13
    assert datum.root_sum(r12, r13) is None


def test_lower_central_series_heisenberg():
    basis = [liecore.elementary(3, 0, 1), liecore.elementary(3, 1, 2), liecore.elementary(3, 0, 2)]
    dims, step = liecore.lower_central_series(basis)
    assert dims == [3, 1]
    assert step == 2


def test_lower_central_series_not_nilpotent():
    with pytest.raises(DegenerateInputError):
        liecore.lower_central_series(liecore.sl_basis(2))


def test_iwasawa_random(rng):
    for n in (2, 3):
        for _ in range(100):
            g = liecore.random_sl(n, rng)
            f = liecore.iwasawa_decompose(g)
            assert np.abs(f.product() - g.entries).max() < 1e-9
            assert np.abs(f.k.entries.T @ f.k.entries - np.eye(n)).max() < 1e-9
            assert np.isclose(np.linalg.det(f.k.entries), 1.0)
            assert np.all(np.diag(f.a.entries) > 0)
            assert np.allclose(np.diag(f.n.entries), 1.0)
            assert np.allclose(np.tril(f.n.entries, -1), 0.0)


def test_iwasawa_flat_coordinates():
    a = np.diag([np.e, 1.0, 1.0 / np.e])
    f = liecore.iwasawa_decompose(a)
    # log a = diag(1, 0, -1) against the orthonormal flat basis
    assert np.allclose(f.flat_coordinates(), [1 / np.sqrt(2), 3 / np.sqrt(6)])


def test_iwasawa_singular():
    g = np.array([[1e7, 0.0], [0.0, 1e-7]])
    with pytest.raises(SingularMatrixError):
        liecore.iwasawa_decompose(g)


def test_log_unipotent_inverts_exp():
    X = AlgebraElement([[0.0, 1.5, -2.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]], 'sl3r')
    assert np.allclose(liecore.log_unipotent(liecore.exp_matrix(X)).entries, X.entries)


def test_log_unipotent_rejects_lower_entries():
    with pytest.raises(NotUnipotentError):
        liecore.log_unipotent(np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_ad_matrix_sl2():
    basis = liecore.sl_basis(2)
    assert np.allclose(liecore.ad_matrix(basis[0], basis), np.diag([0.0, 2.0, -2.0]))


def test_ad_is_a_representation(rng):
    basis = liecore.sl_basis(3)
    mats = np.stack([b.entries for b in basis])
    X, Y = (AlgebraElement(np.tensordot(rng.normal(size=len(basis)), mats, 1), 'sl3r') for _ in range(2))
    adX, adY = liecore.ad_matrix(X, basis), liecore.ad_matrix(Y, basis)
    assert np.allclose(liecore.ad_matrix(liecore.bracket(X, Y), basis), adX @ adY - adY @ adX)


def test_cartan_subalgebra_basis_is_orthonormal():
    for n in (2, 3, 4):
        basis = liecore.cartan_subalgebra_basis(n)
        assert len(basis) == n - 1
        gram = np.array([[np.trace(x.entries @ y.entries) for y in basis] for x in basis])
        assert np.allclose(gram, np.eye(n - 1))


def test_element_json():
    X = liecore.elementary(3, 0, 2)
    assert np.array_equal(AlgebraElement.from_json(X.to_json()).entries, X.entries)
    g = GroupElement(np.diag([2.0, 1.0, 0.5]), 'sl3r')
    assert GroupElement.from_json(g.to_json()).group_tag == 'sl3r'


def test_cartan_involution():
    X = liecore.elementary(3, 0, 1)
    assert np.array_equal(liecore.cartan_involution(X).entries, -liecore.elementary(3, 1, 0).entries)


def _random_element(n, rng):
    basis = liecore.sl_basis(n)
    mats = np.stack([b.entries for b in basis])
    return AlgebraElement(np.tensordot(rng.normal(size=len(basis)), mats, 1), f'sl{n}r')


def test_jacobi_identity(rng):
    for _ in range(20):
        X, Y, Z = (_random_element(3, rng) for _ in range(3))
        total = liecore.bracket(X, liecore.bracket(Y, Z)) + liecore.bracket(Y, liecore.bracket(Z, X)) \
            + liecore.bracket(Z, liecore.bracket(X, Y))
        assert np.abs(total.entries).max() < 1e-9


def test_brackets_of_basis():
    H, E = liecore.sl_basis(2)[:2]
    assert np.array_equal(liecore.bracket(H, E).entries, 2 * E.entries)
    E12, E23, E13 = liecore.elementary(3, 0, 1), liecore.elementary(3, 1, 2), liecore.elementary(3, 0, 2)
    assert np.array_equal(liecore.bracket(E12, E23).entries, E13.entries)
    assert np.array_equal(liecore.cartan_involution(H).entries, -H.entries)


def test_iwasawa_example():
    f = liecore.iwasawa_decompose(np.array([[2.0, 1.0], [0.0, 0.5]]))
    assert np.allclose(f.k.entries, np.eye(2))
    assert np.allclose(f.a.entries, np.diag([2.0, 0.5]))
    assert np.allclose(f.n.entries, [[1.0, 0.5], [0.0, 1.0]])


def test_iwasawa_recovers_factors(rng):
    for _ in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        logs = rng.normal(size=3)
        a = np.diag(np.exp(logs - logs.mean()))
        n = np.eye(3) + np.triu(rng.normal(size=(3, 3)), 1)
        f = liecore.iwasawa_decompose(q @ a @ n)
        assert np.allclose(f.k.entries, q, atol=1e-9)
        assert np.allclose(f.a.entries, a, atol=1e-9)
        assert np.allclose(f.n.entries, n, atol=1e-9)


def test_log_exp_round_trip(rng):
    for _ in range(100):
        X = AlgebraElement(np.triu(rng.normal(size=(3, 3)), 1), 'sl3r')
        assert np.allclose(liecore.log_unipotent(liecore.exp_matrix(X)).entries, X.entries, atol=1e-9)
