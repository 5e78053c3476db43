import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakfp.assembly import (
    AssemblyError, CoefficientLayout, DiffusionStructure, DriftSpec, LinearSystem, LmmScheme, apply_lmm,
    build_system, default_scheme, flatten_index_diffusion, flatten_index_drift, stack_systems, weak_features,
)
from weakfp.data import AggregateData, Snapshot, make_rng
from weakfp.dictionary import complete_polynomial_basis, eval_basis
from weakfp.kernels import GaussianKernel, kernel_grad, kernel_hess, kernel_value
from weakfp.regression import least_squares, reconstruct_model

SQ2PI = np.sqrt(2 * np.pi)


def test_layout_sizes_and_indices():
    drift = DriftSpec.shared(complete_polynomial_basis(2, 4))
    full = DiffusionStructure("full-polynomial", 2, complete_polynomial_basis(2, 4))
    lay = CoefficientLayout.build(drift, full)
    assert lay.n == 90
    assert flatten_index_drift(0, 0, lay) == 0
    assert flatten_index_drift(1, 0, lay) == 15
    assert flatten_index_diffusion(0, 0, 0, lay) == 30
    diag = CoefficientLayout.build(DriftSpec.per_axis(3, 3), DiffusionStructure("constant-diagonal", 3))
    assert diag.n - diag.n_drift == 3
    with pytest.raises(IndexError):
        flatten_index_diffusion(0, 1, 0, diag)
    with pytest.raises(IndexError):
        flatten_index_drift(3, 0, diag)


def test_banded_parameter_count():
    lay = CoefficientLayout.build(DriftSpec.per_axis(10, 3), DiffusionStructure("banded", 10, width=1))
    assert lay.n == 6 * 10 - 1
    with pytest.raises(ValueError):
        DiffusionStructure("banded", 3, width=3)


def test_structure_json_round_trip():
    for s in (DiffusionStructure("constant-diagonal", 2), DiffusionStructure("banded", 4, width=2),
              DiffusionStructure("diagonal-polynomial", 1, complete_polynomial_basis(1, 2))):
        assert DiffusionStructure.from_json(s.to_json()) == s
    d = DriftSpec.per_axis(3, 2)
    assert DriftSpec.from_json(d.to_json()) == d


def _one_d(samples_per_time):
    return AggregateData(1, tuple(Snapshot(float(t), np.atleast_2d(s).T) for t, s in enumerate(samples_per_time)))


def test_single_sample_at_center():
    k = GaussianKernel([0.3], [0.85])
    data = _one_d([[0.3], [0.3]])
    drift = DriftSpec.shared(complete_polynomial_basis(1, 3))
    y, B = weak_features(data, k, drift, DiffusionStructure("constant-diagonal", 1))
    assert y[0] == pytest.approx(1 / (0.85 * SQ2PI))
    assert np.all(B[:, :4] == 0)
    assert B[0, 4] == pytest.approx(-kernel_value(k, np.array([0.3])) / 0.85**2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3))
def test_features_match_brute_force(seed, d):
    rng = make_rng(seed)
    data = AggregateData(d, tuple(Snapshot(float(t), rng.normal(size=(int(rng.integers(1, 6)), d))) for t in range(3)))
    k = GaussianKernel(rng.normal(size=d), rng.uniform(0.5, 1.5, d))
    drift = DriftSpec.shared(complete_polynomial_basis(d, 2))
    structure = DiffusionStructure("full-polynomial", d, complete_polynomial_basis(d, 1))
    y, B = weak_features(data, k, drift, structure)
    lay = CoefficientLayout.build(drift, structure)
    for l, snap in enumerate(data.snapshots):
        yy, row = 0.0, np.zeros(lay.n)
        for x in snap.samples:
            yy += kernel_value(k, x)
            g, H, lam, lamD = kernel_grad(k, x), kernel_hess(k, x), eval_basis(drift.bases[0], x), eval_basis(structure.basis, x)
            for i in range(d):
                for j in range(drift.size):
                    row[flatten_index_drift(i, j, lay)] += lam[j] * g[i]
            for (r, s) in structure.entries():
                for kk in range(structure.basis.size):
                    row[flatten_index_diffusion(r, s, kk, lay)] += lamD[kk] * H[r, s]
        n = snap.samples.shape[0]
        assert y[l] == pytest.approx(yy / n, rel=1e-12)
        np.testing.assert_allclose(B[l], row / n, rtol=1e-10, atol=1e-14)


def test_symmetric_pair_drift_column():
    k = GaussianKernel([0.0], [1.0])
    data = _one_d([[-0.7, 0.7], [-0.7, 0.7]])
    drift = DriftSpec.shared(complete_polynomial_basis(1, 1))
    _, B = weak_features(data, k, drift, DiffusionStructure("constant-diagonal", 1))
    g = kernel_grad(k, np.array([0.7]))[0]
    brute = 0.5 * ((-0.7) * (-g) + 0.7 * g)
    assert B[0, 1] == pytest.approx(brute)
    assert B[0, 0] == pytest.approx(0.0, abs=1e-17)


def test_trapezoid_example():
    y = np.array([0.0, 1.0, 2.0])
    B = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    A, yh = apply_lmm(LmmScheme("trapezoidal-variable"), y, B, [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(yh, [1, 1])
    np.testing.assert_array_equal(A, [(B[0] + B[1]) / 2, (B[1] + B[2]) / 2])


def test_milne_exact_on_constants():
    h = 0.25
    y = np.array([0.0, 2 * h, 4 * h])
    A, yh = apply_lmm(LmmScheme("milne"), y, np.ones((3, 1)), [0.0, h, 2 * h])
    assert yh[0] - A[0, 0] * 2.0 == pytest.approx(0.0)
    with pytest.raises(AssemblyError):
        apply_lmm(LmmScheme("milne"), y, np.ones((3, 1)), [0.0, h, 3 * h])


def test_bdf2_reduces_to_classical():
    h = 0.1
    y = np.array([1.0, 2.0, 4.0])
    B = np.array([[0.0], [0.0], [1.0]])
    A, yh = apply_lmm(LmmScheme("bdf2-variable"), y, B, [0.0, h, 2 * h])
    assert yh[0] == pytest.approx(4.0 - 4 / 3 * 2.0 + 1 / 3 * 1.0)
    assert A[0, 0] == pytest.approx(2 / 3 * h)


def test_scheme_requirements():
    with pytest.raises(AssemblyError):
        apply_lmm(LmmScheme("bdf2-variable"), np.zeros(2), np.zeros((2, 1)), [0.0, 1.0])
    with pytest.raises(ValueError):
        LmmScheme("adams")
    assert default_scheme([0, 0.1, 0.2]).kind == "milne"
    assert default_scheme([0, 0.1, 0.3]).kind == "trapezoidal-variable"
    assert default_scheme([0, 0.1]).kind == "trapezoidal-variable"


@pytest.mark.parametrize("kind,order", [("trapezoidal-variable", 2), ("milne", 4), ("bdf2-variable", 2)])
def test_lmm_convergence_order(kind, order):
    # y' = B(t) z with z=1, y = sin t, B = cos t; residual of the discrete equation shrinks at the scheme order
    errs = []
    hs = [0.1, 0.05, 0.025]
    for h in hs:
        t = np.arange(0, 1 + 1e-12, h)
        if kind != "milne":
            t = t + 0.3 * h * np.sin(7 * t)  # mildly uneven steps
        A, yh = apply_lmm(LmmScheme(kind), np.sin(t), np.cos(t)[:, None], t)
        errs.append(np.abs(yh - A[:, 0]).sum())
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope == pytest.approx(order, abs=0.3)


def test_stacking_order_and_permutation_invariance():
    rng = make_rng(4)
    lay = CoefficientLayout.build(DriftSpec.shared(complete_polynomial_basis(1, 1)), DiffusionStructure("constant-diagonal", 1))
    blocks = [(rng.normal(size=(3, 3)), rng.normal(size=3)) for _ in range(2)]
    sys = stack_systems(blocks, lay)
    assert sys.matrix.shape == (6, 3)
    np.testing.assert_array_equal(sys.matrix[:3], blocks[0][0])
    assert np.array_equal(stack_systems(blocks[:1], lay).matrix, blocks[0][0])
    z1 = least_squares(sys)
    z2 = least_squares(stack_systems(blocks[::-1], lay))
    np.testing.assert_allclose(z1, z2, atol=1e-12)
    with pytest.raises(AssemblyError):
        stack_systems([blocks[0], (np.zeros((3, 2)), np.zeros(3))], lay)


def test_build_system_rows_and_provenance():
    rng = make_rng(0)
    data = AggregateData(2, tuple(Snapshot(0.1 * t, rng.normal(size=(50, 2))) for t in range(4)))
    ks = [GaussianKernel(rng.normal(size=2), [1.0, 1.0]) for _ in range(5)]
    drift = DriftSpec.per_axis(2, 3)
    sys = build_system(data, ks, drift, DiffusionStructure("constant-diagonal", 2))
    assert sys.matrix.shape == (5 * (4 - 2), 2 * 4 + 2)
    assert sys.provenance["scheme"] == "milne"
    # scaling all rows leaves the least-squares minimizer unchanged
    np.testing.assert_allclose(least_squares((3.0 * sys.matrix, 3.0 * sys.rhs)), least_squares(sys), rtol=1e-9)


def test_row_normalisation_option():
    rng = make_rng(1)
    data = AggregateData(1, tuple(Snapshot(0.1 * t, rng.normal(size=(40, 1))) for t in range(3)))
    ks = [GaussianKernel([m], [1.0]) for m in (-1.0, 0.0, 1.0)]
    drift = DriftSpec.shared(complete_polynomial_basis(1, 1))
    sys = build_system(data, ks, drift, DiffusionStructure("constant-diagonal", 1), normalize_blocks=True)
    assert np.isfinite(sys.matrix).all()


def test_reconstruct_example_and_dump(tmp_path):
    drift = DriftSpec.shared(complete_polynomial_basis(1, 3))
    st_ = DiffusionStructure("constant-diagonal", 1)
    lay = CoefficientLayout.build(drift, st_)
    m = reconstruct_model([0, 1, 0, -1, 0.5], lay, drift, st_)
    assert m.drift_at(np.array([[2.0]]))[0, 0] == pytest.approx(2 - 8)
    assert m.sigma[0] == pytest.approx(1.0)
    sys = LinearSystem(np.eye(5), np.ones(5), lay)
    sys.save_csv(tmp_path / "A.csv", tmp_path / "b.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "A.csv", delimiter=","), np.eye(5))
