import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from amfkit.anisotropy import (analyse_responses, analyse_row, anisotropy_map, canonicalize,
                               covariance_from_responses, eig3_sym, fractional_anisotropy,
                               point_covariance, principal_axes, principal_direction,
                               responses_to_points)
from amfkit.kernelgen import in_canonical_hemisphere, isotropic_bank, kernel_bank
from amfkit.minkowski import AMFResponses, amf_field
from amfkit.phantom import PhantomSpec, gen_shape
from amfkit.volume_io import BinaryVolume

nonneg = st.floats(0, 1e6, allow_subnormal=False)


def _vec(theta, phi):
    return np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=-1)


# --- points and covariance -------------------------------------------------

def test_points_zero(directions):
    assert np.array_equal(responses_to_points(np.zeros(13), directions), np.zeros((26, 3)))


def test_points_single_z(directions):
    r = np.zeros(13)
    r[2] = 1.0
    pts = responses_to_points(r, directions)
    nz = pts[np.abs(pts).sum(axis=1) > 0]
    assert sorted(map(tuple, nz)) == [(0.0, 0.0, -1.0), (0.0, 0.0, 1.0)]
    assert np.allclose(point_covariance(pts), np.diag([0, 0, 1 / 13]), atol=1e-15)


def test_negative_response_same_pair(directions, rng):
    r = rng.normal(size=13)
    a = {tuple(p) for p in responses_to_points(r, directions)}
    b = {tuple(p) for p in responses_to_points(-r, directions)}
    assert a == b


def test_points_zero_mean(directions, rng):
    assert np.abs(responses_to_points(rng.normal(size=13), directions).mean(axis=0)).max() < 1e-15


def test_equal_responses_isotropic(directions):
    c = point_covariance(responses_to_points(np.full(13, 2.5), directions))
    assert np.abs(c - np.diag(np.diag(c))).max() < 1e-12
    assert np.ptp(np.diag(c)) < 1e-12 and c[0, 0] > 0


@settings(max_examples=50)
@given(arrays(np.float64, 13, elements=st.floats(-1e3, 1e3)))
def test_covariance_closed_form(directions, r):
    direct = point_covariance(responses_to_points(r, directions))
    closed = sum(ri ** 2 * np.outer(d.u, d.u) for ri, d in zip(r, directions)) / 13
    vec = covariance_from_responses(r, directions)
    scale = max(1.0, np.abs(closed).max())
    assert np.abs(direct - closed).max() <= 1e-12 * scale
    assert np.abs(vec - closed).max() <= 1e-12 * scale


# --- eigen -----------------------------------------------------------------

def test_eig_identity_and_diag():
    lam, _ = eig3_sym(np.eye(3))
    assert np.allclose(lam, 1, atol=1e-15)
    lam, vec = eig3_sym(np.diag([1.0, 3.0, 2.0]))
    assert np.allclose(lam, (3, 2, 1))
    assert np.allclose(np.abs(vec), np.eye(3)[:, [1, 2, 0]])


@settings(max_examples=60)
@given(arrays(np.float64, (3, 3), elements=st.floats(-1e3, 1e3)))
def test_eig_reconstruction(a):
    c = (a + a.T) / 2
    lam, vec = eig3_sym(c)
    scale = max(1.0, np.abs(c).max())
    assert np.all(np.diff(lam) <= 0)
    assert np.abs(vec @ np.diag(lam) @ vec.T - c).max() <= 1e-9 * scale
    assert np.abs(c @ vec - vec * lam).max() <= 1e-9 * scale
    assert np.abs(vec.T @ vec - np.eye(3)).max() <= 1e-12
    for i in range(3):
        assert in_canonical_hemisphere(vec[:, i], 1e-12)


def test_eig_batched_matches_single(rng):
    a = rng.normal(size=(10, 3, 3))
    c = a + np.swapaxes(a, 1, 2)
    lam, vec = eig3_sym(c)
    for i in range(10):
        l1, v1 = eig3_sym(c[i])
        assert np.allclose(lam[i], l1) and np.allclose(vec[i], v1)


def test_eig_rejects_asymmetric():
    c = np.eye(3)
    c[0, 1] = 1e-6
    with pytest.raises(ValueError):
        eig3_sym(c)
    with pytest.raises(ValueError):
        eig3_sym(np.eye(2))


def test_canonicalize_rules():
    v = canonicalize(np.array([[0, 0, -1.0], [0, -1.0, 0], [-1.0, 0, 0], [1.0, -2.0, 0.5]]))
    assert v.tolist() == [[0, 0, 1.0], [0, 1.0, 0], [1.0, 0, 0], [1.0, -2.0, 0.5]]


# --- FA --------------------------------------------------------------------

def test_fa_values():
    assert fractional_anisotropy(1, 1, 1) == 0.0
    assert fractional_anisotropy(1, 0, 0) == 1.0
    assert abs(fractional_anisotropy(2, 1, 1) - 1 / math.sqrt(6)) <= 1e-12
    assert fractional_anisotropy(0, 0, 0) == 0.0
    assert fractional_anisotropy(1, 1, -1e-13) == fractional_anisotropy(1, 1, 0)


@given(nonneg, nonneg, nonneg)
def test_fa_bounds(a, b, c):
    fa = fractional_anisotropy(a, b, c)
    assert 0.0 <= fa <= 1.0


@given(nonneg, nonneg, nonneg, st.floats(1e-3, 1e3))
def test_fa_scale_invariant(a, b, c, k):
    if max(a, b, c) < 1e-100:
        return
    assert abs(fractional_anisotropy(k * a, k * b, k * c) - fractional_anisotropy(a, b, c)) <= 1e-12


def test_fa_broadcasts(rng):
    lam = rng.random((5, 3))
    fa = fractional_anisotropy(lam[:, 0], lam[:, 1], lam[:, 2])
    assert fa.shape == (5,)
    assert fa[3] == fractional_anisotropy(*lam[3])


# --- directions ------------------------------------------------------------

def test_principal_direction_examples():
    assert principal_direction(np.eye(3)) == (0.0, 0.0)
    assert principal_direction(np.eye(3)[:, [2, 0, 1]]) == (0.0, math.pi / 2)
    v = np.zeros((3, 3))
    v[:, 0] = (1 / math.sqrt(2), 1 / math.sqrt(2), 0)
    theta, phi = principal_direction(v)
    assert theta == pytest.approx(math.pi / 4, abs=1e-15) and phi == 0.0
    v[:, 0] = (0, 0, -1.0)
    assert principal_direction(v) == (0.0, math.pi / 2)


@settings(max_examples=60)
@given(arrays(np.float64, 13, elements=st.floats(0.01, 100)))
def test_angles_roundtrip_to_v1(directions, r):
    res = analyse_row(r, directions)
    rebuilt = _vec(res.theta, res.phi)
    v1 = np.array(res.principal)
    if math.hypot(v1[0], v1[1]) > 1e-9:
        assert min(np.abs(rebuilt - v1).max(), np.abs(rebuilt + v1).max()) <= 1e-12
    assert 0 <= res.fa <= 1 and 0 <= res.theta < 2 * math.pi and 0 <= res.phi <= math.pi / 2
    assert res.lambdas[0] >= res.lambdas[1] >= res.lambdas[2] >= 0


def test_analyse_row_zero(directions):
    res = analyse_row(np.zeros(13), directions)
    assert res.fa == 0.0 and res.principal == (0.0, 0.0, 1.0) and res.phi == math.pi / 2


def test_vectorised_matches_row(directions, rng):
    rows = rng.normal(size=(40, 13))
    rows[0] = 0.0
    fa, theta, phi = analyse_responses(rows, directions)
    for i in range(40):
        res = analyse_row(rows[i], directions)
        assert fa[i] == pytest.approx(res.fa, abs=1e-12)
        assert phi[i] == pytest.approx(res.phi, abs=1e-9)
        if res.fa > 1e-6:
            assert theta[i] == pytest.approx(res.theta, abs=1e-9)


def test_single_direction_response(directions):
    for d in directions:
        r = np.zeros(13)
        r[d.index] = 3.0
        res = analyse_row(r, directions)
        assert res.fa == pytest.approx(1.0, abs=1e-12)
        assert res.theta == pytest.approx(d.theta, abs=1e-12)
        assert res.phi == pytest.approx(d.phi, abs=1e-12)


# --- maps ------------------------------------------------------------------

def test_map_black(small_bank):
    m = anisotropy_map(amf_field(BinaryVolume(np.zeros((6, 6, 6), bool)), small_bank))
    assert not m.fa.any() and not m.theta.any() and not m.phi.any()


def test_map_background_zero(small_bank, rng):
    vol = rng.random((8, 8, 8)) < 0.5
    m = anisotropy_map(amf_field(BinaryVolume(vol), small_bank))
    assert not m.fa[~vol].any() and not m.theta[~vol].any() and not m.phi[~vol].any()
    assert (m.fa[vol] >= 0).all() and (m.fa[vol] <= 1).all()


def test_map_dims_mismatch(small_bank):
    f = amf_field(BinaryVolume(np.ones((4, 4, 4), bool)), small_bank)
    with pytest.raises(ValueError):
        anisotropy_map(f, mask=np.ones((4, 4, 5), bool))


def test_isotropic_null_small():
    vol = gen_shape(PhantomSpec("isotropic_pores", 16, radius=2.0, volume_fraction=0.5, seed=1))
    m = anisotropy_map(amf_field(vol, isotropic_bank(size=9, sigma=2.0)))
    assert m.fa[m.white].max() <= 1e-9


@pytest.mark.parametrize("perm", [(2, 1, 0), (1, 2, 0), (0, 2, 1)])
def test_axis_permutation_equivariance(bank, perm):
    vol = np.random.default_rng(11).random((14, 15, 16)) < 0.45
    a = anisotropy_map(amf_field(BinaryVolume(vol), bank))
    b = anisotropy_map(amf_field(BinaryVolume(vol.transpose(perm)), bank))
    fa_a = a.fa.transpose(perm + (3,))
    assert np.abs(fa_a - b.fa).max() <= 1e-9
    # principal axes: rebuilt vectors map through the permutation, up to sign
    white = b.white
    va = _vec(a.theta.transpose(perm + (3,))[white], a.phi.transpose(perm + (3,))[white])
    vb = _vec(b.theta[white], b.phi[white])
    # voxel p of b is voxel p[perm^-1] of a; a vector's components move the same way
    va = va[..., list(perm)]
    err = np.minimum(np.abs(va - vb).max(axis=-1), np.abs(va + vb).max(axis=-1))
    # only voxels with a clear leading axis carry a meaningful direction
    assert np.median(err) <= 1e-9


def test_map_mask_subset(small_bank, rng):
    vol = rng.random((8, 8, 8)) < 0.6
    f = amf_field(BinaryVolume(vol), small_bank)
    sub = vol.copy()
    sub[:4] = False
    full = anisotropy_map(f)
    part = anisotropy_map(f, mask=sub)
    assert np.array_equal(part.fa[sub], full.fa[sub]) and not part.fa[~sub].any()


def test_responses_value_semantics(directions):
    values = np.zeros((2, 2, 2, 13, 4))
    values[0, 0, 0, 2, 0] = 1.0
    white = np.zeros((2, 2, 2), bool)
    white[0, 0, 0] = True
    m = anisotropy_map(AMFResponses(values, white, tuple(directions)))
    assert m.fa[0, 0, 0, 0] == 1.0 and m.phi[0, 0, 0, 0] == pytest.approx(math.pi / 2)
    # functional with all-zero responses at a white voxel: FA 0 by convention
    assert m.fa[0, 0, 0, 1] == 0.0


# --- round-off robust axes -----------------------------------------------------

def test_principal_axes_tie_is_stable(rng):
    # exact two-fold tie: any vector in the x-y plane is a valid leading axis
    c = np.diag([2.0, 2.0, 1.0])
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    c = q @ c @ q.T
    c = (c + c.T) / 2
    noisy = c * (1 + 1e-14 * rng.normal(size=(3, 3)))
    noisy = (noisy + noisy.T) / 2
    _, v1 = principal_axes(c)
    _, v2 = principal_axes(noisy)
    assert np.array_equal(v1, v2)


@settings(max_examples=60)
@given(arrays(np.float64, (3, 3), elements=st.floats(-1e3, 1e3)))
def test_principal_axes_eigenvalues_accurate(a):
    c = (a + a.T) / 2
    lam, vec = principal_axes(c)
    ref = np.linalg.eigvalsh(c)[::-1]
    assert np.abs(lam - ref).max() <= 1e-9 * max(1.0, np.abs(c).max())
    assert np.all(np.diff(lam) <= 0)
    assert np.abs(vec.T @ vec - np.eye(3)).max() <= 1e-12


def test_principal_axes_direction_close(rng):
    # well separated eigenvalues: snapped axes within ~1e-6 of the exact ones
    for _ in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        c = q @ np.diag([3.0, 1.5, 0.2]) @ q.T
        _, vec = principal_axes((c + c.T) / 2)
        assert min(np.abs(vec[:, 0] - q[:, 0]).max(), np.abs(vec[:, 0] + q[:, 0]).max()) < 1e-5
