import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magicbench.core import PauliString, PauliTerm, TfimModel, expectation_of_terms, spins, tfim_terms
from magicbench.errors import DimensionError, NumericalError
from magicbench.exact import dense_hamiltonian
from magicbench.nqs.rbm import (
    LOG_ZERO,
    RbmParameters,
    energy_and_gradient,
    exact_weights,
    full_basis,
    local_energies,
    local_energy,
    log_amplitude,
    log_amplitude_symmetric,
    log_amplitudes,
    rbm_statevector,
)


def random_params(n, m, rng, scale=0.5):
    def c(*shape):
        return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))

    return RbmParameters(c(n), c(m), c(m, n))


def hidden_sum(params, s):
    """Amplitude by explicit summation over every hidden configuration."""
    total = 0j
    for h in itertools.product((-1, 1), repeat=params.m):
        h = np.array(h)
        total += np.exp(params.a @ s + params.b @ h + h @ params.W @ s)
    return total


def oracle_vector(params, symmetric=False):
    n = params.n
    amps = []
    for bits in range(1 << n):
        s = spins(bits, n)
        amp = hidden_sum(params, s)
        if symmetric:
            amp = (amp + hidden_sum(params, -s)) / 2
        amps.append(amp)
    amps = np.array(amps)
    return amps / np.linalg.norm(amps)


def full_sum_energy(flat, n, m, terms, symmetric):
    psi = rbm_statevector(RbmParameters.from_flat(flat, n, m), symmetric)
    return expectation_of_terms(terms, psi)


class TestAmplitudes:
    def test_zero_params(self):
        p = RbmParameters.zeros(5, 2)
        for bits in (0, 7, 31):
            assert log_amplitude(p, bits) == pytest.approx(10 * math.log(2))
            assert log_amplitude_symmetric(p, bits) == pytest.approx(10 * math.log(2))

    def test_visible_only(self, rng):
        a = rng.normal(size=4) + 1j * rng.normal(size=4)
        p = RbmParameters(a, np.zeros(3), np.zeros((3, 4)))
        s = spins(0b1010, 4)
        assert log_amplitude(p, 0b1010) == pytest.approx(a @ s + 3 * math.log(2))

    def test_hidden_sum_oracle(self, rng):
        p = random_params(2, 3, rng)
        for bits in range(4):
            expected = hidden_sum(p, spins(bits, 2))
            assert np.exp(log_amplitude(p, bits)) == pytest.approx(expected, rel=1e-12)

    def test_symmetric_two_term_oracle(self, rng):
        p = random_params(2, 2, rng)
        for bits in range(4):
            s = spins(bits, 2)
            expected = (hidden_sum(p, s) + hidden_sum(p, -s)) / 2
            assert np.exp(log_amplitude_symmetric(p, bits)) == pytest.approx(expected, rel=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(0, 63))
    def test_symmetric_flip_invariance_is_bitwise(self, seed, bits):
        p = random_params(6, 6, np.random.default_rng(seed), scale=1.0)
        assert log_amplitude_symmetric(p, bits) == log_amplitude_symmetric(p, bits ^ 63)

    def test_exact_cancellation_is_log_zero(self):
        # a single visible bias of i*pi/2 gives psi(-s) = -psi(s)
        p = RbmParameters(np.array([1j * np.pi / 2]), np.zeros(0), np.zeros((0, 1)))
        assert log_amplitude_symmetric(p, 0).real == LOG_ZERO.real

    def test_large_weights_stay_finite(self):
        p = RbmParameters(np.zeros(3), np.zeros(3), np.full((3, 3), 400.0))
        assert np.isfinite(log_amplitude(p, 0))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_raises(self):
        p = RbmParameters(np.array([np.inf]), np.zeros(1), np.zeros((1, 1)))
        with pytest.raises(NumericalError):
            log_amplitude(p, 0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            RbmParameters(np.zeros(3), np.zeros(2), np.zeros((3, 2)))
        with pytest.raises(DimensionError):
            log_amplitudes(RbmParameters.zeros(3), np.ones((1, 4)))

    def test_flat_roundtrip(self, rng):
        p = random_params(3, 6, rng)
        q = RbmParameters.from_flat(p.flat(), 3, 6)
        np.testing.assert_array_equal(q.W, p.W)
        assert p.n_params == 3 + 6 + 18


class TestStatevector:
    def test_zero_params_uniform(self):
        np.testing.assert_allclose(rbm_statevector(RbmParameters.zeros(4)), np.full(16, 0.25))

    def test_matches_oracle(self, rng):
        p = random_params(3, 3, rng)
        np.testing.assert_allclose(rbm_statevector(p), oracle_vector(p), atol=1e-12)
        np.testing.assert_allclose(rbm_statevector(p, True), oracle_vector(p, True), atol=1e-12)

    def test_symmetric_invariant_under_global_flip(self, rng):
        psi = rbm_statevector(random_params(5, 5, rng), True)
        np.testing.assert_array_equal(psi, psi[::-1])

    def test_normalized(self, rng):
        assert np.linalg.norm(rbm_statevector(random_params(6, 12, rng))) == pytest.approx(1.0)


class TestLocalEnergy:
    def test_zero_field_all_up(self, rng):
        terms = tfim_terms(TfimModel(5, -1.0, 0.0))
        assert local_energy(random_params(5, 5, rng), 0, terms) == pytest.approx(-5.0)

    def test_uniform_state_field_only(self):
        terms = [t for t in tfim_terms(TfimModel(4, 0.0, 0.8)) if t.op.z_mask == 0]
        for bits in (0, 5, 15):
            assert local_energy(RbmParameters.zeros(4), bits, terms) == pytest.approx(-3.2)

    @pytest.mark.parametrize("symmetric", [False, True])
    def test_dense_oracle(self, rng, symmetric):
        model = TfimModel(4, -1.0, 0.9)
        terms = tfim_terms(model)
        p = random_params(4, 4, rng)
        psi = rbm_statevector(p, symmetric)
        expected = (dense_hamiltonian(model) @ psi) / psi
        got = local_energies(p, full_basis(4), terms, symmetric)
        np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-10)

    def test_general_pauli_terms(self, rng):
        # multi-site flips with Y phases exercise the generic branch
        labels = ["YXIZ", "ZZYY", "XIXI", "IIIZ"]
        terms = [PauliTerm(PauliString.from_label(l), c) for l, c in zip(labels, (0.7, -0.3, 1.1, 0.4))]
        H = sum(t.coefficient * t.op.matrix() for t in terms)
        p = random_params(4, 8, rng)
        psi = rbm_statevector(p)
        np.testing.assert_allclose(local_energies(p, full_basis(4), terms), (H @ psi) / psi, rtol=1e-10)


class TestGradient:
    @pytest.mark.parametrize("symmetric", [False, True])
    def test_full_sum_energy(self, rng, symmetric):
        terms = tfim_terms(TfimModel(4, -1.0, 1.3))
        p = random_params(4, 4, rng, 0.3)
        est = energy_and_gradient(p, terms, symmetric=symmetric)
        assert est.energy == pytest.approx(expectation_of_terms(terms, rbm_statevector(p, symmetric)), abs=1e-12)
        assert abs(est.energy_imag) < 1e-12

    @pytest.mark.parametrize("symmetric", [False, True])
    def test_finite_differences(self, rng, symmetric):
        n, m = 4, 4
        terms = tfim_terms(TfimModel(n, -1.0, 1.0))
        p = random_params(n, m, rng, 0.3)
        flat = p.flat()
        step = 1e-5
        fd = np.zeros(flat.size, dtype=complex)
        for k in range(flat.size):
            for unit, part in ((1.0, "real"), (1j, "imag")):
                e = np.zeros(flat.size, dtype=complex)
                e[k] = unit * step
                d = (full_sum_energy(flat + e, n, m, terms, symmetric)
                     - full_sum_energy(flat - e, n, m, terms, symmetric)) / (2 * step)
                fd[k] += d if part == "real" else 1j * d
        g = energy_and_gradient(p, terms, symmetric=symmetric).gradient
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_decoupled_hidden_biases(self, rng):
        p = RbmParameters(0.3 * rng.normal(size=4), 0.2 * rng.normal(size=4), np.zeros((4, 4)))
        est = energy_and_gradient(p, tfim_terms(TfimModel(4, -1.0, 0.0)))
        np.testing.assert_allclose(est.gradient[4:8], 0, atol=1e-14)

    def test_weighted_basis_equals_full_sum(self, rng):
        terms = tfim_terms(TfimModel(4, -1.0, 0.6))
        p = random_params(4, 4, rng, 0.3)
        full = energy_and_gradient(p, terms)
        sigma = full_basis(4)
        w = exact_weights(p, sigma, False)
        # duplicate and shuffle the basis; splitting weights must not change anything
        order = rng.permutation(32)
        sig2 = np.concatenate([sigma, sigma])[order]
        w2 = np.concatenate([w * 0.25, w * 0.75])[order]
        mc = energy_and_gradient(p, terms, sig2, w2)
        assert mc.energy == pytest.approx(full.energy, abs=1e-12)
        np.testing.assert_allclose(mc.gradient, full.gradient, atol=1e-12)
        np.testing.assert_allclose(mc.S, full.S, atol=1e-12)

    def test_covariance_is_hermitian_psd(self, rng):
        p = random_params(4, 4, rng, 0.3)
        S = energy_and_gradient(p, tfim_terms(TfimModel(4, -1.0, 1.0))).S
        np.testing.assert_allclose(S, S.conj().T, atol=1e-14)
        assert np.linalg.eigvalsh(S).min() > -1e-12
