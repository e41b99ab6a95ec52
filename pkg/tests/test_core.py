import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magicbench.core import (
    EmptyTermsWarning,
    PauliString,
    PauliTerm,
    TfimModel,
    apply_pauli,
    apply_terms,
    basis_state,
    bits_from_spins,
    expectation_of_terms,
    pauli_expectation,
    plus_state,
    spins,
    tfim_terms,
)
from magicbench.errors import ContractViolation, DimensionError, InvalidModelError

from .conftest import haar_state

# single-qubit matrices in the bit-0 = spin-up basis
I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0, -1.0]).astype(complex)
ONE_QUBIT = {"I": I2, "X": X, "Y": Y, "Z": Z}


def kron_label(label):
    """Dense matrix of a label whose character j acts on qubit j (bit j of the index)."""
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        # qubit j is bit j, so later characters are more significant
        out = np.kron(ONE_QUBIT[ch], out)
    return out


def pauli_strategy(max_n=4):
    return st.integers(1, max_n).flatmap(
        lambda n: st.tuples(st.integers(0, (1 << n) - 1), st.integers(0, (1 << n) - 1), st.just(n))
    )


class TestPauliString:
    def test_x_on_zero(self):
        out = apply_pauli(PauliString.from_label("X"), basis_state(1, 0))
        np.testing.assert_allclose(out, [0, 1])

    def test_y_on_zero_is_i_one(self):
        out = apply_pauli(PauliString.from_label("Y"), basis_state(1, 0))
        np.testing.assert_allclose(out, [0, 1j])

    def test_z_on_one(self):
        out = apply_pauli(PauliString.from_label("Z"), basis_state(1, 1))
        np.testing.assert_allclose(out, [0, -1])

    @pytest.mark.parametrize("label", ["".join(p) for p in itertools.product("IXYZ", repeat=3)])
    def test_matrix_matches_kronecker_oracle(self, label):
        np.testing.assert_allclose(PauliString.from_label(label).matrix(), kron_label(label), atol=1e-15)

    def test_label_roundtrip(self):
        for label in ("IXYZ", "YYII", "ZIXY"):
            assert PauliString.from_label(label).label == label

    def test_bad_character(self):
        with pytest.raises(ValueError):
            PauliString.from_label("XA")

    def test_mask_out_of_range(self):
        with pytest.raises(DimensionError):
            PauliString(4, 0, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            apply_pauli(PauliString.from_label("XX"), basis_state(3))

    @given(pauli_strategy())
    def test_involution(self, p):
        x, z, n = p
        psi = haar_state(n, np.random.default_rng(x * 31 + z))
        op = PauliString(x, z, n)
        np.testing.assert_allclose(apply_pauli(op, apply_pauli(op, psi)), psi, atol=1e-12)

    @given(pauli_strategy())
    def test_hermitian(self, p):
        m = PauliString(*p).matrix()
        np.testing.assert_allclose(m, m.conj().T, atol=1e-15)

    def test_input_not_modified(self, rng):
        psi = haar_state(3, rng)
        before = psi.copy()
        apply_pauli(PauliString.from_label("XYZ"), psi)
        np.testing.assert_array_equal(psi, before)


class TestPauliExpectation:
    def test_z_on_zero(self):
        assert pauli_expectation(PauliString.from_label("Z"), basis_state(1)) == 1.0

    def test_bell_stabilizers(self):
        bell = np.array([1, 0, 0, 1]) / np.sqrt(2)
        assert pauli_expectation(PauliString.from_label("XX"), bell) == pytest.approx(1.0)
        assert pauli_expectation(PauliString.from_label("ZI"), bell) == pytest.approx(0.0)

    def test_identity_is_one(self, rng):
        psi = haar_state(4, rng)
        assert pauli_expectation(PauliString(0, 0, 4), psi) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ContractViolation):
            pauli_expectation(PauliString.from_label("Z"), np.array([1.0, 1.0]))

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_purity_identity(self, n, rng):
        psi = haar_state(n, rng)
        total = sum(
            pauli_expectation(PauliString(x, z, n), psi) ** 2
            for x in range(1 << n)
            for z in range(1 << n)
        )
        assert total == pytest.approx(2**n, abs=1e-10)


class TestSpins:
    def test_bit_clear_is_up(self):
        np.testing.assert_array_equal(spins(0b0110, 4), [1, -1, -1, 1])

    def test_roundtrip(self):
        bits = np.arange(16)
        np.testing.assert_array_equal(bits_from_spins(spins(bits, 4)), bits)


class TestTfim:
    def test_periodic_three_sites(self):
        terms = tfim_terms(TfimModel(3, -1.0, 0.5))
        zz = [(t.op.z_mask, t.coefficient) for t in terms if t.op.x_mask == 0]
        xs = [(t.op.x_mask, t.coefficient) for t in terms if t.op.z_mask == 0]
        assert zz == [(0b011, -1.0), (0b110, -1.0), (0b101, -1.0)]
        assert xs == [(0b001, -0.5), (0b010, -0.5), (0b100, -0.5)]

    def test_zero_field_terms_retained(self):
        terms = tfim_terms(TfimModel(4, -1.0, 0.0))
        assert len(terms) == 8
        assert [t.coefficient for t in terms[4:]] == [0.0] * 4

    def test_open_chain(self):
        terms = tfim_terms(TfimModel(3, -1.0, 1.0, periodic=False))
        assert sum(t.op.x_mask == 0 for t in terms) == 2
        assert sum(t.op.z_mask == 0 for t in terms) == 3

    @pytest.mark.parametrize("n", [1, 2])
    def test_small_periodic_rejected(self, n):
        with pytest.raises(InvalidModelError):
            TfimModel(n, periodic=True)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidModelError):
            TfimModel(4, h=float("nan"))

    def test_coefficient_must_be_finite(self):
        with pytest.raises(ValueError):
            PauliTerm(PauliString.from_label("Z"), float("inf"))


class TestExpectationOfTerms:
    def test_aligned_state(self):
        assert expectation_of_terms(tfim_terms(TfimModel(4, -1.0, 0.0)), basis_state(4)) == -4.0

    def test_plus_state_field_only(self):
        terms = [t for t in tfim_terms(TfimModel(4, -1.0, 2.0)) if t.op.z_mask == 0]
        assert expectation_of_terms(terms, plus_state(4)) == pytest.approx(-8.0)

    def test_unnormalized_input(self, rng):
        terms = tfim_terms(TfimModel(4, -1.0, 0.7))
        psi = haar_state(4, rng)
        assert expectation_of_terms(terms, 3.0 * psi) == pytest.approx(expectation_of_terms(terms, psi))

    def test_empty_terms_warns(self):
        with pytest.warns(EmptyTermsWarning):
            assert expectation_of_terms([], basis_state(2)) == 0.0

    def test_apply_terms_matches_matrix(self, rng):
        terms = tfim_terms(TfimModel(4, -1.0, 1.3))
        H = sum(t.coefficient * kron_label(t.op.label) for t in terms)
        psi = haar_state(4, rng)
        np.testing.assert_allclose(apply_terms(terms, psi), H @ psi, atol=1e-12)

    def test_cyclic_relabeling_invariance(self, rng):
        n = 5
        model = TfimModel(n, -1.0, 0.8)
        psi = haar_state(n, rng)
        e0 = expectation_of_terms(tfim_terms(model), psi)
        # relabel site j -> j+1: permute the state's bits and the terms together
        idx = np.arange(1 << n)
        rot = ((idx << 1) | (idx >> (n - 1))) & ((1 << n) - 1)
        psi_rot = np.empty_like(psi)
        psi_rot[rot] = psi
        e1 = expectation_of_terms(tfim_terms(model), psi_rot)
        assert e0 == pytest.approx(e1, abs=1e-12)
