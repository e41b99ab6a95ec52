import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magicbench.core import PauliString, PauliTerm, TfimModel, basis_state, expectation_of_terms, tfim_terms
from magicbench.errors import ConfigError, DimensionError
from magicbench.exact import TermOperator, ground_state_ed
from magicbench.vqe import (
    AnsatzConfig,
    AnsatzSimulator,
    VQESolver,
    VqeTrainConfig,
    apply_ansatz,
    load_circuit,
    parameter_shift_gradient,
    save_circuit,
    shots_energy,
    train_vqe,
    vqe_energy,
)

from .conftest import haar_state

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0, -1.0]).astype(complex)


def rot(sigma, theta):
    return math.cos(theta / 2) * I2 - 1j * math.sin(theta / 2) * sigma


def on_qubit(gate, j, n):
    out = np.ones((1, 1))
    for q in range(n):
        out = np.kron(gate if q == j else I2, out)
    return out


def cnot(c, t, n):
    dim = 1 << n
    U = np.zeros((dim, dim))
    for k in range(dim):
        U[k ^ (((k >> c) & 1) << t), k] = 1
    return U


def dense_unitary(config, params):
    n = config.n
    U = np.eye(1 << n, dtype=complex)
    angles = np.asarray(params).reshape(config.layers, 3, n)
    for layer in angles:
        for sigma, block in zip((X, Y, Z), layer):
            for j in range(n):
                U = on_qubit(rot(sigma, block[j]), j, n) @ U
        for c, t in config.cnot_pairs():
            U = cnot(c, t, n) @ U
    return U


def finite_difference(config, params, terms, step=1e-6):
    grad = np.zeros_like(params)
    for k in range(params.size):
        e = np.zeros_like(params)
        e[k] = step
        grad[k] = (vqe_energy(config, params + e, terms) - vqe_energy(config, params - e, terms)) / (2 * step)
    return grad


class TestCircuit:
    def test_zero_angles_fix_zero_state(self):
        cfg = AnsatzConfig(5, 4)
        np.testing.assert_array_equal(apply_ansatz(cfg, np.zeros(cfg.n_params)), basis_state(5))

    def test_rx_pi_convention(self):
        out = apply_ansatz(AnsatzConfig(1, 1), [math.pi, 0.0, 0.0])
        np.testing.assert_allclose(out, [0, -1j], atol=1e-15)

    def test_three_qubit_pairs(self):
        assert AnsatzConfig(3).cnot_pairs() == [(0, 1), (0, 2), (1, 2)]
        assert AnsatzConfig(4, entangler="chain").cnot_pairs() == [(0, 1), (1, 2), (2, 3)]

    @pytest.mark.parametrize("entangler", ["all_pairs_lex", "chain"])
    @pytest.mark.parametrize("layers", [1, 2])
    def test_dense_unitary_oracle(self, rng, entangler, layers):
        cfg = AnsatzConfig(3, layers, entangler)
        params = rng.uniform(-np.pi, np.pi, cfg.n_params)
        psi_in = haar_state(3, rng)
        np.testing.assert_allclose(apply_ansatz(cfg, params, psi_in), dense_unitary(cfg, params) @ psi_in, atol=1e-12)

    def test_unitary(self, rng):
        cfg = AnsatzConfig(4, 2)
        params = rng.uniform(-np.pi, np.pi, cfg.n_params)
        U = np.stack([apply_ansatz(cfg, params, basis_state(4, k)) for k in range(16)], axis=1)
        np.testing.assert_allclose(U.conj().T @ U, np.eye(16), atol=1e-12)

    def test_batched_run_matches_single(self, rng):
        cfg = AnsatzConfig(4, 2)
        batch = rng.uniform(-np.pi, np.pi, (3, cfg.n_params))
        sim = AnsatzSimulator(cfg)
        out = sim.run(batch)
        for k in range(3):
            np.testing.assert_allclose(out[k], sim.run(batch[k]), atol=1e-14)

    def test_wrong_angle_count(self):
        with pytest.raises(DimensionError):
            apply_ansatz(AnsatzConfig(3, 1), np.zeros(5))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AnsatzConfig(3, 0)
        with pytest.raises(ConfigError):
            AnsatzConfig(3, 1, "ring")


class TestEnergy:
    def test_zero_angles_zero_field(self):
        cfg = AnsatzConfig(8)
        assert vqe_energy(cfg, np.zeros(cfg.n_params), tfim_terms(TfimModel(8, -1.0, 0.0))) == -8.0

    def test_shots_within_standard_errors(self):
        cfg = AnsatzConfig(4)
        terms = tfim_terms(TfimModel(4, -1.0, 1.0))
        psi = apply_ansatz(cfg, np.zeros(cfg.n_params))
        mean, stderr = shots_energy(psi, terms, 100_000, np.random.default_rng(0))
        exact = vqe_energy(cfg, np.zeros(cfg.n_params), terms)
        assert abs(mean - exact) < 4 * stderr

    def test_shots_unbiased(self, rng):
        cfg = AnsatzConfig(3, 1)
        terms = tfim_terms(TfimModel(3, -1.0, 0.8))
        params = rng.uniform(-np.pi, np.pi, cfg.n_params)
        psi = apply_ansatz(cfg, params)
        draws = [shots_energy(psi, terms, 200, np.random.default_rng(s)) for s in range(200)]
        means = np.array([d[0] for d in draws])
        exact = expectation_of_terms(terms, psi)
        assert abs(means.mean() - exact) < 4 * means.std(ddof=1) / math.sqrt(len(means))

    def test_shots_mode_requires_shots(self):
        cfg = AnsatzConfig(2, 1)
        with pytest.raises(ConfigError):
            vqe_energy(cfg, np.zeros(cfg.n_params), tfim_terms(TfimModel(2, periodic=False)), "shots", 0)

    def test_shots_reject_mixed_terms(self):
        with pytest.raises(ConfigError):
            shots_energy(basis_state(2), [PauliTerm(PauliString.from_label("XZ"), 1.0)], 10, np.random.default_rng(0))

    @given(st.integers(0, 2**32 - 1))
    def test_variational_bound(self, seed):
        rng = np.random.default_rng(seed)
        model = TfimModel(4, -1.0, 1.3)
        cfg = AnsatzConfig(4, 2)
        e = vqe_energy(cfg, rng.uniform(-np.pi, np.pi, cfg.n_params), tfim_terms(model))
        assert e >= ground_state_ed(model)[0] - 1e-12

    @given(st.integers(0, 2**32 - 1), st.integers(0, 23))
    def test_two_pi_periodic_energy(self, seed, k):
        rng = np.random.default_rng(seed)
        cfg = AnsatzConfig(4, 2)
        terms = tfim_terms(TfimModel(4, -1.0, 0.9))
        params = rng.uniform(-np.pi, np.pi, cfg.n_params)
        shifted = params.copy()
        shifted[k] += 2 * np.pi
        assert vqe_energy(cfg, shifted, terms) == pytest.approx(vqe_energy(cfg, params, terms), abs=1e-12)


class TestGradients:
    def test_single_qubit_field(self):
        # E(theta) = -h <X>; only Ry moves <X> away from zero at theta = 0
        h = 0.7
        cfg = AnsatzConfig(1, 1)
        terms = [PauliTerm(PauliString.from_label("X"), -h)]
        grad = parameter_shift_gradient(cfg, np.zeros(3), terms)
        np.testing.assert_allclose(grad, [0.0, -h, 0.0], atol=1e-14)
        np.testing.assert_allclose(grad, finite_difference(cfg, np.zeros(3), terms), atol=1e-8)

    def test_matches_finite_differences(self, rng):
        cfg = AnsatzConfig(4)
        terms = tfim_terms(TfimModel(4, -1.0, 1.0))
        params = rng.uniform(-np.pi, np.pi, cfg.n_params)
        fd = finite_difference(cfg, params, terms)
        assert np.max(np.abs(parameter_shift_gradient(cfg, params, terms) - fd)) < 1e-6

    def test_adjoint_matches_parameter_shift(self, rng):
        cfg = AnsatzConfig(5, 3)
        terms = tfim_terms(TfimModel(5, -1.0, 0.6))
        params = rng.uniform(-np.pi, np.pi, cfg.n_params)
        psi_in = haar_state(5, rng)
        energy, grad = AnsatzSimulator(cfg).energy_and_gradient(params, TermOperator(terms), psi_in)
        np.testing.assert_allclose(grad, parameter_shift_gradient(cfg, params, terms, psi_in), atol=1e-12)
        assert energy == pytest.approx(vqe_energy(cfg, params, terms, psi_in=psi_in), abs=1e-12)

    def test_zero_field_stationary_at_identity(self):
        cfg = AnsatzConfig(6)
        grad = parameter_shift_gradient(cfg, np.zeros(cfg.n_params), tfim_terms(TfimModel(6, -1.0, 0.0)))
        np.testing.assert_allclose(grad, 0.0, atol=1e-14)


class TestTraining:
    def test_zero_field_recovers_initial_state(self):
        res = train_vqe(TfimModel(8, -1.0, 0.0))
        assert res.energy == pytest.approx(-8.0, abs=1e-6)
        assert res.converged
        assert res.runs[0].epochs <= 5

    def test_strong_field_respects_bound(self):
        model = TfimModel(8, -1.0, 3.0)
        res = train_vqe(model, train_config=VqeTrainConfig(max_restarts=1, seed=2))
        gap = res.energy - ground_state_ed(model)[0]
        assert gap >= 0
        assert len(res.diagnostics["run_energies"]) == res.diagnostics["restarts"]

    def test_restart_agreement_rule(self):
        res = train_vqe(TfimModel(4, -1.0, 0.5), AnsatzConfig(4, 2), VqeTrainConfig(seed=1))
        energies = res.diagnostics["run_energies"]
        if res.converged:
            a, b = energies[-2:]
            assert abs(a - b) / abs(a) <= 1e-4
            assert res.energy == min(a, b)
        else:
            assert len(energies) == 6 and res.energy == min(energies)

    def test_inner_rule(self):
        tc = VqeTrainConfig(max_restarts=0, seed=3)
        run = train_vqe(TfimModel(4, -1.0, 1.0), AnsatzConfig(4, 2), tc).runs[0]
        assert run.converged
        tail = run.history[-3:]
        assert max(tail) - min(tail) <= 1e-6

    def test_shots_mode_runs(self):
        tc = VqeTrainConfig(expectation_mode="shots", shots=200, max_epochs=20, max_restarts=0, seed=0)
        res = train_vqe(TfimModel(3, -1.0, 1.0), AnsatzConfig(3, 1), tc)
        assert len(res.runs[0].history) <= 20
        assert np.isfinite(res.energy)

    def test_parameter_shift_training_agrees_with_adjoint(self):
        model = TfimModel(3, -1.0, 0.8)
        kw = dict(max_restarts=0, max_epochs=40, seed=5)
        a = train_vqe(model, AnsatzConfig(3, 1), VqeTrainConfig(**kw))
        b = train_vqe(model, AnsatzConfig(3, 1), VqeTrainConfig(gradient="parameter_shift", **kw))
        np.testing.assert_allclose(a.params, b.params, atol=1e-9)

    def test_estimator(self):
        est = VQESolver(layers=2, max_restarts=1, seed=0).fit(TfimModel(4, -1.0, 1.0))
        assert est.state_.shape == (16,)
        assert est.energy_ == pytest.approx(expectation_of_terms(tfim_terms(TfimModel(4, -1.0, 1.0)), est.state_))
        assert est.metadata()["restarts"] >= 1


def test_circuit_roundtrip(tmp_path, rng):
    cfg = AnsatzConfig(4, 3, "chain")
    angles = rng.uniform(-np.pi, np.pi, cfg.n_params)
    save_circuit(tmp_path / "c.json", cfg, angles, 11, -3.5, False)
    cfg2, angles2, meta = load_circuit(tmp_path / "c.json")
    assert cfg2 == cfg
    np.testing.assert_array_equal(angles2, angles)
    assert meta == {"seed": 11, "energy": -3.5, "converged": False}
