"""Restricted Boltzmann machine neural quantum states."""
from .rbm import (
    LOG_ZERO,
    RbmParameters,
    VmcEstimate,
    energy_and_gradient,
    local_energies,
    local_energy,
    log_amplitude,
    log_amplitude_symmetric,
    log_amplitudes,
    rbm_statevector,
)
from .sampler import SamplerConfig, sample, sample_spins

__all__ = [
    "LOG_ZERO",
    "RbmParameters",
    "SamplerConfig",
    "VmcEstimate",
    "energy_and_gradient",
    "local_energies",
    "local_energy",
    "log_amplitude",
    "log_amplitude_symmetric",
    "log_amplitudes",
    "rbm_statevector",
    "sample",
    "sample_spins",
]
