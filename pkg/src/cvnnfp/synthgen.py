"""Deterministic synthetic RF recordings with device-specific impairments.

Stands in for real captures so experiments run end to end: a unit-power
QPSK-like symbol stream is distorted by a per-device transmit chain
(IQ gain imbalance, phase skew, DC offset, carrier frequency offset with
Wiener phase noise) and white Gaussian noise at a target SNR. Everything
is keyed by explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .datapipe import PARTITION_SPAN, Recording

OVERSAMPLE = 8  # samples per QPSK symbol


@dataclass(frozen=True)
class DeviceImpairment:
    iq_gain_imbalance: float = 0.0   # alpha, |alpha| < 0.5
    iq_phase_skew: float = 0.0       # radians, |phi| < pi/4
    dc_offset_i: float = 0.0
    dc_offset_q: float = 0.0
    cfo: float = 0.0                 # cycles/sample
    phase_noise_std: float = 0.0     # radians/sample
    seed: int = 0

    def validate(self) -> None:
        vals = (self.iq_gain_imbalance, self.iq_phase_skew, self.dc_offset_i,
                self.dc_offset_q, self.cfo, self.phase_noise_std)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("impairment parameters must be finite")
        if abs(self.iq_gain_imbalance) >= 0.5:
            raise ValueError("|gain imbalance| must be < 0.5")
        if abs(self.iq_phase_skew) >= np.pi / 4:
            raise ValueError("|phase skew| must be < pi/4")


@dataclass(frozen=True)
class SynthScenario:
    num_devices: int
    transmissions: int = 1
    partitions: int = 10
    samples_per_transmission: int | None = None
    noise_snr_db: float | None = 20.0
    seed: int = 0

    def min_samples(self) -> int:
        return 3 * self.partitions * PARTITION_SPAN

    @property
    def n_samples(self) -> int:
        n = self.samples_per_transmission or (self.min_samples() + 3000)
        if n < self.min_samples():
            raise ValueError(f"samples_per_transmission must be >= {self.min_samples()}")
        return n


def generate_recording(impairment: DeviceImpairment, n_samples: int, seed: int,
                       snr_db: float | None = None,
                       device_id: int = 0, transmission_id: int = 1) -> Recording:
    """One impaired transmission; bit-identical for identical arguments."""
    impairment.validate()
    rng = np.random.default_rng(seed)
    # unit-power QPSK-like stream, rectangular pulses of OVERSAMPLE samples
    # (oversampling keeps the waveform smooth enough that impairments are
    # visible inside a 100-sample window)
    n_sym = -(-n_samples // OVERSAMPLE)
    sym = rng.integers(0, 4, size=n_sym)
    base = np.exp(1j * (np.pi / 4 + np.pi / 2 * sym))
    base = np.repeat(base, OVERSAMPLE)[:n_samples]
    i = base.real.copy()
    q = base.imag.copy()

    alpha, phi = impairment.iq_gain_imbalance, impairment.iq_phase_skew
    ii = (1.0 + alpha) * i
    qq = np.cos(phi) * q + np.sin(phi) * i
    ii = ii + impairment.dc_offset_i
    qq = qq + impairment.dc_offset_q

    n = np.arange(n_samples)
    theta = 2 * np.pi * impairment.cfo * n
    if impairment.phase_noise_std > 0:
        theta = theta + np.cumsum(rng.normal(0.0, impairment.phase_noise_std, n_samples))
    rotated = (ii + 1j * qq) * np.exp(1j * theta)
    out = rotated

    if snr_db is not None:
        sig_power = np.mean(np.abs(out) ** 2)
        noise_power = sig_power / 10.0 ** (snr_db / 10.0)
        noise = rng.normal(0.0, np.sqrt(noise_power / 2.0), (n_samples, 2))
        out = out + noise[:, 0] + 1j * noise[:, 1]

    return Recording(device_id=device_id, transmission_id=transmission_id,
                     i=out.real.astype(np.float32), q=out.imag.astype(np.float32))


def make_impairments(num_devices: int, seed: int) -> list[DeviceImpairment]:
    """Pairwise well-separated impairment draws (CFO is the main separator)."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(num_devices):
        out.append(DeviceImpairment(
            iq_gain_imbalance=float(-0.15 + 0.3 * k / max(num_devices - 1, 1)
                                    + rng.normal(0, 0.005)),
            iq_phase_skew=float(-0.2 + 0.4 * k / max(num_devices - 1, 1)
                                + rng.normal(0, 0.005)),
            dc_offset_i=float(rng.normal(0, 0.01)),
            dc_offset_q=float(rng.normal(0, 0.01)),
            cfo=float(0.05 + 0.25 * k / max(num_devices - 1, 1)
                      + rng.normal(0, 0.0005)),
            phase_noise_std=0.002,
            seed=int(rng.integers(0, 2 ** 31)),
        ))
    return out


def generate_scenario(scenario: SynthScenario) -> dict:
    """Recordings for every (device, transmission), keyed like datapipe wants."""
    if scenario.num_devices < 2:
        raise ValueError("a scenario needs at least 2 devices")
    impairments = make_impairments(scenario.num_devices, scenario.seed)
    out = {}
    for dev, imp in enumerate(impairments):
        for tx in range(1, scenario.transmissions + 1):
            rec_seed = int(np.random.SeedSequence(
                [scenario.seed, dev, tx]).generate_state(1)[0])
            rec = generate_recording(imp, scenario.n_samples, rec_seed,
                                     snr_db=scenario.noise_snr_db,
                                     device_id=dev, transmission_id=tx)
            out[(dev, tx)] = rec
    return out


def generate_crossterm_task(num_devices: int, seed: int,
                            partitions: int = 10,
                            n_samples: int | None = None) -> dict:
    """Recordings whose label information lives only in the Q channel.

    Every device's I channel is white Gaussian noise from the same
    distribution; Q is white noise shaped by a device-specific two-pole
    resonator, so classes differ only through Q's spectrum. Inputs that
    drop Q therefore carry no label information by construction.
    """
    if num_devices < 2:
        raise ValueError("need at least 2 devices")
    n = n_samples or (3 * partitions * PARTITION_SPAN + 3000)
    # one I realization shared by every device: I then carries exactly zero
    # label information, not merely identically distributed noise
    shared_i = np.random.default_rng([seed, 0xCAFE]).standard_normal(n)
    out = {}
    for dev in range(num_devices):
        rng = np.random.default_rng([seed, dev])
        i = shared_i
        freq = 0.05 + 0.4 * dev / max(num_devices - 1, 1)
        r = 0.95
        a = [1.0, -2.0 * r * np.cos(2 * np.pi * freq), r * r]
        q = lfilter([1.0], a, rng.standard_normal(n))
        q = q / np.std(q)
        out[(dev, 1)] = Recording(device_id=dev, transmission_id=1,
                                  i=i.astype(np.float32), q=q.astype(np.float32))
    return out
