"""Seeded Monte-Carlo comparison of the solver modes.

Every trial draws one instance (signal, nominal matrix, perturbation basis)
and runs each requested mode at each SNR_e point on identical data. The
noise and perturbation draws of a trial are shared across SNR_e points and
only rescaled, so curves over SNR_e are not jittered by fresh draws.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .denoiser import BernoulliGaussianPrior
from .metrics import nmse_db, psnr_db
from .model import PerturbationModel, Problem, apply_perturbation, sample_perturbation
from .solver import DivergenceError, Mode, VampConfig, run

__all__ = [
    "GAMMA_E_DISABLED",
    "Calibration",
    "ExperimentResult",
    "ExperimentSpec",
    "TrialResult",
    "active_fraction",
    "calibrate",
    "gen_compressed_circulant",
    "gen_gaussian_basis",
    "gen_matrix",
    "gen_signal",
    "load_coefficients",
    "nmse_db",
    "psnr_db",
    "realized_snrs",
    "run_experiment",
    "save_coefficients",
    "write_aggregate_csv",
    "write_trace_csv",
]

GAMMA_E_DISABLED = 1e12

TRACE_HEADER = ["experiment", "mode", "snr_e_db", "trial", "iteration", "nmse_db", "clamps"]
AGGREGATE_HEADER = ["experiment", "mode", "snr_e_db", "mean_nmse_db", "trials", "diverged"]

PERTURBATION_KINDS = ("gaussian", "iid", "circulant")
SNR_E_REFERENCES = ("signal", "noise")


# -- generators --------------------------------------------------------

def gen_signal(prior: BernoulliGaussianPrior, N, seed):
    """Spike-and-slab draw: zero w.p. 1 - rho, else N(mu_x, sigma_x2)."""
    rng = np.random.default_rng(seed)
    active = rng.random(N) < prior.rho
    slab = prior.mu_x + np.sqrt(prior.sigma_x2) * rng.standard_normal(N)
    return np.where(active, slab, 0.0)


def gen_matrix(M, N, seed):
    """Gaussian matrix rescaled exactly to ||A||_F^2 = N."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, N)) / np.sqrt(M)
    return A * np.sqrt(N / np.sum(A**2))


def gen_gaussian_basis(M, N, seed, q=None):
    """q (default N) basis matrices with i.i.d. N(0, 1/N) entries."""
    q = N if q is None else q
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((q, M, N))
    basis /= np.sqrt(N)
    return PerturbationModel.generic(basis, shape=(M, N))


def gen_compressed_circulant(M, N, decay, seed):
    """A = phi @ circulant(decay**i) with a Gaussian compression phi.

    phi is rescaled so that ||A||_F^2 = N; returns ``(A, perturbation)``
    where the perturbation basis is phi composed with the cyclic shifts.
    """
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((M, N)) / np.sqrt(N)
    a = decay ** np.arange(N, dtype=float)
    A = np.fft.irfft(np.fft.rfft(phi, axis=1) * np.fft.rfft(a), n=N, axis=1)
    scale = np.sqrt(N / np.sum(A**2))
    return A * scale, PerturbationModel.circulant(N, phi * scale)


# -- calibration -------------------------------------------------------

class Calibration(NamedTuple):
    w: np.ndarray
    e: np.ndarray
    gamma_w: float
    gamma_e: float


def _is_disabled(snr_e_db):
    return snr_e_db is None or math.isinf(snr_e_db)


def calibrate(A, x, perturbation: PerturbationModel, snr_w_db, snr_e_db, seed,
              reference="signal"):
    """Draw noise w and coefficients e and scale them to hit both SNRs exactly.

    SNR_w = 10 log10(||A x||^2 / ||w||^2). With ``reference="signal"``
    SNR_e = 10 log10(||A x||^2 / ||dA x||^2), so larger values mean a
    smaller perturbation; ``reference="noise"`` measures the perturbation
    against the noise instead, 10 log10(||dA x||^2 / ||w||^2). Here dA is
    sum_i e_i E_i. An infinite (or None) snr_e_db switches the perturbation
    off: e = 0 and gamma_e = GAMMA_E_DISABLED.

    The returned precisions are matched to the realization: gamma_w = M/||w||^2
    and gamma_e = q/||e||^2.
    """
    if reference not in SNR_E_REFERENCES:
        raise ValueError(f"unknown SNR_e reference {reference!r}")
    A = np.asarray(A, dtype=float)
    M = A.shape[0]
    signal = np.sum((A @ x) ** 2)
    if signal == 0:
        raise ValueError("calibration needs A x != 0")
    noise_seed, pert_seed = np.random.SeedSequence(seed).generate_state(2)
    w0 = np.random.default_rng(noise_seed).standard_normal(M)
    w = w0 * np.sqrt(signal * 10 ** (-snr_w_db / 10) / np.sum(w0**2))
    gamma_w = M / np.sum(w**2)

    if _is_disabled(snr_e_db) or perturbation.q == 0:
        return Calibration(w, np.zeros(perturbation.q), gamma_w, GAMMA_E_DISABLED)

    energy = 0.0
    while energy == 0.0:
        e0 = sample_perturbation(perturbation, 1.0, pert_seed)
        energy = np.sum(apply_perturbation(perturbation, e0, x) ** 2)
        pert_seed = int(pert_seed) + 1
    if reference == "signal":
        target = signal * 10 ** (-snr_e_db / 10)
    else:
        target = np.sum(w**2) * 10 ** (snr_e_db / 10)
    e = e0 * np.sqrt(target / energy)
    return Calibration(w, e, gamma_w, perturbation.q / np.sum(e**2))


def realized_snrs(A, x, perturbation, w, e, reference="signal"):
    """(SNR_w, SNR_e) in dB of a concrete realization."""
    signal = np.sum((A @ x) ** 2)
    noise = np.sum(w**2)
    pert = np.sum(apply_perturbation(perturbation, e, x) ** 2)
    snr_w = 10 * np.log10(signal / noise)
    if pert == 0:
        return snr_w, math.inf if reference == "signal" else -math.inf
    snr_e = 10 * np.log10(signal / pert) if reference == "signal" else 10 * np.log10(pert / noise)
    return snr_w, snr_e


# -- coefficient files -------------------------------------------------

def load_coefficients(path, n=None):
    """Read a vector stored one value per line; blank and '#' lines are skipped."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cannot parse {text!r} as a number") from None
    x = np.array(values, dtype=float)
    if n is not None and x.size != n:
        raise ValueError(f"{path} holds {x.size} coefficients, expected {n}")
    return x


def save_coefficients(path, x, comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        for v in np.asarray(x, dtype=float):
            fh.write(f"{v:.17g}\n")


def active_fraction(x):
    x = np.asarray(x)
    return float(np.count_nonzero(x)) / x.size if x.size else 0.0


# -- experiments -------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    N: int = 512
    measurement_ratio: float = 0.5
    prior: BernoulliGaussianPrior = BernoulliGaussianPrior()
    perturbation: str = "gaussian"
    circulant_decay: float = 0.3
    snr_w_db: float = 30.0
    snr_e_db: tuple = (20.0,)
    snr_e_reference: str = "signal"
    trials: int = 1
    seed: int = 0
    modes: tuple = (Mode.ORACLE, Mode.PI, Mode.PC)
    solver: VampConfig = VampConfig()
    coeff_path: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0 < self.measurement_ratio <= 1:
            raise ValueError("measurement_ratio must lie in (0, 1]")
        if self.perturbation not in PERTURBATION_KINDS:
            raise ValueError(f"perturbation must be one of {PERTURBATION_KINDS}")
        if self.snr_e_reference not in SNR_E_REFERENCES:
            raise ValueError(f"snr_e_reference must be one of {SNR_E_REFERENCES}")
        snr = self.snr_e_db
        snr = (snr,) if np.isscalar(snr) or snr is None else tuple(snr)
        object.__setattr__(self, "snr_e_db", tuple(float(s) for s in snr))
        object.__setattr__(self, "modes", tuple(Mode(m) for m in self.modes))
        if not self.modes:
            raise ValueError("at least one mode is required")

    @property
    def M(self):
        return max(1, round(self.measurement_ratio * self.N))


@dataclass
class TrialResult:
    trial: int
    seed: int
    snr_e_db: float
    snr_w_realized: float
    snr_e_realized: float
    final_nmse_db: dict = field(default_factory=dict)
    psnr_db: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    clamps: dict = field(default_factory=dict)
    diverged: dict = field(default_factory=dict)


@dataclass
class AggregateRow:
    mode: Mode
    snr_e_db: float
    mean_nmse_db: float
    trials: int
    diverged: int


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    trials: list
    aggregate: list

    def mean_nmse(self, mode, snr_e_db):
        for row in self.aggregate:
            if row.mode is Mode(mode) and row.snr_e_db == snr_e_db:
                return row.mean_nmse_db
        raise KeyError((mode, snr_e_db))

    @property
    def all_diverged(self):
        return all(row.trials == 0 for row in self.aggregate)


def _instance(spec: ExperimentSpec, trial_seed, coefficients):
    s_signal, s_matrix, s_basis, s_noise = np.random.SeedSequence(trial_seed).generate_state(4)
    N, M = spec.N, spec.M
    x = coefficients if coefficients is not None else gen_signal(spec.prior, N, s_signal)
    if spec.perturbation == "circulant":
        A, pert = gen_compressed_circulant(M, N, spec.circulant_decay, s_matrix)
    else:
        A = gen_matrix(M, N, s_matrix)
        if spec.perturbation == "iid":
            pert = PerturbationModel.iid(M, N)
        else:
            pert = gen_gaussian_basis(M, N, s_basis)
    return x, A, pert, int(s_noise)


def run_trial(spec: ExperimentSpec, index, coefficients=None):
    """All SNR_e points and modes of one trial; returns a list of TrialResult."""
    trial_seed = spec.seed + index
    x, A, pert, noise_seed = _instance(spec, trial_seed, coefficients)
    if not np.any(x):
        raise ValueError(f"trial {index}: the signal is identically zero")
    Ax = A @ x
    out = []
    for snr_e in spec.snr_e_db:
        cal = calibrate(A, x, pert, spec.snr_w_db, snr_e, noise_seed, spec.snr_e_reference)
        dAx = apply_perturbation(pert, cal.e, x)
        y = Ax + dAx + cal.w
        snr_w_real, snr_e_real = realized_snrs(A, x, pert, cal.w, cal.e, spec.snr_e_reference)
        result = TrialResult(index, trial_seed, snr_e, snr_w_real, snr_e_real)
        for mode in spec.modes:
            if mode is Mode.ORACLE:
                problem = Problem(y, A + pert.matrix(cal.e), cal.gamma_w, cal.gamma_e,
                                  check_norm=False)
            else:
                problem = Problem(y, A, cal.gamma_w, cal.gamma_e, pert)
            config = replace(spec.solver, mode=mode)
            try:
                trace = run(problem, spec.prior, config, truth=x)
            except (DivergenceError, np.linalg.LinAlgError) as exc:
                result.diverged[mode] = True
                result.traces[mode] = getattr(exc, "records", [])
                result.final_nmse_db[mode] = math.nan
                result.psnr_db[mode] = math.nan
                result.clamps[mode] = sum(r.clamp_count for r in result.traces[mode])
                continue
            result.diverged[mode] = False
            result.traces[mode] = trace.records
            result.final_nmse_db[mode] = trace.final_nmse_db
            result.psnr_db[mode] = psnr_db(x, trace.xhat)
            result.clamps[mode] = trace.clamp_total
        out.append(result)
    return out


def default_threads():
    env = os.environ.get("PERTURBVAMP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(spec: ExperimentSpec, threads=None):
    """Run every trial (concurrently when threads > 1) and aggregate.

    Aggregates are the mean of the final NMSE in dB over trials that did
    not diverge, ordered by SNR_e point then mode as given in the spec.
    """
    coefficients = None
    if spec.coeff_path:
        coefficients = load_coefficients(spec.coeff_path, spec.N)
    threads = default_threads() if threads is None else max(1, int(threads))
    indices = range(spec.trials)
    if threads == 1 or spec.trials == 1:
        per_trial = [run_trial(spec, i, coefficients) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=min(threads, spec.trials)) as pool:
            per_trial = list(pool.map(lambda i: run_trial(spec, i, coefficients), indices))
    trials = [r for rs in per_trial for r in rs]
    trials.sort(key=lambda r: (spec.snr_e_db.index(r.snr_e_db), r.trial))

    aggregate = []
    for snr_e in spec.snr_e_db:
        rows = [r for r in trials if r.snr_e_db == snr_e]
        for mode in spec.modes:
            ok = [r.final_nmse_db[mode] for r in rows if not r.diverged[mode]]
            mean = float(np.mean(ok)) if ok else math.nan
            aggregate.append(AggregateRow(mode, snr_e, mean, len(ok), len(rows) - len(ok)))
    return ExperimentResult(spec, trials, aggregate)


# -- CSV output --------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    return f"{float(v):.6g}"


def write_trace_csv(result: ExperimentResult, path):
    spec = result.spec
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_HEADER)
        for snr_e in spec.snr_e_db:
            rows = [r for r in result.trials if r.snr_e_db == snr_e]
            for mode in spec.modes:
                for r in rows:
                    for rec in r.traces[mode]:
                        out.writerow([spec.name, mode.value, _fmt(snr_e), r.trial, rec.iteration,
                                      _fmt(rec.nmse_db), rec.clamp_count])


def write_aggregate_csv(result: ExperimentResult, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(AGGREGATE_HEADER)
        for row in result.aggregate:
            out.writerow([result.spec.name, row.mode.value, _fmt(row.snr_e_db),
                          _fmt(row.mean_nmse_db), row.trials, row.diverged])
