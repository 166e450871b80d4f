"""Solution-separation RAIM benchmark.

All-in-view WLS plus one WLS per monitored fault mode; the solution
separations are tested coordinate-wise against false-alarm-budget thresholds,
failed tests trigger an exclusion sweep over fault modes in decreasing prior
probability, and protection levels come from Q-function overbounds solved by
bisection.

Everything that depends only on geometry (gain matrices, separation sigmas,
thresholds) is epoch-independent; ``BaselineMonitor`` caches those tables per
measurement subset so campaigns pay only a few matrix-vector products per
epoch.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from ._linalg import block_inv_logdet4
from .qfunc import q, q_inv

MIN_FREE = 5  # smallest assumed-fault-free set an eligible mode may keep

_BRACKET_DOUBLINGS = 60


@dataclass(frozen=True)
class FaultMode:
    """Hypothesis that exactly the measurements in faulty_set are faulty."""

    free_set: tuple
    faulty_set: tuple
    p_fm: float


def enumerate_fault_modes(m, theta, min_free=MIN_FREE, indices=None):
    """All fault modes keeping at least ``min_free`` free measurements.

    Returns modes sorted by decreasing prior probability, ties broken by
    lexicographic faulty set so the exclusion order is reproducible. For
    fewer than ``min_free + 1`` measurements the list is empty (all-in-view
    only).
    """
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (m,))
    universe = tuple(range(m)) if indices is None else tuple(sorted(indices))
    n = len(universe)
    modes = []
    for j in range(1, n - min_free + 1):
        for faulty in itertools.combinations(universe, j):
            free = tuple(i for i in universe if i not in faulty)
            p = float(np.prod([1.0 - theta[i] for i in free])
                      * np.prod([theta[i] for i in faulty]))
            modes.append(FaultMode(free_set=free, faulty_set=faulty, p_fm=p))
    modes.sort(key=lambda fm: (-fm.p_fm, fm.faulty_set))
    return modes


def _wls_gain(model, free):
    """(Phi, A) for the WLS estimate using only the ``free`` measurements.

    A is a 4 x M gain acting on the full measurement vector with zero columns
    at excluded indices. Raises ValueError for a rank-deficient sub-model.
    """
    w = np.zeros(model.m)
    idx = np.asarray(sorted(free), dtype=int)
    w[idx] = 1.0 / model.noise_var[idx]
    f = model.H.T @ (w[:, None] * model.H)
    eig = np.linalg.eigvalsh(f)
    if eig[0] <= eig[-1] * 1e-12:
        raise ValueError(f"sub-model on {tuple(free)} is rank deficient; "
                         "mode ineligible")
    phi = np.linalg.inv(f)
    phi = 0.5 * (phi + phi.T)
    a = phi @ (model.H.T * w)
    return phi, a


def wls_estimate(model, y, mode=None):
    """WLS state estimate, covariance and gain for a fault mode.

    ``mode=None`` gives the all-in-view solution.
    """
    free = range(model.m) if mode is None else mode.free_set
    phi, a = _wls_gain(model, free)
    return a @ np.asarray(y, dtype=float), phi, a


@dataclass(frozen=True)
class _Stage:
    """Epoch-independent tables for one measurement subset."""

    free: tuple                # in-use measurement indices
    modes: tuple               # monitored FaultMode's within ``free``
    a0: np.ndarray             # (4, M) all-in-view gain on this subset
    phi0: np.ndarray           # (4, 4)
    a_modes: np.ndarray        # (N, 4, M)
    sigma_modes: np.ndarray    # (N, 3) per-mode estimate sigmas
    sigma_ss: np.ndarray       # (N, 3) solution-separation sigmas
    thresholds: np.ndarray     # (N, 3)

    @property
    def p_fm(self):
        return np.array([fm.p_fm for fm in self.modes])


def _build_stage(model, modes, free, p_fa_h, p_fa_v):
    """Stage tables for testing ``modes`` on the ``free`` measurement set.

    All per-mode WLS systems are solved in one batch. Rank-deficient
    (ineligible) modes are dropped from monitoring; the threshold budget
    split uses the monitored count.
    """
    free = tuple(sorted(free))
    phi0, a0 = _wls_gain(model, free)
    n_in = len(modes)
    if n_in:
        w = np.zeros((n_in, model.m))
        for k, fm in enumerate(modes):
            w[k, list(fm.free_set)] = 1.0 / model.noise_var[list(fm.free_set)]
        f_all = np.einsum("km,mi,mj->kij", w, model.H, model.H)
        phi_all, _, ok = block_inv_logdet4(f_all)
        kept_idx = np.flatnonzero(ok)
        kept = tuple(modes[int(k)] for k in kept_idx)
        phi_all = phi_all[kept_idx]
        w = w[kept_idx]
    else:
        kept = ()
    n = len(kept)
    if n:
        a_modes = np.einsum("kij,mj,km->kim", phi_all, model.H, w)
        sigma_modes = np.sqrt(phi_all[:, [0, 1, 2], [0, 1, 2]])
        diff = a_modes - a0[None]
        sigma_ss = np.sqrt(np.einsum("knj,j->kn", diff[:, :3, :] ** 2,
                                     model.noise_var))
        mult = np.array([q_inv(p_fa_h / (4.0 * n)), q_inv(p_fa_h / (4.0 * n)),
                         q_inv(p_fa_v / (2.0 * n))])
        thresholds = sigma_ss * mult[None, :]
    else:
        a_modes = np.zeros((0, 4, model.m))
        sigma_modes = np.zeros((0, 3))
        sigma_ss = np.zeros((0, 3))
        thresholds = np.zeros((0, 3))
    return _Stage(free=free, modes=kept, a0=a0, phi0=phi0,
                  a_modes=a_modes, sigma_modes=sigma_modes,
                  sigma_ss=sigma_ss, thresholds=thresholds)


@dataclass(frozen=True)
class SsTestReport:
    """Outcome of solution-separation testing (and exclusion, if it ran).

    ``accepted_mode`` is None when the all-in-view test passed, otherwise the
    index (into the top-level mode list) of the fault mode accepted during
    exclusion. The stage fields carry everything protection-level
    computation needs for the accepted measurement set.
    """

    tau: np.ndarray            # (N, 3) statistics of the accepted stage
    thresholds: np.ndarray     # (N, 3)
    passed: bool
    accepted_mode: object      # int | None
    available: bool
    free: tuple                # measurement indices in use
    excluded: tuple            # measurement indices excluded
    x_hat: np.ndarray          # (4,) state estimate of the accepted stage
    phi0: np.ndarray           # (4, 4) its covariance
    sigma_modes: np.ndarray    # (N, 3)
    p_fm: np.ndarray           # (N,)


def _run_stage(stage, y):
    x0 = stage.a0 @ y
    if len(stage.modes):
        xs = np.einsum("knj,j->kn", stage.a_modes[:, :3, :], y)
        tau = np.abs(x0[:3][None, :] - xs)
        passed = bool(np.all(tau <= stage.thresholds))
    else:
        tau = np.zeros((0, 3))
        passed = True
    return x0, tau, passed


def _stage_report(stage, x0, passed, tau, accepted_mode, available, excluded):
    return SsTestReport(tau=tau, thresholds=stage.thresholds, passed=passed,
                        accepted_mode=accepted_mode, available=available,
                        free=stage.free, excluded=tuple(excluded), x_hat=x0,
                        phi0=stage.phi0, sigma_modes=stage.sigma_modes,
                        p_fm=stage.p_fm)


_UNAVAILABLE_EMPTY = np.zeros((0, 3))


def _unavailable_report():
    return SsTestReport(tau=_UNAVAILABLE_EMPTY, thresholds=_UNAVAILABLE_EMPTY,
                        passed=False, accepted_mode=None, available=False,
                        free=(), excluded=(), x_hat=np.full(4, np.nan),
                        phi0=np.full((4, 4), np.nan),
                        sigma_modes=_UNAVAILABLE_EMPTY, p_fm=np.zeros(0))


def ss_test(model, y, modes, p_fa_h, p_fa_v):
    """All-in-view solution-separation test against the monitored modes."""
    stage = _build_stage(model, modes, range(model.m), p_fa_h, p_fa_v)
    y = np.asarray(y, dtype=float)
    x0, tau, passed = _run_stage(stage, y)
    return _stage_report(stage, x0, passed, tau, accepted_mode=None,
                         available=passed, excluded=())


def fault_exclusion(model, y, modes, theta, p_fa_h, p_fa_v,
                    min_free=MIN_FREE):
    """Exclusion sweep after a failed all-in-view test.

    Retries solution-separation testing on the free set of each fault mode in
    decreasing prior probability, re-enumerating the fault modes within that
    subset; the first passing stage is accepted. A subset too small to
    monitor any of its own fault modes cannot be verified and is never
    accepted (accepting it blind would void the integrity argument). If no
    stage passes the system is reported unavailable (a result, not an
    error).
    """
    y = np.asarray(y, dtype=float)
    for k, fm in enumerate(modes):
        sub = enumerate_fault_modes(model.m, theta, min_free=min_free,
                                    indices=fm.free_set)
        if not sub:
            continue
        stage = _build_stage(model, sub, fm.free_set, p_fa_h, p_fa_v)
        x0, tau, passed = _run_stage(stage, y)
        if passed:
            return _stage_report(stage, x0, passed=True, tau=tau,
                                 accepted_mode=k, available=True,
                                 excluded=fm.faulty_set)
    return _unavailable_report()


def _min_radius(constraint, target, r_scale, r_tol):
    """Smallest r with constraint(r) < target, for nonincreasing constraint.

    Brackets with doubling from 10 * r_scale, then bisects to r_tol.
    """
    hi = max(10.0 * r_scale, r_tol)
    for _ in range(_BRACKET_DOUBLINGS):
        if constraint(hi) < target:
            break
        hi *= 2.0
    else:
        raise RuntimeError("protection-level constraint unsatisfiable within "
                           "bracket cap")
    lo = 0.0
    if constraint(lo) < target:
        return lo
    while hi - lo > r_tol:
        mid = 0.5 * (lo + hi)
        if constraint(mid) < target:
            hi = mid
        else:
            lo = mid
    return hi


def baseline_pl(report, model, p_tir_h, p_tir_v, r_tol=1e-3):
    """Protection levels (horizontal, vertical) for an accepted test report.

    Vertical: smallest r with
        2 Q(r / sigma3_0) + sum_k p_fm_k Q((r - T3_k) / sigma3_k) < P_TIR_V.
    Horizontal: the same bound per horizontal coordinate at P_TIR_H / 2, then
    the root-sum-square of the two per-axis radii.
    """
    if not report.available:
        raise ValueError("protection levels require an accepted test report")
    sigma0 = np.sqrt(np.diag(report.phi0)[:3])
    p_fm = report.p_fm
    t_nk = report.thresholds
    sig_k = report.sigma_modes

    def constraint(n, r):
        base = 2.0 * q(r / sigma0[n])
        if len(p_fm):
            base = base + float(p_fm @ q((r - t_nk[:, n]) / sig_k[:, n]))
        return base

    def scale(n):
        return max(sigma0[n], float(np.max(t_nk[:, n])) if len(p_fm) else 0.0)

    pl_1 = _min_radius(lambda r: constraint(0, r), p_tir_h / 2.0, scale(0), r_tol)
    pl_2 = _min_radius(lambda r: constraint(1, r), p_tir_h / 2.0, scale(1), r_tol)
    pl_v = _min_radius(lambda r: constraint(2, r), p_tir_v, scale(2), r_tol)
    return float(np.hypot(pl_1, pl_2)), pl_v


class BaselineMonitor:
    """Runs the baseline on many epochs of one linear model.

    Stage tables (gains, separation sigmas, thresholds) depend only on the
    geometry and priors, so they are computed once per measurement subset and
    cached; per-epoch work is a handful of matrix-vector products. Exclusion
    is attempted only on epochs whose all-in-view test fails.
    """

    def __init__(self, model, theta, p_fa_h, p_fa_v, min_free=MIN_FREE):
        self.model = model
        self.theta = np.broadcast_to(np.asarray(theta, dtype=float), (model.m,))
        self.p_fa_h = p_fa_h
        self.p_fa_v = p_fa_v
        self.min_free = min_free
        self._stage_cache = {}
        self.top = self._stage(tuple(range(model.m)))

    def _stage(self, free):
        free = tuple(sorted(free))
        if free not in self._stage_cache:
            modes = enumerate_fault_modes(self.model.m, self.theta,
                                          min_free=self.min_free, indices=free)
            self._stage_cache[free] = _build_stage(
                self.model, modes, free, self.p_fa_h, self.p_fa_v)
        return self._stage_cache[free]

    def run_epoch(self, y):
        y = np.asarray(y, dtype=float)
        x0, tau, passed = _run_stage(self.top, y)
        if passed:
            return _stage_report(self.top, x0, passed=True, tau=tau,
                                 accepted_mode=None, available=True,
                                 excluded=())
        for k, fm in enumerate(self.top.modes):
            stage = self._stage(fm.free_set)
            if not stage.modes:
                continue  # unverifiable exclusion; see fault_exclusion
            x0_k, tau_k, ok = _run_stage(stage, y)
            if ok:
                return _stage_report(stage, x0_k, passed=True, tau=tau_k,
                                     accepted_mode=k, available=True,
                                     excluded=fm.faulty_set)
        return _unavailable_report()
