"""Maximum-likelihood ego-motion from flow with known depth, RANSAC and LCMSAC.

A problem holds the flow from frame k-1 to k, the structure field and depth
of frame k-1, and the (estimated) pose at k-1.  Residuals are the flow errors
rotated into each sample's structure-tensor eigenbasis, one scalar per
component, so every likelihood here factorises over components.

Pose optimisation uses iteratively reweighted Gauss-Newton: the weight of a
residual is ``psi(z) / z`` with ``psi`` the score of the component density.
For the Gaussian this is plain Gauss-Newton; for the LCM, whose negative log
density is concave in ``z**2``, each reweighted step minimises a quadratic
majoriser, and a backtracking line search on the exact NLL keeps every
accepted step monotone.  A Nelder-Mead path is kept for cross-checking.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator

from ._validation import check_scalar
from .exceptions import DomainError, NumericalError
from .geometry import Pose, _normalized_rays, euler_rotation_derivatives
from .imaging import to_eigenbasis
from .likelihood import GaussianLikelihood, LcmLikelihood, ParamLut

RANSAC_THRESHOLD = 0.5
RANSAC_SIGMA = 0.25
LCMSAC_LEVEL = 0.9
TEXTURE_CUTOFF = 50.0
_FD_STEP = 1e-6
_STEP_TOL = 1e-7
_REL_TOL = 1e-9
_MAX_EXPAND = 6
_MAX_HALVINGS = 20
_HYP_ITERS = 10


@dataclass
class EgoProblem:
    """Flow, structure and depth of one frame pair, all aligned to frame k-1."""

    prev_pose: Pose
    flow: object
    structure: object
    depth: object
    camera: object

    def __post_init__(self):
        flow = self.flow
        rho = self.depth.sample(flow.positions)
        t1, t2, phi = self.structure.sample(flow.positions)
        usable = flow.valid & np.isfinite(rho) & np.all(np.isfinite(flow.vectors), axis=1)
        self.excluded_ = int(np.count_nonzero(flow.valid & ~usable))
        idx = np.flatnonzero(usable)
        self.index_ = idx
        self.pixels_ = flow.positions[idx]
        self.measured_ = flow.vectors[idx]
        self.rho_ = rho[idx]
        self.phi_ = phi[idx]
        self.texture_ = np.column_stack([t1[idx], t2[idx]])
        self.rays_ = _normalized_rays(self.camera, self.pixels_)

    @property
    def n_samples(self):
        return len(self.index_)

    def subset(self, keep):
        """Same problem restricted to usable samples where ``keep`` is true."""
        sub = EgoProblem.__new__(EgoProblem)
        sub.prev_pose, sub.flow, sub.structure = self.prev_pose, self.flow, self.structure
        sub.depth, sub.camera = self.depth, self.camera
        keep = np.asarray(keep, dtype=bool)
        sub.excluded_ = self.excluded_
        sub.index_ = self.index_[keep]
        for name in ("pixels_", "measured_", "rho_", "phi_", "texture_", "rays_"):
            setattr(sub, name, getattr(self, name)[keep])
        return sub

    def _relative(self, x):
        """Relative transform (3x4) from frame k-1 to a pose vector at k, and its
        derivatives (6, 3, 4) with respect to that vector."""
        x = np.asarray(x, dtype=np.float64)
        prev = self.prev_pose
        if not hasattr(self, "_prev_rt"):
            self._prev_rt = (prev.rotation(), prev.position.copy())
        r_prev, p_prev = self._prev_rt
        rot, drot = euler_rotation_derivatives(*x[3:6])
        offset = p_prev - x[:3]
        rel = np.empty((3, 4))
        rel[:, :3] = rot.T @ r_prev
        rel[:, 3] = rot.T @ offset
        return rel, rot, drot, r_prev, offset

    def _relative_derivatives(self, rot, drot, r_prev, offset):
        d = np.zeros((6, 3, 4))
        d[:3, :, 3] = -rot  # d(R^T (p_prev - p)) / dp_j is row j of -R
        for j, dr in enumerate(drot):
            d[3 + j, :, :3] = dr.T @ r_prev
            d[3 + j, :, 3] = dr.T @ offset
        return d

    def _moved(self, transform, idx):
        rot, trans = transform[:3, :3], transform[:3, 3]
        return self.rays_[idx] @ rot.T + self.rho_[idx, None] * trans

    def predicted_flow(self, x, idx=slice(None)):
        """Flow implied by pose ``x`` at frame k (NaN where the point falls behind)."""
        vec = x.as_vector() if isinstance(x, Pose) else x
        moved = self._moved(self._relative(vec)[0], idx)
        f, c = self.camera.focal, self.camera.principal_point
        with np.errstate(divide="ignore", invalid="ignore"):
            pred = np.column_stack([c[0] + f * moved[:, 0] / moved[:, 2],
                                    c[1] + f * moved[:, 1] / moved[:, 2]])
        pred[moved[:, 2] <= 0.0] = np.nan
        return pred - self.pixels_[idx]

    def flow_jacobian(self, x, idx=slice(None)):
        """Predicted flow ``(n, 2)`` and its Jacobian ``(n, 2, 6)`` w.r.t. the pose
        vector ``(x, y, z, yaw, pitch, roll)``, from one evaluation."""
        rel, rot, drot, r_prev, offset = self._relative(x)
        dtf = self._relative_derivatives(rot, drot, r_prev, offset)
        moved = self._moved(rel, idx)
        f, c = self.camera.focal, self.camera.principal_point
        iz = 1.0 / moved[:, 2]
        pred = np.column_stack([c[0] + f * moved[:, 0] * iz, c[1] + f * moved[:, 1] * iz])
        pred[moved[:, 2] <= 0.0] = np.nan
        # moved points are linear in the transform: d(moved)/dx_j = [ray, rho] @ dT_j^T
        hom = np.column_stack([self.rays_[idx], self.rho_[idx]])
        dmoved = (hom @ dtf.transpose(2, 1, 0).reshape(4, 18)).reshape(-1, 3, 6)
        # perspective division: du = f (dX - u' dZ) / Z with u' = X / Z
        fiz = (f * iz)[:, None]
        dpred = np.stack([fiz * (dmoved[:, 0] - (moved[:, 0] * iz)[:, None] * dmoved[:, 2]),
                          fiz * (dmoved[:, 1] - (moved[:, 1] * iz)[:, None] * dmoved[:, 2])],
                         axis=1)
        return pred - self.pixels_[idx], dpred

    def eigen_jacobian(self, x, idx=slice(None)):
        """Analytic Jacobian ``(n, 2, 6)`` of the eigenbasis residuals w.r.t. the
        pose vector ``(x, y, z, yaw, pitch, roll)``."""
        _, dpred = self.flow_jacobian(x, idx)
        # residual = measured - predicted, rotated by R(phi)^T
        cphi, sphi = np.cos(self.phi_[idx]), np.sin(self.phi_[idx])
        dz1 = -(cphi[:, None] * dpred[:, 0] + sphi[:, None] * dpred[:, 1])
        dz2 = -(-sphi[:, None] * dpred[:, 0] + cphi[:, None] * dpred[:, 1])
        return np.stack([dz1, dz2], axis=1)

    def image_residuals(self, x, idx=slice(None)):
        return self.measured_[idx] - self.predicted_flow(x, idx)

    def eigen_residuals(self, x, idx=slice(None)):
        """Eigenbasis errors ``(n, 2)``: rows are (z1, z2) for each sample."""
        return to_eigenbasis(self.image_residuals(x, idx), self.phi_[idx])


def eigen_errors(x, problem):
    """Per-sample ``(z1, t1, z2, t2)`` rows at pose ``x``.

    Samples whose projection is invalid at ``x`` are dropped; the count is
    returned alongside.
    """
    z = problem.eigen_residuals(x)
    ok = np.all(np.isfinite(z), axis=1)
    t = problem.texture_
    rows = np.column_stack([z[ok, 0], t[ok, 0], z[ok, 1], t[ok, 1]])
    return rows, int(np.count_nonzero(~ok))


def _bind(likelihood, textures):
    if isinstance(likelihood, ParamLut):
        likelihood = LcmLikelihood.from_lut(likelihood)
    return likelihood.bind(textures)


def _component_model(problem, likelihood):
    return _bind(likelihood, problem.texture_.ravel())


def _as_mask(problem, component_mask):
    if component_mask is None:
        return np.ones(2 * problem.n_samples, dtype=bool)
    mask = np.asarray(component_mask, dtype=bool).reshape(-1)
    if mask.size != 2 * problem.n_samples:
        raise DomainError("component mask must have two entries per usable sample")
    return mask


def flow_nll(x, problem, likelihood, component_mask=None):
    """Negative log-likelihood of the problem's flow at pose ``x``.

    ``likelihood`` is a fitted :class:`LcmLikelihood`, a :class:`ParamLut`,
    or a :class:`GaussianLikelihood`.
    """
    if problem.n_samples == 0:
        raise DomainError("no usable flow samples")
    mask = _as_mask(problem, component_mask)
    if not np.any(mask):
        raise DomainError("component mask selects nothing")
    model = _component_model(problem, likelihood)
    pose = x if isinstance(x, Pose) else Pose.from_vector(x)
    z = problem.eigen_residuals(pose).ravel()
    if not np.all(np.isfinite(z[mask])):
        return np.inf
    return float(-np.sum(model.logpdf(np.where(mask, z, 0.0))[mask]))


@dataclass
class PoseEstimate:
    pose: Pose
    nll: float
    initial_nll: float
    n_iter: int = 0
    success: bool = True


def _jacobian(problem, x, idx, comp_mask):
    """Jacobian of the masked eigen residuals w.r.t. the 6-vector."""
    return problem.eigen_jacobian(x, idx).reshape(-1, 6)[comp_mask]


def _fd_jacobian(problem, x, idx, comp_mask):
    """Central-difference Jacobian of the full residual map, for cross-checking."""
    cols = []
    for j in range(6):
        step = np.zeros(6)
        step[j] = _FD_STEP
        zp = problem.eigen_residuals(x + step, idx).ravel()[comp_mask]
        zm = problem.eigen_residuals(x - step, idx).ravel()[comp_mask]
        cols.append((zp - zm) / (2.0 * _FD_STEP))
    return np.column_stack(cols)


def mle_pose(problem, likelihood, init=None, component_mask=None, *, solver="irls",
             max_iter=50, tol=1e-12, random_state=0):
    """Pose maximising the flow likelihood; returns a :class:`PoseEstimate`.

    ``init`` defaults to zero motion (the previous pose).  If no step improves
    on the initial NLL by more than ``tol`` the initial pose is returned with
    ``success=False``.
    """
    mask = _as_mask(problem, component_mask)
    sample_ok = mask.reshape(-1, 2).any(axis=1)
    if np.count_nonzero(sample_ok) < 3:
        raise DomainError("need at least 3 flow vectors after masking")
    sub = problem.subset(sample_ok)
    comp = mask.reshape(-1, 2)[sample_ok].ravel()
    model = _bind(likelihood, sub.texture_.ravel()[comp])
    init = problem.prev_pose if init is None else init
    x0 = init.as_vector()

    def residuals(x):
        return sub.eigen_residuals(x).ravel()[comp]

    def nll(x):
        z = residuals(x)
        if not np.all(np.isfinite(z)):
            return np.inf
        return float(-np.sum(model.logpdf(z)))

    f0 = nll(x0)
    if not np.isfinite(f0):
        raise NumericalError("initial pose puts flow samples behind the camera")
    if solver == "irls":
        x, f, it = _irls(residuals, nll, model.irls_weight,
                         lambda x: _jacobian(sub, x, slice(None), comp), x0, f0, max_iter,
                         expand=not model.quadratic)
    elif solver == "nelder-mead":
        x, f, it = _nelder_mead(nll, x0, random_state)
    else:
        raise DomainError(f"unknown solver {solver!r}")
    if not f < f0 - tol:
        return PoseEstimate(init, f0, f0, it, success=False)
    return PoseEstimate(Pose.from_vector(x), f, f0, it)


def _irls(residuals, nll, weights, jacobian, x, f, max_iter, expand=True):
    it = 0
    for it in range(1, max_iter + 1):
        z = residuals(x)
        w = weights(z)
        jac = jacobian(x)
        jw = jac * w[:, None]
        grad = jw.T @ z
        try:
            step = np.linalg.solve(jw.T @ jac, -grad)
        except np.linalg.LinAlgError:
            sw = np.sqrt(w)
            step, *_ = np.linalg.lstsq(jac * sw[:, None], -z * sw, rcond=None)
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) < _STEP_TOL:
            break
        # the quadratic model's predicted decrease; below round-off of f there is
        # nothing a line search could still confirm
        if -0.5 * float(step @ grad) <= _REL_TOL * max(1.0, abs(f)):
            break
        alpha, ft = _line_search(nll, x, f, step, expand)
        if alpha == 0.0:
            break
        converged = (np.max(np.abs(alpha * step)) < _STEP_TOL
                     or f - ft <= _REL_TOL * max(1.0, abs(f)))
        x, f = x + alpha * step, ft
        if converged:
            break
    return x, f, it


def _line_search(nll, x, f, step, expand=True):
    """Backtrack from the full step; if it is accepted, keep doubling while the
    NLL keeps falling (reweighted steps of heavy-tailed losses are often short).
    Returns ``(alpha, nll)`` with ``alpha = 0`` when nothing improves.
    """
    alpha = 1.0
    for _ in range(_MAX_HALVINGS):
        ft = nll(x + alpha * step)
        if ft < f:
            break
        alpha *= 0.5
    else:
        return 0.0, f
    if alpha == 1.0 and expand:
        for _ in range(_MAX_EXPAND):
            fe = nll(x + 2.0 * alpha * step)
            if not fe < ft:
                break
            alpha, ft = 2.0 * alpha, fe
    return alpha, ft


def _nelder_mead(nll, x0, random_state):
    rng = np.random.default_rng(random_state)
    simplex_scale = np.array([0.05, 0.05, 0.05, 0.01, 0.01, 0.01])
    best_x, best_f, total = x0, nll(x0), 0
    for start in (x0, x0 + rng.normal(0.0, 1.0, 6) * simplex_scale * 0.1):
        simplex = np.vstack([start] + [start + np.eye(6)[j] * simplex_scale[j] for j in range(6)])
        res = optimize.minimize(nll, start, method="Nelder-Mead",
                                options={"initial_simplex": simplex, "xatol": 1e-10,
                                         "fatol": 1e-12, "maxiter": 20000, "maxfev": 20000})
        total += res.nit
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    return best_x, best_f, total


@dataclass
class SacConfig:
    """Sampling-and-consensus settings.

    ``inlier_threshold`` is a residual norm in pixels for RANSAC and a
    confidence level for LCMSAC.  ``texture_cutoff`` drops samples whose
    dominant texture ``t1`` is below it before anything else (dense mode).
    """

    min_samples: int = 3
    max_iters: int = 200
    confidence: float = 0.99
    inlier_threshold: float = RANSAC_THRESHOLD
    texture_cutoff: float = None
    random_state: int = 0

    def __post_init__(self):
        check_scalar(self.min_samples, "min_samples", lo=3, integer=True)
        check_scalar(self.max_iters, "max_iters", lo=1, integer=True)
        check_scalar(self.confidence, "confidence", lo=0.0, hi=1.0, lo_open=True, hi_open=True)
        check_scalar(self.inlier_threshold, "inlier_threshold", lo=0.0, lo_open=True)


@dataclass
class SacResult:
    pose: Pose
    inlier_mask: np.ndarray
    success: bool
    n_trials: int
    inlier_ratio: float
    problem: EgoProblem = field(repr=False, default=None)


def _required_trials(inlier_frac, m, confidence, cap):
    if inlier_frac >= 1.0:
        return 1
    if inlier_frac <= 0.0:
        return cap
    denom = np.log1p(-inlier_frac ** m)
    if denom == 0.0:
        return cap
    return int(min(cap, np.ceil(np.log1p(-confidence) / denom)))


def _minimal_pose(problem, pick, x0):
    """Hypothesis through a minimal sample by Gauss-Newton on its residuals.

    Three vectors give six equations in six unknowns, so the iteration is
    Newton's method on a square system; it converges in a few steps from the
    previous pose.  The eigenbasis rotation is orthonormal, so image-space
    residuals give the same solution.  Returns None when it breaks down.
    """
    x = x0.copy()
    measured = problem.measured_[pick].ravel()
    for _ in range(_HYP_ITERS):
        pred, jac = problem.flow_jacobian(x, pick)
        r = measured - pred.ravel()
        if not np.all(np.isfinite(r)):
            return None
        step, *_ = np.linalg.lstsq(jac.reshape(-1, 6), r, rcond=None)
        if not np.all(np.isfinite(step)):
            return None
        x = x + step
        if np.max(np.abs(step)) < _STEP_TOL:
            break
    return Pose.from_vector(x)


def _consensus(problem, config, score, likelihood_fit):
    """Shared sampling loop.  ``score(z_eig, img_res)`` returns a component inlier mask."""
    n = problem.n_samples
    if n < config.min_samples:
        return SacResult(problem.prev_pose, np.zeros(2 * n, dtype=bool), False, 0, 0.0, problem)
    init = problem.prev_pose
    best_mask, best_count, best_pose = None, -1, init
    needed, trial = config.max_iters, 0
    x0 = init.as_vector()
    while trial < min(needed, config.max_iters):
        rng = np.random.default_rng(config.random_state + trial)
        trial += 1
        pick = rng.choice(n, size=config.min_samples, replace=False)
        hyp = _minimal_pose(problem, pick, x0)
        if hyp is None:
            continue
        mask = _score_pose(problem, hyp, score)
        count = int(np.count_nonzero(mask))
        if count > best_count:
            best_mask, best_count, best_pose = mask, count, hyp
            vec_frac = np.count_nonzero(mask.reshape(-1, 2).all(axis=1)) / n
            needed = _required_trials(vec_frac, config.min_samples, config.confidence,
                                      config.max_iters)
    if best_mask is None or np.count_nonzero(best_mask.reshape(-1, 2).any(axis=1)) < config.min_samples:
        mask = best_mask if best_mask is not None else np.zeros(2 * n, dtype=bool)
        return SacResult(best_pose, mask, False, trial, 0.0, problem)
    pose, mask = best_pose, best_mask
    try:
        pose = mle_pose(problem, likelihood_fit, pose, mask).pose
    except (NumericalError, DomainError):
        pass
    ratio = np.count_nonzero(mask) / (2.0 * n)
    return SacResult(pose, mask, True, trial, ratio, problem)


def _score_pose(problem, pose, score):
    """Component inlier mask of ``pose``; samples that fall behind the camera are outliers."""
    img = problem.image_residuals(pose)
    finite = np.isfinite(img)
    z = to_eigenbasis(np.where(finite, img, 0.0), problem.phi_)
    return score(np.where(finite, z, np.inf), np.where(finite, img, np.inf))


def ransac_egomotion(problem, config=None):
    """Gaussian RANSAC: whole vectors with residual norm under the pixel gate are inliers."""
    config = config or SacConfig()
    problem = _apply_cutoff(problem, config)

    def score(z, img):
        ok = np.hypot(img[:, 0], img[:, 1]) < config.inlier_threshold
        return np.repeat(ok, 2)

    return _consensus(problem, config, score, GaussianLikelihood(sigma=RANSAC_SIGMA))


def lcmsac_egomotion(problem, lut, config=None):
    """LCMSAC: eigenbasis components inside their texture-dependent LCM confidence
    region are inliers; the final fit maximises the LCM likelihood over them.
    """
    config = config or SacConfig(inlier_threshold=LCMSAC_LEVEL, texture_cutoff=TEXTURE_CUTOFF)
    if not 0.0 < config.inlier_threshold < 1.0:
        raise DomainError("LCMSAC inlier_threshold is a confidence level in (0, 1)")
    model = lut if isinstance(lut, LcmLikelihood) else LcmLikelihood.from_lut(lut)
    problem = _apply_cutoff(problem, config)
    bound = model.bind(problem.texture_.ravel()) if problem.n_samples else None
    halfwidth = bound.halfwidth(config.inlier_threshold).reshape(-1, 2) if bound else None

    def score(z, img):
        return (np.abs(z) < halfwidth).ravel()

    return _consensus(problem, config, score, model)


def _apply_cutoff(problem, config):
    if config.texture_cutoff is None:
        return problem
    return problem.subset(problem.texture_[:, 0] >= config.texture_cutoff)


class RansacEgomotion(BaseEstimator):
    """Estimator wrapper around :func:`ransac_egomotion`.

    ``fit(problem)`` sets ``pose_``, ``inlier_mask_`` (per component, over the
    problem's usable samples after any texture cutoff), ``n_trials_`` and
    ``success_``.
    """

    def __init__(self, min_samples=3, max_iters=200, confidence=0.99,
                 inlier_threshold=RANSAC_THRESHOLD, texture_cutoff=None, random_state=0):
        self.min_samples = min_samples
        self.max_iters = max_iters
        self.confidence = confidence
        self.inlier_threshold = inlier_threshold
        self.texture_cutoff = texture_cutoff
        self.random_state = random_state

    def _config(self):
        return SacConfig(self.min_samples, self.max_iters, self.confidence,
                         self.inlier_threshold, self.texture_cutoff, self.random_state)

    def _run(self, problem):
        return ransac_egomotion(problem, self._config())

    def fit(self, problem, y=None):
        res = self._run(problem)
        self.pose_ = res.pose
        self.inlier_mask_ = res.inlier_mask
        self.inlier_ratio_ = res.inlier_ratio
        self.n_trials_ = res.n_trials
        self.success_ = res.success
        return self

    def predict(self, problem):
        """Fit and return the estimated pose."""
        return self.fit(problem).pose_


class LcmsacEgomotion(RansacEgomotion):
    """Estimator wrapper around :func:`lcmsac_egomotion`; ``lut`` is a ParamLut."""

    def __init__(self, lut=None, min_samples=3, max_iters=200, confidence=0.99,
                 inlier_threshold=LCMSAC_LEVEL, texture_cutoff=TEXTURE_CUTOFF, random_state=0):
        super().__init__(min_samples, max_iters, confidence, inlier_threshold,
                         texture_cutoff, random_state)
        self.lut = lut

    def _run(self, problem):
        if self.lut is None:
            raise DomainError("LCMSAC needs a calibrated lookup table")
        return lcmsac_egomotion(problem, self.lut, self._config())


def drift_rate(estimated, truth):
    """Final position error as a percentage of the ground-truth path length."""
    if len(estimated) != len(truth) or len(truth) < 2:
        raise DomainError("trajectories must have equal length >= 2")
    pos = np.array([p.position for p in truth])
    length = float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))
    if length <= 0.0:
        raise DomainError("ground-truth trajectory has zero length")
    err = np.linalg.norm(estimated[-1].position - truth[-1].position)
    return 100.0 * float(err) / length


TRAJECTORY_HEADER = ["k", "x", "y", "z", "yaw", "pitch", "roll"]


def write_trajectory(path, poses):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for k, pose in enumerate(poses):
            writer.writerow([k] + [repr(float(v)) for v in pose.as_vector()])


def read_trajectory(path):
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRAJECTORY_HEADER:
            raise DomainError(f"{path}: unexpected trajectory header {header}")
        return [Pose.from_vector([float(v) for v in row[1:]]) for row in reader]


@dataclass
class OdometryResult:
    """Sequentially composed poses plus per-frame diagnostics."""

    poses: list
    inlier_ratios: list
    n_trials: list
    success: list


def run_odometry(frames, estimator, camera, start):
    """Chain per-frame estimates from ``start``.

    ``frames`` yields ``(flow, structure, depth)`` for each pair (k-1, k),
    all aligned to frame k-1.  Each problem is posed relative to the previous
    *estimate*, so errors accumulate as in real odometry.
    """
    poses, ratios, trials, ok = [start], [], [], []
    for flow, structure, depth in frames:
        problem = EgoProblem(poses[-1], flow, structure, depth, camera)
        est = estimator.fit(problem)
        poses.append(est.pose_)
        ratios.append(float(est.inlier_ratio_))
        trials.append(int(est.n_trials_))
        ok.append(bool(est.success_))
    return OdometryResult(poses, ratios, trials, ok)
