"""Construction of the guide-space: one real guide embedding and N forgery
guide embeddings on the unit hypersphere.

Every forgery embedding sits at the fixed angle ``theta0`` from the real
embedding, and the forgery embeddings are spread as far apart as the
constraint allows by minimising

    L = 1/N * sum_i log sum_j exp(g_fi . g_fj / tau)

The constraint is built into the parameterisation

    g_fi = cos(theta0) * g_r + sin(theta0) * u_i,   |u_i| = 1,  u_i . g_r = 0

so every iterate is feasible and the optimisation runs on a product of unit
spheres inside the orthogonal complement of ``g_r``. At a stationary point the
Riemannian gradient vanishes, which is exactly the Lagrange (KKT) condition
of the constrained problem.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.special import logsumexp, softmax

from .errors import (
    DimensionTooSmall,
    InvalidGuideSpace,
    InvalidParameter,
    NonConvergence
)
from .debugging import log
from .output.continuous_write import (
    write_json_document,
    read_json_document
)


NORM_TOLERANCE = 1e-9
ANGLE_TOLERANCE = 1e-4  # radians
RESIDUAL_TOLERANCE = 1e-6
GRADIENT_TOLERANCE = 1e-6
MAX_ITERATIONS = 10000


def _read_only(array):
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class GuideSpace:
    """Solved guide-space configuration.

    :param d: Dimension of the feature space
    :type d: int
    :param N: Number of forgery domains
    :type N: int
    :param theta0: Angle between the real and every forgery embedding, in degrees
    :type theta0: float
    :param g_r: Real guide embedding, shape (d,)
    :type g_r: numpy.ndarray
    :param g_f: Forgery guide embeddings, shape (N, d)
    :type g_f: numpy.ndarray
    :raises InvalidGuideSpace: if any invariant is violated
    """
    d: int
    N: int
    theta0: float
    g_r: np.ndarray
    g_f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'g_r', _read_only(self.g_r))
        object.__setattr__(self, 'g_f', _read_only(self.g_f).reshape(-1, self.d))
        self.validate()

    def validate(self):
        if self.d < self.N:
            raise InvalidGuideSpace(
                f'Feature dimension d={self.d} is smaller than N={self.N}.')
        if self.g_r.shape != (self.d,) or self.g_f.shape != (self.N, self.d):
            raise InvalidGuideSpace(
                f'Expected g_r of shape ({self.d},) and g_f of shape ({self.N}, {self.d}), '
                f'got {self.g_r.shape} and {self.g_f.shape}.')

        norms = np.linalg.norm(self.guides, axis=1)
        if np.any(np.abs(norms - 1) > NORM_TOLERANCE):
            raise InvalidGuideSpace(
                f'Guide embeddings must have unit norm, got norms {norms.tolist()}.')

        angles = np.arccos(np.clip(self.g_f @ self.g_r, -1, 1))
        expected = math.radians(self.theta0)
        if np.any(np.abs(angles - expected) > ANGLE_TOLERANCE):
            raise InvalidGuideSpace(
                f'Every forgery embedding must be {self.theta0} degrees from g_r, '
                f'got {np.degrees(angles).tolist()}.')

    @property
    def guides(self):
        """All guide embeddings as rows: index 0 is ``g_r``, index j is ``g_fj``."""
        return np.vstack([self.g_r, self.g_f])

    def guide(self, index):
        return self.g_r if index == 0 else self.g_f[index - 1]

    def json(self):
        return {
            'd': self.d,
            'N': self.N,
            'theta0_deg': self.theta0,
            'g_r': self.g_r.tolist(),
            'g_f': self.g_f.tolist()
        }

    @classmethod
    def from_json(cls, document):
        try:
            return cls(
                d=int(document['d']),
                N=int(document['N']),
                theta0=float(document['theta0_deg']),
                g_r=document['g_r'],
                g_f=document['g_f']
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidGuideSpace(f'Malformed guide-space document: {e}')

    def save(self, file_name):
        write_json_document(file_name, self.json())

    @classmethod
    def load(cls, file_name):
        return cls.from_json(read_json_document(file_name))


@dataclass(frozen=True, eq=False)
class SolverReport:
    iterations: int
    final_objective: float
    max_constraint_residual: float
    gradient_norm: float
    pairwise_angles_deg: np.ndarray

    def json(self):
        return {
            'iterations': self.iterations,
            'final_objective': self.final_objective,
            'max_constraint_residual': self.max_constraint_residual,
            'gradient_norm': self.gradient_norm,
            'pairwise_angles_deg': self.pairwise_angles_deg.tolist()
        }


def angles_between(vectors):
    """Pairwise angles (degrees) between the rows of ``vectors``.

    :return: Symmetric matrix with a zero diagonal and entries in [0, 180]
    :rtype: numpy.ndarray
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    cosines = np.clip(vectors @ vectors.T, -1.0, 1.0)
    angles = np.degrees(np.arccos(cosines))
    angles = (angles + angles.T) / 2
    np.fill_diagonal(angles, 0.0)
    return angles


def pairwise_angles(gs):
    """Pairwise angles between the forgery guide embeddings, in degrees."""
    return angles_between(gs.g_f)


def analytic_theta_ij(theta0, N):
    """Common pairwise angle of the symmetric optimum, where the components of
    the forgery embeddings orthogonal to ``g_r`` form a regular simplex.

    :param theta0: Real-forgery angle in degrees
    :type theta0: float
    :param N: Number of forgery domains, at least 2
    :type N: int
    :raises InvalidParameter: if N < 2
    :return: The pairwise angle in degrees
    :rtype: float
    """
    if N < 2:
        raise InvalidParameter(
            f'The pairwise angle needs at least two forgery domains, got N={N}.')
    theta = math.radians(theta0)
    cosine = math.cos(theta) ** 2 - math.sin(theta) ** 2 / (N - 1)
    return math.degrees(math.acos(max(-1.0, min(1.0, cosine))))


def separation_objective(g_f, tau=1.0):
    """Value of the log-sum-exp separation objective for forgery embeddings ``g_f``."""
    g_f = np.asarray(g_f, dtype=np.float64)
    gram = g_f @ g_f.T / tau
    return float(np.mean(logsumexp(gram, axis=1)))


class _SphereProductProblem:
    """Objective restricted to unit vectors w_i in the (d-1)-dimensional
    complement of g_r, where g_fi . g_fj = c^2 + s^2 w_i . w_j."""

    def __init__(self, theta0, tau):
        theta = math.radians(theta0)
        self.c2 = math.cos(theta) ** 2
        self.s2 = math.sin(theta) ** 2
        self.tau = tau

    def gram(self, w):
        return (self.c2 + self.s2 * (w @ w.T)) / self.tau

    def objective(self, w):
        return float(np.mean(logsumexp(self.gram(w), axis=1)))

    def riemannian_gradient(self, w):
        n = w.shape[0]
        p = softmax(self.gram(w), axis=1)
        euclidean = self.s2 / (n * self.tau) * ((p + p.T) @ w)
        radial = np.sum(euclidean * w, axis=1, keepdims=True)
        return euclidean - radial * w


def _normalise_rows(w):
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def solve_guide_space(d, N, theta0, seed=0, tau=1.0,
                      max_iterations=MAX_ITERATIONS,
                      gradient_tolerance=GRADIENT_TOLERANCE):
    """Solve the guide-space for the given dimension, domain count and angle.

    :param d: Dimension of the feature space, at least max(N, 2)
    :type d: int
    :param N: Number of forgery domains, at least 1
    :type N: int
    :param theta0: Real-forgery angle in degrees, strictly between 0 and 180
    :type theta0: float
    :param seed: Seed for the random real embedding and the initial iterate
    :type seed: int
    :param tau: Temperature of the separation objective, defaults to 1
    :type tau: float, optional
    :raises DimensionTooSmall: if d < N (or d < 2)
    :raises InvalidParameter: if N < 1 or theta0 is out of range
    :raises NonConvergence: if the tolerances are unmet after the iteration cap
    :return: The guide-space and a report of the solve
    :rtype: tuple[GuideSpace, SolverReport]
    """
    if N < 1:
        raise InvalidParameter(f'Need at least one forgery domain, got N={N}.')
    if d < N:
        raise DimensionTooSmall(
            f'The guide-space needs d ≥ N, got d={d} and N={N}.')
    if d < 2:
        raise DimensionTooSmall(
            'The guide-space needs d ≥ 2 to place g_f at an angle from g_r.')
    if not 0 < theta0 < 180:
        raise InvalidParameter(
            f'theta0 must lie strictly between 0 and 180 degrees, got {theta0}.')
    if tau <= 0:
        raise InvalidParameter(f'tau must be positive, got {tau}.')

    rng = np.random.default_rng(seed)
    g_r = rng.standard_normal(d)
    g_r /= np.linalg.norm(g_r)

    # Orthonormal basis of the complement of g_r, shape (d, d - 1)
    complement = null_space(g_r[np.newaxis, :])

    problem = _SphereProductProblem(theta0, tau)
    if complement.shape[1] == 1 and N == 2:
        # The complement is a line: the antipodal pair is the only separated layout
        w = np.array([[1.0], [-1.0]])
    else:
        w = _normalise_rows(rng.standard_normal((N, complement.shape[1])))

    objective = problem.objective(w)
    gradient = problem.riemannian_gradient(w)
    gradient_norm = float(np.linalg.norm(gradient))
    step = 1.0
    iterations = 0

    while gradient_norm >= gradient_tolerance and iterations < max_iterations:
        # Backtracking line search with step halving (Armijo condition)
        while True:
            candidate = _normalise_rows(w - step * gradient)
            candidate_objective = problem.objective(candidate)
            if candidate_objective <= objective - 1e-4 * step * gradient_norm ** 2:
                break
            step /= 2
            if step < 1e-16:
                break

        if step < 1e-16:
            log('debug', f'Line search stalled after {iterations} iterations.')
            break

        w, objective = candidate, candidate_objective
        gradient = problem.riemannian_gradient(w)
        gradient_norm = float(np.linalg.norm(gradient))
        iterations += 1
        step = min(step * 2, 1e3)

    theta = math.radians(theta0)
    g_f = math.cos(theta) * g_r + math.sin(theta) * (w @ complement.T)

    residual = float(np.max(np.abs(g_f @ g_r - math.cos(theta))))
    if residual >= RESIDUAL_TOLERANCE or gradient_norm >= gradient_tolerance:
        raise NonConvergence(
            f'Guide-space solve did not converge after {iterations} iterations '
            f'(constraint residual {residual:.3e}, gradient norm {gradient_norm:.3e}).')

    gs = GuideSpace(d=d, N=N, theta0=float(theta0), g_r=g_r, g_f=g_f)
    report = SolverReport(
        iterations=iterations,
        final_objective=separation_objective(g_f, tau),
        max_constraint_residual=residual,
        gradient_norm=gradient_norm,
        pairwise_angles_deg=pairwise_angles(gs)
    )
    log('debug', f'Guide-space solved in {iterations} iterations '
        f'(objective {report.final_objective:.6f}, gradient norm {gradient_norm:.2e}).')
    return gs, report
