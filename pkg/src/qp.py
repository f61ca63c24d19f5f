from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .constants import QP_DEFAULTS
from .utilityfuncs import as_float_vector

logger = logging.getLogger(__name__)

ORACLE_MAX_DIMENSION = 4
ORACLE_MAX_POINTS = 50_000_000


class QpError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class QpArgumentError(QpError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid QP argument: {message}")


class QpInfeasibleError(QpError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Infeasible QP: {message}")


@dataclass(frozen=True)
class LinearBand:
    """lo <= a^T beta <= hi"""

    a: np.ndarray
    lo: float
    hi: float

    def value(self, beta: np.ndarray) -> float:
        return float(self.a @ beta)

    def violation(self, beta: np.ndarray) -> float:
        value = self.value(beta)
        return max(self.lo - value, value - self.hi, 0.0)


@dataclass(frozen=True)
class QpSolution:
    beta: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


class BoxBandQp:
    def __init__(
        self,
        Q,
        c,
        lower,
        upper,
        band: Optional[Tuple[object, float, float]] = None,
        check_psd: bool = True,
    ) -> None:
        """
        Initializes the problem min 1/2 b^T Q b + c^T b subject to
        lower <= b <= upper and, optionally, lo <= a^T b <= hi.

        Args:
            Q: Symmetric PSD (n, n) matrix.
            c: Linear term of length n.
            lower: Lower box bounds.
            upper: Upper box bounds.
            band (tuple, optional): (a, lo, hi) band constraint.
            check_psd (bool): Verify the smallest eigenvalue of Q against
                -1e-8 * max(1, ||Q||).

        Raises:
            QpArgumentError: If shapes disagree, Q is not symmetric / PSD or
                a bound pair is inverted.
            QpInfeasibleError: If the box and band do not intersect.
        """
        func_name = BoxBandQp.__init__.__qualname__
        try:
            c_vec = as_float_vector(c, "c").copy()
            lower_vec = as_float_vector(lower, "lower").copy()
            upper_vec = as_float_vector(upper, "upper").copy()
            Q_mat = np.asarray(Q, dtype=np.float64)
        except ValueError as e:
            raise QpArgumentError(f"{func_name}: {e}") from e

        n = c_vec.shape[0]
        if Q_mat.shape != (n, n):
            raise QpArgumentError(f"{func_name}: Q has shape {Q_mat.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(Q_mat)):
            raise QpArgumentError(f"{func_name}: Q contains NaN or Inf entries")
        if lower_vec.shape[0] != n or upper_vec.shape[0] != n:
            raise QpArgumentError(f"{func_name}: bounds must have length {n}")
        if np.any(lower_vec > upper_vec):
            raise QpArgumentError(f"{func_name}: lower bound exceeds upper bound")

        scale = max(1.0, float(np.max(np.abs(Q_mat))) if n else 1.0)
        if np.max(np.abs(Q_mat - Q_mat.T), initial=0.0) > 1e-10 * scale:
            raise QpArgumentError(f"{func_name}: Q is not symmetric")
        Q_mat = 0.5 * (Q_mat + Q_mat.T)
        if check_psd and n:
            smallest = float(np.linalg.eigvalsh(Q_mat)[0])
            if smallest < -1e-8 * scale:
                raise QpArgumentError(
                    f"{func_name}: Q is not positive semidefinite (eigenvalue {smallest:.3e})"
                )

        band_obj = None
        if band is not None:
            a_raw, lo, hi = band
            try:
                a_vec = as_float_vector(a_raw, "band.a")
            except ValueError as e:
                raise QpArgumentError(f"{func_name}: {e}") from e
            if a_vec.shape[0] != n:
                raise QpArgumentError(f"{func_name}: band vector must have length {n}")
            if not lo <= hi:
                raise QpArgumentError(f"{func_name}: band lo={lo} exceeds hi={hi}")
            band_obj = LinearBand(a_vec, float(lo), float(hi))
            reach_low = float(np.sum(np.minimum(a_vec * lower_vec, a_vec * upper_vec)))
            reach_high = float(np.sum(np.maximum(a_vec * lower_vec, a_vec * upper_vec)))
            slack = QP_DEFAULTS["feasibility_tol"] * max(1.0, abs(lo), abs(hi))
            if reach_high < lo - slack or reach_low > hi + slack:
                raise QpInfeasibleError(
                    f"{func_name}: a^T b ranges over [{reach_low}, {reach_high}] on the box,"
                    f" band is [{lo}, {hi}]"
                )

        for array in (Q_mat, c_vec, lower_vec, upper_vec):
            array.setflags(write=False)
        self._Q = Q_mat
        self._c = c_vec
        self._lower = lower_vec
        self._upper = upper_vec
        self._band = band_obj

    def __repr__(self) -> str:
        return f"BoxBandQp(n={self.n}, band={self._band is not None})"

    @property
    def Q(self) -> np.ndarray:
        return self._Q

    @property
    def c(self) -> np.ndarray:
        return self._c

    @property
    def lower(self) -> np.ndarray:
        return self._lower

    @property
    def upper(self) -> np.ndarray:
        return self._upper

    @property
    def band(self) -> Optional[LinearBand]:
        return self._band

    @property
    def n(self) -> int:
        return self._c.shape[0]

    def objective(self, beta: np.ndarray) -> float:
        return float(0.5 * beta @ (self._Q @ beta) + self._c @ beta)

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        return self._Q @ beta + self._c

    def is_feasible(self, beta: np.ndarray, tol: float = QP_DEFAULTS["feasibility_tol"]) -> bool:
        inside_box = bool(np.all(beta >= self._lower - tol) and np.all(beta <= self._upper + tol))
        if self._band is None:
            return inside_box
        return inside_box and self._band.violation(beta) <= tol

    def project(self, v: np.ndarray) -> np.ndarray:
        """
        Euclidean projection onto box intersect band.

        Dykstra's alternating projection (box last, so the box holds
        exactly). Its result is accepted only if it satisfies the optimality
        conditions of the projection; otherwise the exact multiplier search
        is used.
        """
        v = np.asarray(v, dtype=np.float64)
        clipped = np.clip(v, self._lower, self._upper)
        if self._band is None or self._band.violation(clipped) == 0.0:
            return clipped
        projected = self._project_dykstra(v)
        if not self._is_projection(v, projected):
            projected = self._project_exact(v)
        return projected

    def _band_slack(self) -> float:
        return QP_DEFAULTS["band_tol"] * max(1.0, abs(self._band.lo), abs(self._band.hi))

    def _project_slab(self, v: np.ndarray) -> np.ndarray:
        band = self._band
        value = band.value(v)
        norm_sq = float(band.a @ band.a)
        if norm_sq == 0.0:
            return v
        if value > band.hi:
            return v - band.a * ((value - band.hi) / norm_sq)
        if value < band.lo:
            return v - band.a * ((value - band.lo) / norm_sq)
        return v

    def _project_dykstra(self, v: np.ndarray) -> np.ndarray:
        max_iter = QP_DEFAULTS["dykstra_max_iter"]
        tol = QP_DEFAULTS["dykstra_tol"]
        x_prev = np.asarray(v, dtype=np.float64)
        x = x_prev
        p = np.zeros_like(x_prev)
        q = np.zeros_like(x_prev)
        for _ in range(max_iter):
            y = self._project_slab(x_prev + p)
            p_next = x_prev + p - y
            x = np.clip(y + q, self._lower, self._upper)
            q_next = y + q - x
            # x can stall while the increments still move
            scale = tol * max(1.0, float(np.max(np.abs(x))))
            moved = max(
                float(np.max(np.abs(x - x_prev))),
                float(np.max(np.abs(p_next - p))),
                float(np.max(np.abs(q_next - q))),
            )
            p, q, x_prev = p_next, q_next, x
            if moved <= scale:
                break
        return x

    def _is_projection(self, v: np.ndarray, x: np.ndarray) -> bool:
        """
        x is the projection of v iff x = clip(v - mu a) for a multiplier mu
        with mu > 0 only at a^T x = hi and mu < 0 only at a^T x = lo.
        """
        band = self._band
        slack = self._band_slack()
        if band.violation(x) > slack:
            return False
        box_tol = QP_DEFAULTS["feasibility_tol"]
        free = (x > self._lower + box_tol) & (x < self._upper - box_tol) & (band.a != 0.0)
        if not np.any(free):
            return False
        mu = float(np.median((v[free] - x[free]) / band.a[free]))
        scale = max(1.0, float(np.max(np.abs(v))))
        if np.max(np.abs(np.clip(v - mu * band.a, self._lower, self._upper) - x)) > box_tol * scale:
            return False
        value = band.value(x)
        mu_tol = box_tol * scale
        if mu > mu_tol and value < band.hi - slack:
            return False
        if mu < -mu_tol and value > band.lo + slack:
            return False
        return True

    def _project_exact(self, v: np.ndarray) -> np.ndarray:
        func_name = "project"
        band = self._band
        v = np.asarray(v, dtype=np.float64)

        def clipped_value(mu: float) -> float:
            return float(band.a @ np.clip(v - mu * band.a, self._lower, self._upper))

        start = clipped_value(0.0)
        if band.lo <= start <= band.hi:
            return np.clip(v, self._lower, self._upper)
        target = band.hi if start > band.hi else band.lo
        direction = 1.0 if start > band.hi else -1.0
        step = 1.0
        while (clipped_value(direction * step) - target) * direction > 0.0:
            step *= 2.0
            if step > 1e300:
                raise QpInfeasibleError(f"{func_name}: band cannot be reached inside the box")
        bracket = sorted((0.0, direction * step))
        try:
            mu = brentq(lambda m: clipped_value(m) - target, bracket[0], bracket[1], xtol=1e-15, rtol=1e-15)
        except (ValueError, RuntimeError) as e:
            raise QpError(f"{func_name}: multiplier search failed ({e})") from e
        return np.clip(v - mu * band.a, self._lower, self._upper)

    def kkt_residual(self, beta: np.ndarray, gradient: Optional[np.ndarray] = None) -> float:
        """
        Infinity norm of the projected-gradient step beta - P(beta - grad).
        """
        if gradient is None:
            gradient = self.gradient(beta)
        return float(np.max(np.abs(beta - self.project(beta - gradient)), initial=0.0))

    def scaled(self, factor: float) -> BoxBandQp:
        band = None if self._band is None else (self._band.a, self._band.lo, self._band.hi)
        return BoxBandQp(self._Q * factor, self._c * factor, self._lower, self._upper, band, check_psd=False)


def _lipschitz_estimate(Q: np.ndarray) -> float:
    n = Q.shape[0]
    if n == 0:
        return 1.0
    vector = np.ones(n) / math.sqrt(n)
    estimate = 0.0
    for _ in range(20):
        image = Q @ vector
        norm = float(np.linalg.norm(image))
        if norm == 0.0:
            break
        estimate = float(vector @ image)
        vector = image / norm
    return max(estimate, 1e-8)


def solve_qp(
    p: BoxBandQp,
    tol: float = QP_DEFAULTS["tol"],
    max_iter: int = QP_DEFAULTS["max_iter"],
    x0: Optional[np.ndarray] = None,
) -> QpSolution:
    """
    Solves a box-and-band constrained convex QP.

    Monotone accelerated projected gradient with backtracking on the
    Lipschitz estimate and a momentum restart whenever the extrapolated
    step fails to decrease the objective. The iterate is always feasible and
    the recorded objective trace is non-increasing.

    Args:
        p (BoxBandQp): The problem.
        tol (float): Tolerance on the projected-gradient residual.
        max_iter (int): Iteration cap.
        x0 (np.ndarray, optional): Starting point; projected onto the
            feasible set. Defaults to the projected box midpoint.

    Returns:
        QpSolution: Best iterate with diagnostics; converged is False when
            max_iter was reached first.

    Raises:
        QpArgumentError: If tol or max_iter is not positive.
    """
    func_name = solve_qp.__name__
    if not tol > 0:
        raise QpArgumentError(f"{func_name}: tol must be > 0, got {tol}")
    if max_iter < 1:
        raise QpArgumentError(f"{func_name}: max_iter must be >= 1, got {max_iter}")

    start = 0.5 * (p.lower + p.upper) if x0 is None else as_float_vector(x0, "x0")
    x = p.project(start)
    Qx = p.Q @ x
    f_x = float(0.5 * x @ Qx + p.c @ x)
    trace = [f_x]
    residual = p.kkt_residual(x, Qx + p.c)
    if residual <= tol:
        return QpSolution(x, f_x, residual, 0, True, np.asarray(trace))

    L = _lipschitz_estimate(p.Q)
    factor = QP_DEFAULTS["backtrack_factor"]
    y = x.copy()
    t = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        Qy = p.Q @ y
        g_y = Qy + p.c
        f_y = float(0.5 * y @ Qy + p.c @ y)
        while True:
            z = p.project(y - g_y / L)
            d = z - y
            Qz = p.Q @ z
            f_z = float(0.5 * z @ Qz + p.c @ z)
            bound = f_y + float(g_y @ d) + 0.5 * L * float(d @ d)
            if f_z <= bound + 1e-12 * max(1.0, abs(f_y)):
                break
            L *= factor

        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if f_z <= f_x:
            x_prev = x
            x, Qx, f_x = z, Qz, f_z
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
        else:
            # no decrease: keep x and restart the momentum from it
            y = x.copy()
            t = 1.0
        trace.append(f_x)

        residual = p.kkt_residual(x, Qx + p.c)
        if residual <= tol:
            converged = True
            break

    if not converged:
        logger.warning(
            "solve_qp: no convergence after %d iterations (residual %.3e > tol %.1e)",
            iterations,
            residual,
            tol,
        )
    else:
        logger.debug("solve_qp: converged in %d iterations, residual %.3e", iterations, residual)
    return QpSolution(x, f_x, residual, iterations, converged, np.asarray(trace))


def qp_bruteforce_oracle(p: BoxBandQp, grid_step: float) -> np.ndarray:
    """
    Exhaustive grid search over the box for small problems (test oracle).

    Each coordinate is sampled on an evenly spaced grid including both
    bounds with spacing at most grid_step; grid points violating the band
    are discarded.

    Args:
        p (BoxBandQp): The problem, n <= 4.
        grid_step (float): Maximum grid spacing, > 0.

    Returns:
        np.ndarray: The feasible grid point with the smallest objective.

    Raises:
        QpArgumentError: If n > 4, the grid is too large or grid_step <= 0.
        QpInfeasibleError: If no grid point satisfies the band.
    """
    func_name = qp_bruteforce_oracle.__name__
    if not grid_step > 0:
        raise QpArgumentError(f"{func_name}: grid_step must be > 0, got {grid_step}")
    if p.n == 0 or p.n > ORACLE_MAX_DIMENSION:
        raise QpArgumentError(
            f"{func_name}: oracle supports 1 <= n <= {ORACLE_MAX_DIMENSION}, got {p.n}"
        )

    axes = []
    for low, high in zip(p.lower, p.upper):
        count = int(math.ceil((high - low) / grid_step - 1e-9)) + 1 if high > low else 1
        axes.append(np.linspace(low, high, count))
    total = int(np.prod([axis.size for axis in axes]))
    if total > ORACLE_MAX_POINTS:
        raise QpArgumentError(f"{func_name}: grid has {total} points, limit is {ORACLE_MAX_POINTS}")

    slack = QP_DEFAULTS["feasibility_tol"]
    best_value = math.inf
    best_point = None
    # vectorise over the trailing axes, loop over the first
    rest = axes[1:]
    if rest:
        mesh = np.stack([m.ravel() for m in np.meshgrid(*rest, indexing="ij")], axis=1)
    else:
        mesh = np.zeros((1, 0))
    for first in axes[0]:
        points = np.hstack([np.full((mesh.shape[0], 1), first), mesh])
        values = 0.5 * np.einsum("ij,jk,ik->i", points, p.Q, points) + points @ p.c
        if p.band is not None:
            band_values = points @ p.band.a
            feasible = (band_values >= p.band.lo - slack) & (band_values <= p.band.hi + slack)
            values = np.where(feasible, values, np.inf)
        index = int(np.argmin(values))
        if values[index] < best_value:
            best_value = float(values[index])
            best_point = points[index].copy()

    if best_point is None:
        raise QpInfeasibleError(f"{func_name}: no grid point satisfies the band")
    return best_point
