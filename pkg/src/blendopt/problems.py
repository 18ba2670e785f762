"""Local cost ensembles F(w) = (1/N) sum_i f_i(w) and their ground-truth oracles."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class ProblemError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadraticLocal:
    """f(w) = w^T A w + b^T w with A symmetric (possibly indefinite).

    The gradient convention is 2 A w + b.
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.size:
            raise ProblemError(f"incompatible shapes A{A.shape}, b{b.shape}")
        if not np.array_equal(A, A.T):
            A = 0.5 * (A + A.T)
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.b.size

    def value(self, w):
        return float(w @ self.A @ w + self.b @ w)

    def grad(self, w):
        return 2.0 * self.A @ w + self.b

    def hessian(self, w=None):
        return 2.0 * self.A

    def lipschitz(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvalsh(2.0 * self.A))))

    def __eq__(self, other):
        if not isinstance(other, QuadraticLocal):
            return NotImplemented
        return np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b)


@dataclass(frozen=True, eq=False)
class CallableLocal:
    """Plugin cost: user-supplied value and gradient, optional Hessian."""

    fun: Callable
    grad_fun: Callable
    dim: int
    hess_fun: Callable | None = None

    def value(self, w):
        return float(self.fun(w))

    def grad(self, w):
        return np.asarray(self.grad_fun(w), dtype=float)

    def hessian(self, w):
        if self.hess_fun is not None:
            return np.asarray(self.hess_fun(w), dtype=float)
        # central differences on the gradient
        n = self.dim
        H = np.empty((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1e-6 * (1.0 + abs(w[k]))
            H[:, k] = (self.grad(w + e) - self.grad(w - e)) / (2 * e[k])
        return 0.5 * (H + H.T)


class CostEnsemble:
    """N local costs sharing a dimension, with constants L (max gradient
    Lipschitz constant over locals) and alpha (strong convexity of F).

    For all-quadratic ensembles both constants are computed by eigensolve when
    not supplied; plugin ensembles must supply them.
    """

    def __init__(self, locals_: Sequence, lipschitz_L: float | None = None, alpha: float | None = None):
        locals_ = list(locals_)
        if not locals_:
            raise ProblemError("ensemble needs at least one local cost")
        dims = {f.dim for f in locals_}
        if len(dims) != 1:
            raise ProblemError(f"local costs disagree on dimension: {sorted(dims)}")
        self.locals = tuple(locals_)
        self.dim = dims.pop()
        if self.is_quadratic:
            if lipschitz_L is None:
                lipschitz_L = max(f.lipschitz() for f in self.locals)
            if alpha is None:
                alpha = float(np.linalg.eigvalsh(self.hessian_sum() / self.n_agents)[0])
        elif lipschitz_L is None or alpha is None:
            raise ProblemError("non-quadratic ensembles need user-supplied lipschitz_L and alpha")
        self.lipschitz_L = float(lipschitz_L)
        self.alpha = float(alpha)
        if self.is_quadratic:
            self._A2 = np.stack([2.0 * f.A for f in self.locals])
            self._b = np.stack([f.b for f in self.locals])

    @property
    def n_agents(self) -> int:
        return len(self.locals)

    @property
    def is_quadratic(self) -> bool:
        return all(isinstance(f, QuadraticLocal) for f in self.locals)

    def hessian_sum(self) -> np.ndarray:
        """sum_i 2 A_i (quadratic ensembles only)."""
        return sum(f.hessian() for f in self.locals)

    def value(self, w) -> float:
        return sum(f.value(w) for f in self.locals) / self.n_agents

    def grad(self, w) -> np.ndarray:
        if self.is_quadratic:
            return (self._A2 @ w + self._b).mean(axis=0)
        return sum(f.grad(w) for f in self.locals) / self.n_agents

    def local_grads(self, W) -> np.ndarray:
        """Row i is grad f_i(W[i])."""
        W = np.asarray(W)
        if self.is_quadratic:
            return np.einsum("ijk,ik->ij", self._A2, W) + self._b
        return np.stack([f.grad(w) for f, w in zip(self.locals, W)])

    def without(self, k: int) -> "CostEnsemble":
        rest = [f for i, f in enumerate(self.locals) if i != k]
        return self._derived(rest)

    def with_local(self, f, position: int | None = None) -> "CostEnsemble":
        rest = list(self.locals)
        rest.insert(len(rest) if position is None else position, f)
        return self._derived(rest)

    def _derived(self, locals_):
        if all(isinstance(f, QuadraticLocal) for f in locals_):
            return CostEnsemble(locals_)
        return CostEnsemble(locals_, self.lipschitz_L, self.alpha)

    # -- matrix-list file: "N n", each A_i row-major, then each b_i
    def to_text(self) -> str:
        if not self.is_quadratic:
            raise ProblemError("only quadratic ensembles serialize")
        fmt = lambda row: " ".join(f"{v:.17g}" for v in row)
        lines = [f"{self.n_agents} {self.dim}"]
        for f in self.locals:
            lines += [fmt(r) for r in f.A]
        lines += [fmt(f.b) for f in self.locals]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CostEnsemble":
        tok = text.split()
        N, n = int(tok[0]), int(tok[1])
        vals = np.array(tok[2:], dtype=float)
        if vals.size != N * n * n + N * n:
            raise ProblemError(f"expected {N * n * n + N * n} numbers for N={N}, n={n}, got {vals.size}")
        A = vals[: N * n * n].reshape(N, n, n)
        b = vals[N * n * n :].reshape(N, n)
        return cls([QuadraticLocal(A[i], b[i]) for i in range(N)])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "CostEnsemble":
        return cls.from_text(Path(path).read_text())


def _random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    Q, Rq = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(Rq))


def random_quadratic_ensemble(
    n_agents: int,
    dim: int,
    target_max_eig: float,
    target_condition: float,
    seed: int,
    spread: float = 0.02,
    negative_depth: float = 0.02,
) -> CostEnsemble:
    """Random quadratic ensemble whose average A has a prescribed spectrum.

    The mean (1/N) sum A_i has eigenvalues geometrically spaced from
    target_max_eig / target_condition up to target_max_eig, so the Hessian of F
    is twice that and alpha = 2 * target_max_eig / target_condition.
    Zero-sum symmetric perturbations of size ``spread * target_max_eig`` are
    added to the individual A_i; with three or more agents agent 0 is pushed to
    a minimum eigenvalue of ``-negative_depth * target_max_eig`` and agent 1
    absorbs the shift, so the ensemble always exercises non-convex locals.
    """
    if target_max_eig <= 0:
        raise ProblemError(f"target_max_eig must be positive, got {target_max_eig}")
    if target_condition < 1:
        raise ProblemError(f"target_condition must be >= 1, got {target_condition}")
    if n_agents < 1 or dim < 1:
        raise ProblemError("n_agents and dim must be positive")
    rng = np.random.default_rng(seed)

    lo = target_max_eig / target_condition
    spectrum = np.geomspace(lo, target_max_eig, dim) if dim > 1 else np.array([lo])
    Q = _random_orthogonal(dim, rng)
    mean_A = (Q * spectrum) @ Q.T

    if n_agents == 1:
        devs = np.zeros((1, dim, dim))
    else:
        S = rng.standard_normal((n_agents, dim, dim))
        S = 0.5 * (S + S.transpose(0, 2, 1)) * (spread * target_max_eig / np.sqrt(dim))
        devs = S - S.mean(axis=0)
        if n_agents >= 3:
            # shift agent 0 negative along its weakest direction, agent 1 absorbs it
            lam, V = np.linalg.eigh(mean_A + devs[0])
            v = V[:, 0]
            c = max(lam[0], 0.0) + negative_depth * target_max_eig
            shift = c * np.outer(v, v)
            devs[0] -= shift
            devs[1] += shift

    A = mean_A[None] + devs
    # pin the sum exactly: remove residual roundoff from the zero-sum deviations
    A[-1] = n_agents * mean_A - A[:-1].sum(axis=0)
    b = rng.standard_normal((n_agents, dim))
    return CostEnsemble([QuadraticLocal(A[i], b[i]) for i in range(n_agents)])


def quadratic_ensemble(As, bs) -> CostEnsemble:
    return CostEnsemble([QuadraticLocal(A, b) for A, b in zip(As, bs)])


def minimizer(ensemble: CostEnsemble, w0=None, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """argmin F.  Direct linear solve for quadratics, Newton otherwise."""
    n = ensemble.dim
    if ensemble.is_quadratic:
        H = ensemble.hessian_sum()
        lam_min = float(np.linalg.eigvalsh(H / ensemble.n_agents)[0])
        if lam_min <= 1e-14 * max(1.0, float(np.abs(H).max())):
            raise ProblemError(f"sum of A_i is not positive definite (min Hessian eigenvalue {lam_min:.3e})")
        bsum = sum(f.b for f in ensemble.locals)
        return np.linalg.solve(H, -bsum)

    w = np.zeros(n) if w0 is None else np.array(w0, dtype=float)
    for _ in range(max_iter):
        g = ensemble.grad(w)
        if np.linalg.norm(g) < tol:
            return w
        H = sum(f.hessian(w) for f in ensemble.locals) / ensemble.n_agents
        lam_min = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])
        if lam_min <= 0:
            raise ProblemError(f"Hessian of F not positive definite during Newton (min eigenvalue {lam_min:.3e})")
        w = w - np.linalg.solve(H, g)
    if np.linalg.norm(ensemble.grad(w)) < tol:
        return w
    raise ProblemError(f"Newton did not reach |grad F| < {tol} in {max_iter} iterations")


def heavy_ball_equilibrium(ensemble: CostEnsemble, alpha: float | None = None):
    """(w*, Z*) for the output-coupled heavy ball, Z*[i] = -grad f_i(w*) / (2 sqrt(alpha))."""
    alpha = ensemble.alpha if alpha is None else alpha
    if alpha <= 0:
        raise ProblemError(f"heavy-ball damping needs alpha > 0, got {alpha}")
    w = minimizer(ensemble)
    G = ensemble.local_grads(np.tile(w, (ensemble.n_agents, 1)))
    return w, -G / (2.0 * np.sqrt(alpha))


def has_negative_curvature(f) -> bool:
    return bool(np.linalg.eigvalsh(f.hessian())[0] < 0)


def is_indefinite(f) -> bool:
    lam = np.linalg.eigvalsh(f.hessian())
    return bool(lam[0] < 0 < lam[-1])
