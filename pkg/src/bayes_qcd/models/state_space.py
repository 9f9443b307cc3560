from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .base import Capability, ObservationModel, PathSampler, _check_k


@dataclass(frozen=True)
class FilterState:
    """Kalman filter state before observing X_n: prediction and its covariance."""

    n: int
    theta_pred: np.ndarray
    P_pred: np.ndarray


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def _check_psd(a: np.ndarray, name: str) -> None:
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(a)) < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class StateSpaceModel(ObservationModel):
    """Additive change in a linear Gaussian state-space model.

    theta_n = F theta_{n-1} + W_{n-1} + nu_theta 1{n >= k},  theta_0 = 0,
    X_n     = theta_n + V_n + nu_x 1{n >= k}.

    Under no change the Kalman innovations xi_n are independent N(0, S_n).
    A change at k shifts the innovation means by a deterministic signature
    delta_n(k) that depends on both n and k through the time-varying gains.
    """

    F: np.ndarray
    K_W: np.ndarray
    K_V: np.ndarray
    nu_theta: np.ndarray
    nu_x: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    capability = Capability.CHANGE_POINT_DEPENDENT
    kind = "state_space"

    def __post_init__(self) -> None:
        F = _as_matrix(self.F, "F")
        K_W = _as_matrix(self.K_W, "K_W")
        K_V = _as_matrix(self.K_V, "K_V")
        nu_theta = np.atleast_1d(np.asarray(self.nu_theta, dtype=float))
        nu_x = np.atleast_1d(np.asarray(self.nu_x, dtype=float))
        m = F.shape[0]
        if K_W.shape != (m, m) or nu_theta.shape != (m,):
            raise ValueError("F, K_W and nu_theta must share the state dimension")
        if K_V.shape != (m, m) or nu_x.shape != (m,):
            raise ValueError("observations are X_n = theta_n + V_n: K_V and nu_x need the state dimension")
        _check_psd(K_W, "K_W")
        _check_psd(K_V, "K_V")
        for name, val in (("F", F), ("K_W", K_W), ("K_V", K_V), ("nu_theta", nu_theta), ("nu_x", nu_x)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        # the first innovation covariance is K_W + K_V; later ones are larger
        if np.min(np.linalg.eigvalsh(K_W + K_V)) <= 0:
            raise ValueError("innovation covariance K_W + K_V is singular; K_V must make it positive definite")

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    # --- Kalman recursion (data independent part) ----------------------

    def _gains(self, n_max: int):
        """Inverse innovation covariances S_n^{-1} and gains K_n for n <= n_max."""
        cache = self._cache.setdefault("gains", {"S": [], "S_inv": [], "K": [], "P_pred": self.K_W.copy()})
        m = self.dim
        eye = np.eye(m)
        while len(cache["S"]) < n_max:
            P_pred = cache["P_pred"]
            S = P_pred + self.K_V
            S_inv = np.linalg.inv(S)
            S_inv = 0.5 * (S_inv + S_inv.T)
            K = P_pred @ S_inv
            P_filt = (eye - K) @ P_pred
            P_filt = 0.5 * (P_filt + P_filt.T)
            cache["S"].append(S)
            cache["S_inv"].append(S_inv)
            cache["K"].append(K)
            cache["P_pred"] = self.F @ P_filt @ self.F.T + self.K_W
        return cache["S"], cache["S_inv"], cache["K"]

    def _signatures(self, n_max: int):
        """Per column n: (S_n^{-1} delta_n(k), 0.5 delta' S^{-1} delta) for k = 1..n."""
        _, S_inv, K = self._gains(n_max)
        cache = self._cache.setdefault(
            "sig",
            {"w": [], "h": [], "E": np.zeros((0, self.dim)), "Dbar": np.zeros((0, self.dim))},
        )
        E, Dbar = cache["E"], cache["Dbar"]
        while len(cache["w"]) < n_max:
            n = len(cache["w"]) + 1
            E = np.vstack([E, np.zeros(self.dim)])
            Dbar = np.vstack([Dbar, np.zeros(self.dim)])
            E = E @ self.F.T + self.nu_theta
            d_hat = Dbar @ self.F.T
            delta = E + self.nu_x - d_hat
            Dbar = d_hat + delta @ K[n - 1].T
            w = delta @ S_inv[n - 1]
            cache["w"].append(w)
            cache["h"].append(0.5 * np.einsum("ij,ij->i", w, delta))
        cache["E"], cache["Dbar"] = E, Dbar
        return cache["w"], cache["h"]

    def signature(self, k: int, n: int) -> np.ndarray:
        """Innovation mean shift delta_n(k) under a change at k."""
        _check_k(k, n)
        S, _, _ = self._gains(n)
        w, _ = self._signatures(n)
        return S[n - 1] @ w[n - 1][k - 1]

    @property
    def kl_number(self) -> float:
        if "q" not in self._cache:
            self._cache["q"] = _limit_drift(self)
        return self._cache["q"]

    # --- data dependent part ---------------------------------------------

    def innovations(self, x: np.ndarray) -> np.ndarray:
        x = self._obs(x)
        n = len(x)
        _, _, K = self._gains(n)
        xi = np.empty_like(x)
        theta_pred = np.zeros(self.dim)
        for i in range(n):
            xi[i] = x[i] - theta_pred
            theta_pred = self.F @ (theta_pred + K[i] @ xi[i])
        return xi

    def _obs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x.reshape(len(x), self.dim)

    def path(self, change_point, rng):
        return _StateSpacePath(self, change_point, rng)

    def llr_block(self, x, n_lo, n_hi, prev=None):
        if prev is None and n_lo > 1:
            return self.llr_block(x, 1, n_hi)[:, n_lo - 1 :]
        xi = self.innovations(self._obs(x)[:n_hi])
        w, h = self._signatures(n_hi)
        inc = np.zeros((n_hi, n_hi - n_lo + 1))
        for col, n in enumerate(range(n_lo, n_hi + 1)):
            inc[:n, col] = w[n - 1] @ xi[n - 1] - h[n - 1]
        z = np.cumsum(inc, axis=1)
        if prev is not None and n_lo > 1:
            z[: n_lo - 1] += np.asarray(prev)[: n_lo - 1, None]
        ks = np.arange(1, n_hi + 1)[:, None]
        ns = np.arange(n_lo, n_hi + 1)[None, :]
        return np.where(ks <= ns, z, -math.inf)

    def llr_path(self, x, k):
        x = self._obs(x)
        _check_k(k, len(x))
        xi = self.innovations(x)
        w, h = self._signatures(len(x))
        inc = [w[n - 1][k - 1] @ xi[n - 1] - h[n - 1][k - 1] for n in range(k, len(x) + 1)]
        return np.cumsum(inc)

    def describe(self):
        return {
            "kind": self.kind,
            "F": self.F.tolist(),
            "K_W": self.K_W.tolist(),
            "K_V": self.K_V.tolist(),
            "nu_theta": self.nu_theta.tolist(),
            "nu_x": self.nu_x.tolist(),
        }

    def __reduce__(self):
        return (type(self), (self.F, self.K_W, self.K_V, self.nu_theta, self.nu_x))


def _limit_drift(model: StateSpaceModel, tol: float = 1e-13, max_steps: int = 100_000) -> float:
    """Limit of 0.5 delta_n(1)' S_n^{-1} delta_n(1) by iterating the recursions.

    Only the k = 1 signature is propagated so this stays O(n) in memory.
    """
    m = model.dim
    eye = np.eye(m)
    P_pred = model.K_W.copy()
    e = np.zeros(m)
    d_bar = np.zeros(m)
    prev_term = math.nan
    history = []
    for _ in range(max_steps):
        S = P_pred + model.K_V
        S_inv = np.linalg.inv(S)
        K = P_pred @ S_inv
        e = model.F @ e + model.nu_theta
        d_hat = model.F @ d_bar
        delta = e + model.nu_x - d_hat
        d_bar = d_hat + K @ delta
        term = 0.5 * float(delta @ S_inv @ delta)
        history.append(term)
        if abs(term - prev_term) <= tol * max(1.0, abs(term)):
            return term
        prev_term = term
        P_pred = model.F @ (eye - K) @ P_pred @ model.F.T + model.K_W
    # no convergence of the per-step term: fall back to a Cesaro mean of the tail
    return math.fsum(history[len(history) // 2 :]) / (len(history) - len(history) // 2)


def kalman_step(model: StateSpaceModel, state: FilterState, x_n) -> tuple[np.ndarray, np.ndarray, FilterState]:
    """One predict/update cycle of the no-change Kalman filter.

    Returns the innovation xi_n, its covariance S_n and the state for n + 1.
    """
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    S = state.P_pred + model.K_V
    S_inv = np.linalg.inv(S)
    xi = x_n - state.theta_pred
    K = state.P_pred @ S_inv
    theta_filt = state.theta_pred + K @ xi
    P_filt = (np.eye(model.dim) - K) @ state.P_pred
    nxt = FilterState(
        n=state.n + 1,
        theta_pred=model.F @ theta_filt,
        P_pred=model.F @ P_filt @ model.F.T + model.K_W,
    )
    return xi, S, nxt


def initial_filter_state(model: StateSpaceModel) -> FilterState:
    """theta_0 = 0 with zero covariance, already propagated to the n = 1 prediction."""
    return FilterState(n=1, theta_pred=np.zeros(model.dim), P_pred=model.K_W.copy())


def state_space_llr(model: StateSpaceModel, trajectory, k: int) -> np.ndarray:
    """Z_n^k for n = k..N."""
    return model.llr_path(trajectory, k)


class _StateSpacePath(PathSampler):
    def __init__(self, model: StateSpaceModel, change_point, rng):
        super().__init__(change_point, rng)
        self.model = model
        self.theta = np.zeros(model.dim)
        self._chol_w = _psd_sqrt(model.K_W)
        self._chol_v = _psd_sqrt(model.K_V)

    def _draw(self, count):
        m = self.model
        dim = m.dim
        noise = self.rng.standard_normal((count, 2, dim))
        post = self.post_change_mask(count)
        out = np.empty((count, dim))
        for i in range(count):
            self.theta = m.F @ self.theta + self._chol_w @ noise[i, 0] + m.nu_theta * post[i]
            out[i] = self.theta + self._chol_v @ noise[i, 1] + m.nu_x * post[i]
        return out[:, 0] if dim == 1 else out


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
