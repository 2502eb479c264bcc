"""Monte Carlo paths for the Heston system, its smoothed approximations, and
regression-based American pricing.

Random numbers come from a counter-based generator. Paths live in fixed
blocks of ``BLOCK`` lanes; block ``b`` of a batch draws from Philox keyed by
(seed, purpose, b), so a batch is reproducible regardless of how blocks are
spread over threads, and growing ``n_paths`` never reshuffles earlier paths.
Every block is always simulated in full and truncated afterwards so the
floating-point work per path does not depend on the batch size either.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import HestonParams, ParameterError, PutSpec

BLOCK = 1024
_MASK64 = (1 << 64) - 1

# stream purposes; each gets a disjoint key range
VALUATION, TRAINING = 0, 1


class LSMCError(RuntimeError):
    pass


@dataclass(eq=False)
class PathBatch:
    """Paths recorded on ``times``; row p is path p, driven by substream p."""

    times: np.ndarray
    x_paths: np.ndarray | None
    y_paths: np.ndarray
    seed: int
    stream_ids: np.ndarray
    scheme: str
    substeps: int = 1
    sup_y: np.ndarray | None = None  # optional running sups kept by paired runs

    @property
    def n_paths(self) -> int:
        return self.y_paths.shape[0]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "x", "y"])
            for p in range(self.n_paths):
                for i, t in enumerate(self.times):
                    x = "" if self.x_paths is None else repr(float(self.x_paths[p, i]))
                    w.writerow([int(self.stream_ids[p]), repr(float(t)), x,
                                repr(float(self.y_paths[p, i]))])


@dataclass(frozen=True)
class SmoothingFamily:
    """f_n, a smooth stand-in for sqrt(y^+) with 1/n <= f_n < n.

    f_n^2 = a + (M - a) tanh(sp(y) / (M - a)), a = 1/n^2, M = n^2, where
    sp(y) = log(1 + e^{n^2 y}) / n^2 is a softplus. Both maps have slope at
    most one, so f_n^2 is 1-Lipschitz for every n, and f_n^2 -> y^+ locally
    uniformly.
    """

    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError("smoothing index n must be a positive integer")

    def squared(self, y):
        y = np.asarray(y, dtype=float)
        n2 = float(self.n) ** 2
        lo = 1.0 / n2
        span = n2 - lo
        sp = np.logaddexp(0.0, n2 * y) / n2
        if span <= 0.0:  # n = 1: the plateaus coincide
            return np.full_like(sp, lo)
        return lo + span * np.tanh(sp / span)

    def __call__(self, y):
        return np.sqrt(self.squared(y))


def _block_rng(seed: int, purpose: int, block: int) -> np.random.Generator:
    key = (seed & _MASK64) | (((purpose & 0xFFFF) << 48 | (block & ((1 << 48) - 1))) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _step_grid(times: np.ndarray, substeps: int) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0) or times[0] != 0.0:
        raise ParameterError("times must start at 0 and increase strictly")
    if substeps < 1:
        raise ParameterError("substeps must be >= 1")
    return np.diff(times)


def _run_blocks(n_paths: int, threads: int, fn) -> list:
    if n_paths < 1:
        raise ParameterError("n_paths must be >= 1")
    n_blocks = -(-n_paths // BLOCK)
    if threads <= 1 or n_blocks == 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_blocks)))


def _simulate(
    params: HestonParams,
    x0: float | None,
    y0: float,
    times,
    n_paths: int,
    seed: int,
    *,
    substeps: int = 1,
    threads: int = 1,
    purpose: int = VALUATION,
    smoothing: SmoothingFamily | None = None,
    track_sup: bool = False,
):
    """Euler paths driven by one normal pair per step per path.

    Returns per-block arrays of recorded x, y and (optionally) running sups
    of |x| and |y| over every internal step, used for sup-distances.
    """
    dts = _step_grid(times, substeps)
    n_rec = dts.size + 1
    n_steps = dts.size * substeps
    kappa, theta, sigma, rho = params.kappa, params.theta, params.sigma, params.rho
    drift_x = params.r - params.delta
    rho_bar = math.sqrt(1.0 - rho * rho)
    want_x = x0 is not None

    def block(b: int):
        z = _block_rng(seed, purpose, b).standard_normal((n_steps, 2, BLOCK))
        y = np.full(BLOCK, float(y0))
        x = np.full(BLOCK, float(x0) if want_x else 0.0)
        ys = np.empty((BLOCK, n_rec))
        xs = np.empty((BLOCK, n_rec)) if want_x else None
        ys[:, 0] = y if smoothing is not None else np.maximum(y, 0.0)
        if want_x:
            xs[:, 0] = x
        path_x = [x.copy()] if track_sup else None
        path_y = [ys[:, 0].copy()] if track_sup else None
        step = 0
        for i, dt_rec in enumerate(dts):
            h = dt_rec / substeps
            sq = math.sqrt(h)
            for _ in range(substeps):
                zw, zb = z[step, 0], z[step, 1]
                if smoothing is None:
                    v = np.maximum(y, 0.0)
                    vol = np.sqrt(v)
                else:
                    v = smoothing.squared(y)
                    vol = np.sqrt(v)
                if want_x:
                    x = x + (drift_x - 0.5 * v) * h + vol * sq * (rho * zw + rho_bar * zb)
                y = y + kappa * (theta - v) * h + sigma * vol * sq * zw
                step += 1
                if track_sup:
                    path_x.append(x)
                    path_y.append(y if smoothing is not None else np.maximum(y, 0.0))
            ys[:, i + 1] = y if smoothing is not None else np.maximum(y, 0.0)
            if want_x:
                xs[:, i + 1] = x
        extra = None
        if track_sup:
            extra = (np.stack(path_x, axis=1), np.stack(path_y, axis=1))
        return xs, ys, extra

    parts = _run_blocks(n_paths, threads, block)
    xs = np.concatenate([p[0] for p in parts])[:n_paths] if want_x else None
    ys = np.concatenate([p[1] for p in parts])[:n_paths]
    fine = None
    if track_sup:
        fine = (
            np.concatenate([p[2][0] for p in parts])[:n_paths],
            np.concatenate([p[2][1] for p in parts])[:n_paths],
        )
    return xs, ys, fine


def _check_inputs(params: HestonParams, y0: float, seed: int) -> None:
    if y0 < 0.0:
        raise ParameterError("y0 must be >= 0")
    if not (-1.0 < params.rho < 1.0):
        raise ParameterError("rho must lie in (-1, 1)")
    if not (0 <= int(seed) <= _MASK64):
        raise ParameterError("seed must be an unsigned 64-bit integer")


def simulate_cir(
    params: HestonParams,
    y0: float,
    times,
    n_paths: int,
    seed: int,
    scheme: str = "full-truncation",
    *,
    substeps: int = 1,
    threads: int = 1,
    purpose: int = VALUATION,
) -> PathBatch:
    if scheme != "full-truncation":
        raise ParameterError(f"unsupported CIR scheme {scheme!r}")
    _check_inputs(params, y0, seed)
    _, ys, _ = _simulate(params, None, y0, times, n_paths, seed,
                         substeps=substeps, threads=threads, purpose=purpose)
    return PathBatch(np.asarray(times, float).copy(), None, ys, int(seed),
                     np.arange(n_paths), scheme, substeps)


def simulate_heston(
    params: HestonParams,
    s0: float,
    y0: float,
    times,
    n_paths: int,
    seed: int,
    *,
    substeps: int = 1,
    threads: int = 1,
    purpose: int = VALUATION,
) -> PathBatch:
    if s0 <= 0.0:
        raise ParameterError("s0 must be > 0")
    _check_inputs(params, y0, seed)
    xs, ys, _ = _simulate(params, math.log(s0), y0, times, n_paths, seed,
                          substeps=substeps, threads=threads, purpose=purpose)
    return PathBatch(np.asarray(times, float).copy(), xs, ys, int(seed),
                     np.arange(n_paths), "full-truncation", substeps)


def simulate_smoothed(
    n: int,
    params: HestonParams,
    x0: float,
    y0: float,
    times,
    n_paths: int,
    seed: int,
    *,
    substeps: int = 1,
    threads: int = 1,
    purpose: int = VALUATION,
) -> PathBatch:
    """Euler paths of the smoothed system; same normals as simulate_heston.

    Y^n is recorded as simulated and may dip below zero, since its diffusion
    coefficient never vanishes.
    """
    fam = SmoothingFamily(n)
    _check_inputs(params, y0, seed)
    xs, ys, _ = _simulate(params, x0, y0, times, n_paths, seed, substeps=substeps,
                          threads=threads, purpose=purpose, smoothing=fam)
    return PathBatch(np.asarray(times, float).copy(), xs, ys, int(seed),
                     np.arange(n_paths), f"smoothed-euler-n{n}", substeps)


def sup_distances(
    n: int,
    params: HestonParams,
    x0: float,
    y0: float,
    times,
    n_paths: int,
    seed: int,
    *,
    substeps: int = 1,
    threads: int = 1,
) -> dict:
    """Common-random-number estimates of E sup_t |Y^n - Y| and E sup_t |X^n - X|.

    Sups run over every internal Euler step, not only recorded times.
    """
    kw = dict(substeps=substeps, threads=threads, track_sup=True)
    _, _, (fx, fy) = _simulate(params, x0, y0, times, n_paths, seed, **kw)
    _, _, (gx, gy) = _simulate(params, x0, y0, times, n_paths, seed,
                               smoothing=SmoothingFamily(n), **kw)
    dy = np.max(np.abs(gy - fy), axis=1)
    dx = np.max(np.abs(gx - fx), axis=1)
    sup_yn = np.max(np.abs(gy), axis=1)
    return {
        "n": n,
        "sup_y": float(dy.mean()),
        "sup_y_se": float(dy.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        "sup_x": float(dx.mean()),
        "sup_x_se": float(dx.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        "second_moment_sup_yn": float(np.mean(sup_yn**2)),
    }


# ---------------------------------------------------------------- pricing


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 100_000
    n_dates: int = 50
    substeps: int = 4
    seed: int = 20240601
    training_paths: int | None = None  # defaults to n_paths
    threads: int = 1
    smoothing_n: int | None = None  # price under (X^n, Y^n) instead of (X, Y)

    def __post_init__(self) -> None:
        if self.n_paths < 2:
            raise ParameterError("n_paths must be >= 2")
        if self.n_dates < 1:
            raise ParameterError("n_dates must be >= 1")
        if self.substeps < 1:
            raise ParameterError("substeps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MCEstimate:
    price: float
    stderr: float
    details: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.price
        yield self.stderr


def _batch(params, spec, s0, y0, cfg: MCConfig, purpose: int, n_paths: int) -> PathBatch:
    times = np.linspace(0.0, spec.maturity, cfg.n_dates + 1)
    if cfg.smoothing_n is None:
        return simulate_heston(params, s0, y0, times, n_paths, cfg.seed,
                               substeps=cfg.substeps, threads=cfg.threads, purpose=purpose)
    return simulate_smoothed(cfg.smoothing_n, params, math.log(s0), y0, times, n_paths,
                             cfg.seed, substeps=cfg.substeps, threads=cfg.threads,
                             purpose=purpose)


def _payoff(kind: str, strike: float, s: np.ndarray) -> np.ndarray:
    if kind == "put":
        return np.maximum(strike - s, 0.0)
    if kind == "call":
        return np.maximum(s - strike, 0.0)
    raise ValueError(f"unknown payoff {kind!r}")


def _basis(s: np.ndarray, y: np.ndarray, strike: float, y_scale: float) -> np.ndarray:
    a = s / strike
    v = y / y_scale
    return np.stack([np.ones_like(a), a, v, a * a, v * v, a * v], axis=1)


def _regress(A: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares on the columns that actually vary; returns (keep, coef).

    The normal equations are accumulated with fixed-order pairwise sums so the
    fit does not depend on BLAS threading.
    """
    keep = np.ones(A.shape[1], dtype=bool)
    for c in range(1, A.shape[1]):
        col = A[:, c]
        if np.ptp(col) <= 1e-12 * max(1.0, float(np.max(np.abs(col)))):
            keep[c] = False
    B = A[:, keep]
    m = B.shape[1]
    G = np.empty((m, m))
    rhs = np.empty(m)
    for i in range(m):
        rhs[i] = np.sum(B[:, i] * target)
        for j in range(i, m):
            G[i, j] = G[j, i] = np.sum(B[:, i] * B[:, j])
    scale = np.sqrt(np.diag(G))
    Gs = G / np.outer(scale, scale)
    if np.linalg.cond(Gs) > 1e12:
        raise LSMCError(
            "regression matrix is numerically singular; reduce the basis "
            "(fewer polynomial terms) or add paths"
        )
    coef = np.linalg.solve(Gs, rhs / scale) / scale
    return keep, coef


def _exercise_policy(batch: PathBatch, spec: PutSpec, r: float, kind: str, y_scale: float):
    """Backward induction on the training batch; returns per-date regression fits."""
    K = spec.strike
    t = batch.times
    s = np.exp(batch.x_paths)
    n_dates = t.size - 1
    cash = _payoff(kind, K, s[:, -1])
    when = np.full(batch.n_paths, n_dates)
    fits: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for k in range(n_dates - 1, 0, -1):
        pay = _payoff(kind, K, s[:, k])
        itm = pay > 0.0
        if itm.sum() < 2:
            continue
        disc = np.exp(-r * (t[when] - t[k]))
        A = _basis(s[itm, k], batch.y_paths[itm, k], K, y_scale)
        keep, coef = _regress(A, cash[itm] * disc[itm])
        fits[k] = (keep, coef)
        cont = A[:, keep] @ coef
        ex = pay[itm] >= cont
        idx = np.flatnonzero(itm)[ex]
        cash[idx] = pay[idx]
        when[idx] = k
    cont0 = float(np.mean(cash * np.exp(-r * t[when])))
    return fits, cont0


def _apply_policy(batch: PathBatch, spec: PutSpec, r: float, kind: str, y_scale: float,
                  fits: dict, immediate: float | None) -> np.ndarray:
    """Discounted cash per valuation path; ``immediate`` set means exercise at 0."""
    K = spec.strike
    t = batch.times
    s = np.exp(batch.x_paths)
    n_dates = t.size - 1
    if immediate is not None:
        return np.full(batch.n_paths, immediate)
    value = _payoff(kind, K, s[:, -1]) * math.exp(-r * t[-1])
    done = np.zeros(batch.n_paths, dtype=bool)
    out = np.zeros(batch.n_paths)
    for k in range(1, n_dates):
        if k not in fits:
            continue
        pay = _payoff(kind, K, s[:, k])
        live = (~done) & (pay > 0.0)
        if not live.any():
            continue
        keep, coef = fits[k]
        cont = _basis(s[live, k], batch.y_paths[live, k], K, y_scale)[:, keep] @ coef
        idx = np.flatnonzero(live)[pay[live] >= cont]
        out[idx] = pay[idx] * math.exp(-r * t[k])
        done[idx] = True
    out[~done] = value[~done]
    return out


def lsmc_price(
    params: HestonParams,
    spec: PutSpec,
    s0: float,
    y0: float,
    config: MCConfig | None = None,
    *,
    kind: str = "put",
    training: PathBatch | None = None,
    valuation: PathBatch | None = None,
) -> MCEstimate:
    """Regression Monte Carlo price on exercise dates t_k = k T / n_dates.

    The exercise rule is fitted on a training batch and applied to an
    independent valuation batch, so the estimate is low-biased only by the
    rule's suboptimality, not by in-sample fitting.
    """
    cfg = config or MCConfig()
    n_train = cfg.training_paths or cfg.n_paths
    if training is None:
        training = _batch(params, spec, s0, y0, cfg, TRAINING, n_train)
    if valuation is None:
        valuation = _batch(params, spec, s0, y0, cfg, VALUATION, cfg.n_paths)
    if training.times.size < 2:
        raise ParameterError("need at least one exercise date after 0")
    y_scale = max(params.theta, y0, 1e-8)
    fits, cont0 = _exercise_policy(training, spec, params.r, kind, y_scale)
    immediate = float(_payoff(kind, spec.strike, np.array([s0]))[0])
    exercise_now = immediate > 0.0 and immediate >= cont0
    cash = _apply_policy(valuation, spec, params.r, kind, y_scale, fits,
                         immediate if exercise_now else None)
    n = cash.size
    price = float(np.mean(cash))
    se = float(np.std(cash, ddof=1) / math.sqrt(n))
    return MCEstimate(price, se, {
        "kind": kind,
        "exercise_at_zero": bool(exercise_now),
        "training_estimate": cont0,
        "n_paths": n,
        "training_paths": training.n_paths,
        "dates": int(training.times.size - 1),
    })


def european_from_batch(batch: PathBatch, spec: PutSpec, r: float, kind: str = "put") -> MCEstimate:
    cash = _payoff(kind, spec.strike, np.exp(batch.x_paths[:, -1])) * math.exp(-r * batch.times[-1])
    n = cash.size
    return MCEstimate(float(np.mean(cash)), float(np.std(cash, ddof=1) / math.sqrt(n)),
                      {"kind": kind, "n_paths": n})


def european_mc_price(
    params: HestonParams,
    spec: PutSpec,
    s0: float,
    y0: float,
    config: MCConfig | None = None,
    *,
    kind: str = "put",
    batch: PathBatch | None = None,
) -> MCEstimate:
    cfg = config or MCConfig()
    if batch is None:
        batch = _batch(params, spec, s0, y0, cfg, VALUATION, cfg.n_paths)
    return european_from_batch(batch, spec, params.r, kind)


def append_result(log_path: str | Path, record: dict) -> None:
    """Append one estimator record (with its config echo) to a JSON-lines log."""
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
