"""Trajectory datasets: CSV ingestion, normalization, subsequence batching
and simulators for stable and unstable benchmark systems.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Trajectory:
    """One aligned control/observation sequence, optionally with true latents."""

    u: np.ndarray                  # (T, d_u)
    y: np.ndarray                  # (T, d_y)
    x: np.ndarray | None = None    # (T, d_x) ground truth, simulated data only
    source: str = ""

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u has {u.shape[0]} steps but y has {y.shape[0]}")
        if u.shape[0] < 2:
            raise ValueError("trajectories need at least 2 steps")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite values in trajectory")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.x is not None:
            object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))

    @property
    def length(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics computed from the training split only."""

    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Train/test trajectory collections plus normalization bookkeeping."""

    train: tuple
    test: tuple
    name: str = "dataset"
    lag: int = 5
    stats: NormStats | None = None
    normalized: bool = False

    @property
    def d_u(self) -> int:
        return self.train[0].u.shape[1]

    @property
    def d_y(self) -> int:
        return self.train[0].y.shape[1]

    def compute_stats(self) -> NormStats:
        u_all = np.concatenate([t.u for t in self.train], axis=0)
        y_all = np.concatenate([t.y for t in self.train], axis=0)
        return NormStats(
            u_mean=u_all.mean(axis=0),
            u_std=np.maximum(u_all.std(axis=0), STD_FLOOR),
            y_mean=y_all.mean(axis=0),
            y_std=np.maximum(y_all.std(axis=0), STD_FLOOR),
        )

    def normalize(self) -> "Dataset":
        """Z-score every channel using training-split statistics."""
        if self.normalized:
            return self
        stats = self.stats or self.compute_stats()

        def tf(traj: Trajectory) -> Trajectory:
            return Trajectory(
                u=(traj.u - stats.u_mean) / stats.u_std,
                y=(traj.y - stats.y_mean) / stats.y_std,
                x=traj.x, source=traj.source,
            )

        return replace(self, train=tuple(tf(t) for t in self.train),
                       test=tuple(tf(t) for t in self.test),
                       stats=stats, normalized=True)

    def denormalize(self) -> "Dataset":
        if not self.normalized:
            return self
        stats = self.stats

        def tf(traj: Trajectory) -> Trajectory:
            return Trajectory(
                u=traj.u * stats.u_std + stats.u_mean,
                y=traj.y * stats.y_std + stats.y_mean,
                x=traj.x, source=traj.source,
            )

        return replace(self, train=tuple(tf(t) for t in self.train),
                       test=tuple(tf(t) for t in self.test), normalized=False)


def denormalize_predictions(dataset: Dataset, y_pred: np.ndarray,
                            y_true: np.ndarray | None = None):
    """Map normalized observation-space values back to the raw scale."""
    if not dataset.normalized or dataset.stats is None:
        return (y_pred, y_true) if y_true is not None else y_pred
    s = dataset.stats
    raw_pred = y_pred * s.y_std + s.y_mean
    if y_true is None:
        return raw_pred
    return raw_pred, y_true * s.y_std + s.y_mean


# --- CSV ingestion ------------------------------------------------------------

def load_csv(path, u_cols: list[str], y_cols: list[str], seq_col: str | None = None,
             train_fraction: float = 0.5, test_path=None, name: str | None = None,
             lag: int = 5) -> Dataset:
    """Parse trajectories from a comma-separated file with a header row.

    Rows are ordered by time; an optional ``seq_col`` breaks the file into
    multiple trajectories. Without ``test_path`` the first
    ``train_fraction`` of each trajectory (or of the trajectory list) forms
    the training split. Raises on missing columns or non-numeric cells,
    reporting the offending row and column.
    """
    path = Path(path)
    trajs = _read_csv_trajectories(path, u_cols, y_cols, seq_col)
    if test_path is not None:
        train = trajs
        test = _read_csv_trajectories(Path(test_path), u_cols, y_cols, seq_col)
    elif len(trajs) > 1:
        k = max(1, int(round(train_fraction * len(trajs))))
        k = min(k, len(trajs) - 1)
        train, test = trajs[:k], trajs[k:]
    else:
        u, y = trajs[0].u, trajs[0].y
        split = int(round(train_fraction * len(y)))
        split = min(max(split, 2), len(y) - 2)
        train = [Trajectory(u[:split], y[:split], source=f"{path}:train")]
        test = [Trajectory(u[split:], y[split:], source=f"{path}:test")]
    return Dataset(train=tuple(train), test=tuple(test),
                   name=name or path.stem, lag=lag)


def _read_csv_trajectories(path: Path, u_cols, y_cols, seq_col) -> list[Trajectory]:
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in list(u_cols) + list(y_cols) if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}; header has {header}")
        if seq_col is not None and seq_col not in header:
            raise ValueError(f"{path}: missing sequence column {seq_col!r}")
        groups: dict[str, list] = {}
        order: list[str] = []
        for i, row in enumerate(reader):
            key = row[seq_col] if seq_col else "0"
            if key not in groups:
                groups[key] = []
                order.append(key)
            try:
                u = [float(row[c]) for c in u_cols]
                y = [float(row[c]) for c in y_cols]
            except (TypeError, ValueError) as err:
                bad = [c for c in list(u_cols) + list(y_cols)
                       if not _is_number(row.get(c))]
                raise ValueError(
                    f"{path}: non-numeric cell at data row {i + 1}, column(s) {bad}"
                ) from err
            groups[key].append((u, y))
    trajs = []
    for key in order:
        rows = groups[key]
        if len(rows) < 2:
            raise ValueError(f"{path}: sequence {key!r} has fewer than 2 rows")
        u = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        trajs.append(Trajectory(u, y, source=f"{path}:{key}"))
    return trajs


def _is_number(s) -> bool:
    try:
        float(s)
        return True
    except (TypeError, ValueError):
        return False


def load_manifest(path) -> Dataset:
    """Load a dataset described by a TOML manifest.

    The manifest declares the CSV location and column roles::

        name = "actuator"
        path = "actuator.csv"        # relative to the manifest
        u_cols = ["u0"]
        y_cols = ["y0"]
        lag = 5
        train_fraction = 0.5         # or test_path = "...csv"
        # seq_col = "seq"

    Unknown keys are rejected.
    """
    try:
        import tomllib
    except ModuleNotFoundError:                  # Python 3.10
        import tomli as tomllib

    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    allowed = {"name", "path", "u_cols", "y_cols", "seq_col",
               "train_fraction", "test_path", "lag"}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"{path}: unknown manifest key(s) {sorted(unknown)}")
    for key in ("path", "u_cols", "y_cols"):
        if key not in raw:
            raise ValueError(f"{path}: manifest is missing {key!r}")
    csv_path = (path.parent / raw["path"]).resolve()
    test_path = raw.get("test_path")
    if test_path is not None:
        test_path = (path.parent / test_path).resolve()
    return load_csv(csv_path, raw["u_cols"], raw["y_cols"],
                    seq_col=raw.get("seq_col"),
                    train_fraction=raw.get("train_fraction", 0.5),
                    test_path=test_path, name=raw.get("name"),
                    lag=raw.get("lag", 5))


def save_csv(path, trajectories, u_names=None, y_names=None) -> None:
    """Write trajectories to CSV with a ``seq`` column; inverse of load_csv."""
    trajectories = list(trajectories)
    d_u = trajectories[0].u.shape[1]
    d_y = trajectories[0].y.shape[1]
    u_names = u_names or [f"u{i}" for i in range(d_u)]
    y_names = y_names or [f"y{i}" for i in range(d_y)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq"] + list(u_names) + list(y_names))
        for k, traj in enumerate(trajectories):
            for t in range(traj.length):
                writer.writerow([k] + [repr(float(v)) for v in traj.u[t]]
                                + [repr(float(v)) for v in traj.y[t]])


# --- simulators ----------------------------------------------------------------

@dataclass(frozen=True)
class DubinsParams:
    """Configuration of the planar unicycle ("Dubins car") simulator.

    State is position and heading ``(px, py, theta)``; controls are speed
    and curvature commands, generated as Ornstein-Uhlenbeck-smoothed random
    walks clipped to their ranges. ``observe_heading=False`` hides the
    heading, giving the partially observed setting (d_y=2, d_x=3).
    """

    dt: float = 0.1
    process_noise: float = 0.01
    obs_noise: float = 0.01
    speed_range: tuple = (0.5, 1.5)
    curvature_range: tuple = (-1.0, 1.0)
    observe_heading: bool = False
    heading_init_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.process_noise < 0 or self.obs_noise < 0:
            raise ValueError("noise levels must be nonnegative")


def _ou_controls(T: int, lo: float, hi: float, rng: np.random.Generator,
                 smooth: float = 0.9) -> np.ndarray:
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    z = np.zeros(T)
    z[0] = rng.uniform(-1.0, 1.0)
    for t in range(1, T):
        z[t] = smooth * z[t - 1] + np.sqrt(1 - smooth**2) * rng.standard_normal()
    return np.clip(mid + half * z, lo, hi)


def simulate_dubins(params: DubinsParams, T: int, n_traj: int, seed: int = 0,
                    n_test: int | None = None, lag: int = 5) -> Dataset:
    """Euler-discretized noisy unicycle rollouts with ground-truth latents.

    Dynamics per step: ``px += dt v cos(theta)``, ``py += dt v sin(theta)``,
    ``theta += dt v kappa``, each plus independent Gaussian process noise.
    Deterministic per seed.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    n_test = n_test if n_test is not None else max(1, n_traj // 4)
    rng = np.random.default_rng(seed)
    trajs = []
    for k in range(n_traj + n_test):
        v = _ou_controls(T, *params.speed_range, rng=rng)
        kap = _ou_controls(T, *params.curvature_range, rng=rng)
        x = np.zeros((T, 3))
        x[0, 2] = rng.uniform(*params.heading_init_range)
        noise = params.process_noise * rng.standard_normal((T, 3))
        for t in range(T - 1):
            px, py, th = x[t]
            x[t + 1, 0] = px + params.dt * v[t] * np.cos(th) + noise[t, 0]
            x[t + 1, 1] = py + params.dt * v[t] * np.sin(th) + noise[t, 1]
            x[t + 1, 2] = th + params.dt * v[t] * kap[t] + noise[t, 2]
        d_y = 3 if params.observe_heading else 2
        y = x[:, :d_y] + params.obs_noise * rng.standard_normal((T, d_y))
        trajs.append(Trajectory(np.column_stack([v, kap]), y, x=x, source=f"dubins:{k}"))
    return Dataset(train=tuple(trajs[:n_traj]), test=tuple(trajs[n_traj:]),
                   name="dubins", lag=lag)


def simulate_linear(A, B, C, Q, R, T: int, n_traj: int, seed: int = 0,
                    n_test: int | None = None, u_scale: float = 1.0,
                    lag: int = 5, x0_scale: float = 0.0) -> Dataset:
    """Linear-Gaussian trajectories ``x' = Ax + Bu + w``, ``y = Cx + v``.

    Controls are smoothed random walks scaled by ``u_scale``; deterministic
    per seed.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    d_x, d_u = B.shape
    d_y = C.shape[0]
    if A.shape != (d_x, d_x) or C.shape[1] != d_x or Q.shape != (d_x, d_x) \
            or R.shape != (d_y, d_y):
        raise ValueError("inconsistent system matrix dimensions")
    n_test = n_test if n_test is not None else max(1, n_traj // 4)
    rng = np.random.default_rng(seed)
    Lq = _psd_sqrt(Q)
    Lr = _psd_sqrt(R)
    trajs = []
    for k in range(n_traj + n_test):
        u = np.column_stack([_ou_controls(T, -u_scale, u_scale, rng) for _ in range(d_u)])
        x = np.zeros((T, d_x))
        x[0] = x0_scale * rng.standard_normal(d_x)
        for t in range(T - 1):
            w = Lq @ rng.standard_normal(d_x)
            x[t + 1] = A @ x[t] + B @ u[t] + w
        y = x @ C.T + (Lr @ rng.standard_normal((T, d_y)).T).T
        trajs.append(Trajectory(u, y, x=x, source=f"linear:{k}"))
    return Dataset(train=tuple(trajs[:n_traj]), test=tuple(trajs[n_traj:]),
                   name="linear", lag=lag)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (handles singular noise covariances)."""
    vals, vecs = np.linalg.eigh(M)
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def mss_check(A) -> dict:
    """Spectral radius of a square matrix and the mean-square-stability verdict.

    Uses log-growth power iteration; falls back to a dense eigenvalue
    computation when the iteration has not converged (complex dominant
    pairs make the plain ratio oscillate).
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] != A.shape[1]:
        raise ValueError("mss_check needs a square matrix")
    n = A.shape[0]
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    radius = None
    prev = None
    log_growth = 0.0
    for it in range(1, 2001):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            radius = 0.0
            break
        log_growth += np.log(norm)
        v = w / norm
        est = np.exp(log_growth / it)
        if prev is not None and it > 20 and abs(est - prev) < 1e-12 * max(est, 1.0):
            radius = est
            break
        prev = est
    if radius is None:
        radius = float(np.max(np.abs(np.linalg.eigvals(A))))
    return {"spectral_radius": float(radius), "is_mss": bool(radius < 1.0)}


# --- subsequence batching -------------------------------------------------------

def subsequences(dataset: Dataset, length: int, batch_size: int, seed: int = 0):
    """Infinite stream of uniformly placed training windows.

    Yields ``(y, u)`` stacks of shape ``(batch, length, d)``. Each draw picks
    a trajectory (weighted by its number of valid offsets) and a start
    offset uniformly. Deterministic per seed.
    """
    lengths = [t.length for t in dataset.train]
    if length > min(lengths):
        raise ValueError(
            f"window length {length} exceeds shortest training trajectory {min(lengths)}")
    starts_per = np.array([l - length + 1 for l in lengths], dtype=np.float64)
    probs = starts_per / starts_per.sum()
    rng = np.random.default_rng(seed)
    while True:
        ys, us = [], []
        for _ in range(batch_size):
            k = int(rng.choice(len(lengths), p=probs))
            s = int(rng.integers(0, lengths[k] - length + 1))
            traj = dataset.train[k]
            ys.append(traj.y[s:s + length])
            us.append(traj.u[s:s + length])
        yield np.stack(ys), np.stack(us)
