"""Monte Carlo uncertainty quantification of classification accuracy.

Each MC run redraws every source of randomness: the train/validation/test
split, the network's initial weights, and (when the noise level is
positive) a Gaussian perturbation of the raw damage time series.  Noise is
added to ``phi`` itself, once per run, before any splitting, so train and
test data are corrupted alike; features ``g = (1 - phi)^2`` are recomputed
from the noisy damage and clipped to [0, 1].

Per-run seeds derive from ``base_seed`` and the run index through numpy's
SeedSequence, so results are reproducible and independent of execution
order (runs may execute in a process pool).
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classify import AnnConfig, SplitSpec, accuracy, ann_train, fit_knn, knn_predict, split
from .constitutive import degradation
from .errors import ConfigurationError, PflError, UqError
from .geometry import _atomic_write_text

__all__ = [
    "DEFAULT_NOISE_GRID",
    "UqSpec",
    "UqResult",
    "add_gaussian_noise",
    "features_from_phi",
    "mc_accuracy",
    "resolve_workers",
]

# Noise standard deviations (absolute phi units) used by sweep studies.
DEFAULT_NOISE_GRID = (0.01, 0.02, 0.05, 0.10, 0.20)


@dataclass(frozen=True)
class UqSpec:
    """Monte Carlo study specification.

    ``task`` and ``case_id`` are provenance tags (the data decides what is
    actually classified); ``workers`` requests a process pool, capped by
    the ``PFL_THREADS`` environment variable.
    """

    runs: int = 1000
    noise_stds: tuple = (0.0,)
    algorithms: tuple = ("knn", "ann")
    task: str = "presence"
    scheme: str = "multi3"
    case_id: int | None = None
    base_seed: int = 0
    comb: int = 2
    val_fraction: float = 0.15
    knn_k: int = 2
    knn_metric: str = "cosine"
    ann: AnnConfig = field(default_factory=AnnConfig)
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be at least 1")
        if any(s < 0.0 for s in self.noise_stds):
            raise ConfigurationError("noise standard deviations must be non-negative")
        if not self.noise_stds:
            raise ConfigurationError("need at least one noise level")
        bad = [a for a in self.algorithms if a not in ("knn", "ann")]
        if bad:
            raise ConfigurationError(f"unknown algorithms {bad}")


def add_gaussian_noise(series, std, seed):
    """Add i.i.d. N(0, std^2) noise to every entry of a raw damage matrix.

    No clamping is applied; downstream feature extraction handles range.
    ``std = 0`` returns an exact copy.
    """
    series = np.asarray(series, dtype=float)
    if std < 0.0:
        raise ConfigurationError("noise std must be non-negative")
    if std == 0.0:
        return series.copy()
    rng = np.random.default_rng(seed)
    return series + rng.normal(0.0, std, size=series.shape)


def features_from_phi(phi_values):
    """Degradation features of (possibly noisy) damage, clipped to [0, 1]."""
    return np.clip(degradation(np.asarray(phi_values, dtype=float)), 0.0, 1.0)


def resolve_workers(requested):
    """Worker count after applying the PFL_THREADS environment cap."""
    requested = max(1, int(requested))
    cap = os.environ.get("PFL_THREADS", "").strip()
    if cap:
        try:
            cap_n = int(cap)
        except ValueError as exc:
            raise ConfigurationError(f"PFL_THREADS must be an integer, got {cap!r}") from exc
        if cap_n >= 1:
            requested = min(requested, cap_n)
    return requested


# =====================================================================
# Result container
# =====================================================================

@dataclass
class UqResult:
    """Per-(algorithm, noise std) accuracy samples and their statistics.

    ``raw[(algorithm, std)]`` holds the per-run accuracies that succeeded;
    ``failures`` records (run, algorithm, std, message) tuples for excluded
    runs.  Standard deviations use the population convention (ddof 0), so
    a single run reports 0.
    """

    algorithms: tuple
    noise_stds: tuple
    runs: int
    raw: dict
    failures: list = field(default_factory=list)

    def accuracies(self, algorithm, std):
        return self.raw[(algorithm, float(std))]

    def mean(self, algorithm, std):
        return float(np.mean(self.accuracies(algorithm, std)))

    def std(self, algorithm, std):
        return float(np.std(self.accuracies(algorithm, std)))

    def rows(self):
        out = []
        for alg in self.algorithms:
            for std in self.noise_stds:
                acc = self.accuracies(alg, std)
                out.append(
                    {
                        "algorithm": alg,
                        "noise_std": float(std),
                        "mean_acc": float(np.mean(acc)),
                        "std_acc": float(np.std(acc)),
                        "runs": int(acc.size),
                    }
                )
        return out

    def write_report(self, path):
        lines = ["algorithm,noise_std,mean_acc,std_acc,runs"]
        for r in self.rows():
            lines.append(
                f"{r['algorithm']},{r['noise_std']:.17g},{r['mean_acc']:.17g},"
                f"{r['std_acc']:.17g},{r['runs']}"
            )
        _atomic_write_text(path, "\n".join(lines) + "\n")

    def write_raw(self, path):
        lines = ["algorithm,noise_std,run,accuracy"]
        for (alg, std), accs in sorted(self.raw.items()):
            for i, a in enumerate(accs):
                lines.append(f"{alg},{std:.17g},{i},{a:.17g}")
        _atomic_write_text(path, "\n".join(lines) + "\n")


# =====================================================================
# Monte Carlo driver
# =====================================================================

def _run_seeds(base_seed, run, n_noise):
    """Deterministic per-run child seeds: (split, ann_init, noise...)."""
    children = np.random.SeedSequence(entropy=(base_seed, run)).spawn(2 + n_noise)
    split_seed = int(children[0].generate_state(1)[0])
    init_seed = int(children[1].generate_state(1)[0])
    return split_seed, init_seed, children[2:]


def _single_run(run, phi, labels, spec):
    """All (algorithm, noise) accuracies of one MC run.

    Returns (results, failures): results maps (algorithm, std) to
    accuracy, failures lists (run, algorithm, std, message).
    """
    split_seed, init_seed, noise_seeds = _run_seeds(spec.base_seed, run, len(spec.noise_stds))
    results = {}
    failures = []
    for std, noise_seed in zip(spec.noise_stds, noise_seeds):
        try:
            noisy = add_gaussian_noise(phi, std, noise_seed)
            g = features_from_phi(noisy)
            train, val, test = split(
                labels, SplitSpec(comb=spec.comb, val_fraction=spec.val_fraction, seed=split_seed)
            )
        except PflError as exc:
            failures.extend((run, alg, float(std), str(exc)) for alg in spec.algorithms)
            continue
        for alg in spec.algorithms:
            try:
                if alg == "knn":
                    pool = np.concatenate([train, val])
                    model = fit_knn(g[pool], labels[pool], k=spec.knn_k, metric=spec.knn_metric)
                    preds = knn_predict(model, g[test])
                else:
                    model = ann_train(
                        g[train], labels[train], g[val], labels[val],
                        config=spec.ann, seed=init_seed,
                    )
                    preds = model.predict(g[test])
                results[(alg, float(std))] = accuracy(preds, labels[test])
            except PflError as exc:
                failures.append((run, alg, float(std), str(exc)))
    return results, failures


_POOL_DATA = {}


def _pool_init(phi, labels, spec):
    _POOL_DATA["args"] = (phi, labels, spec)


def _pool_run(run):
    phi, labels, spec = _POOL_DATA["args"]
    return _single_run(run, phi, labels, spec)


def mc_accuracy(spec, data, labels):
    """Monte Carlo mean/std of test accuracy per algorithm and noise level.

    Parameters
    ----------
    spec : UqSpec
    data : ndarray, shape (m, n)
        Raw damage matrix (phi, not features).
    labels : ndarray, shape (m,)

    Returns
    -------
    UqResult

    Raises
    ------
    UqError
        If more than 1% of the (run, algorithm, noise) cells fail.
    """
    phi = np.asarray(data, dtype=float)
    labels = np.asarray(labels)
    if phi.shape[0] != labels.shape[0]:
        raise ConfigurationError("data and labels disagree in length")

    samples = {(alg, float(s)): [] for alg in spec.algorithms for s in spec.noise_stds}
    failures = []
    workers = resolve_workers(spec.workers)
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(phi, labels, spec)
        ) as pool:
            outcomes = list(pool.map(_pool_run, range(spec.runs), chunksize=8))
    else:
        outcomes = [_single_run(run, phi, labels, spec) for run in range(spec.runs)]

    for results, fails in outcomes:
        failures.extend(fails)
        for key, acc in results.items():
            samples[key].append(acc)

    total_cells = spec.runs * len(spec.algorithms) * len(spec.noise_stds)
    if len(failures) > 0.01 * total_cells:
        raise UqError(
            f"{len(failures)} of {total_cells} Monte Carlo cells failed; "
            f"first failure: {failures[0][3]}"
        )

    raw = {key: np.array(vals) for key, vals in samples.items()}
    for key, vals in raw.items():
        if vals.size == 0:
            raise UqError(f"no successful runs for {key}")
    return UqResult(
        algorithms=tuple(spec.algorithms),
        noise_stds=tuple(float(s) for s in spec.noise_stds),
        runs=spec.runs,
        raw=raw,
        failures=failures,
    )
