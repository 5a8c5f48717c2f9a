"""Batch experiment orchestration: ablation, stability, linear recovery,
spurious-solution audits and structure checks, with deterministic on-disk
run records."""

from __future__ import annotations

import hashlib
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conditions import (
    ConditionReport,
    check_intersection_condition,
    check_span_condition,
    check_undercomplete_condition,
)
from .datagen import (
    StructureMask,
    generate_dataset,
    random_intersection_mask,
    sample_sources,
)
from .flows import (
    CouplingFlow,
    GaussianPrior,
    fit_gaussianizer,
    ks_statistic_two_sample,
    rotated_gaussian_mpa,
)
from .linear import (
    LinearMixing,
    RotationSearchConfig,
    recover_linear_gaussian,
    signed_perm_distance,
)
from .metrics import mcc
from .support import SupportPattern
from .training import TrainConfig, train


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# recipe per ablation variant: data generator, estimator mode, regularizer.
# The sparsity estimator runs in volume-preserving mode: with a free
# determinant and a learned prior, a latent rescaling removes the entrywise
# L1 penalty without touching the fit, so the penalty stops selecting
# structure; pinning the volume restores the tie-break.
VARIANT_RECIPES = {
    "SS": {"generator": "ss", "mode": CouplingFlow.VOLUME_PRESERVING,
           "regularizer": "l1"},
    "II": {"generator": "ii", "mode": CouplingFlow.VOLUME_PRESERVING,
           "regularizer": "ortho"},
    "VP": {"generator": "vp", "mode": CouplingFlow.VOLUME_PRESERVING,
           "regularizer": "none"},
    "Base": {"generator": "base", "mode": CouplingFlow.GENERAL,
             "regularizer": "none"},
}

EXPERIMENT_KINDS = ("ablation", "stability", "linear", "mpa-audit", "check")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(EXPERIMENT_KINDS)},
        "variants": {"type": "array", "items": {"enum": list(VARIANT_RECIPES)},
                     "minItems": 1},
        "n_list": {"type": "array", "items": {"type": "integer", "minimum": 2},
                   "minItems": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "k": {"type": "integer", "minimum": 10},
        "m_list": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "rotations": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "method": {"enum": ["pearson", "spearman"]},
        "estimator_layers": {"type": "integer", "minimum": 1},
        "estimator_hidden": {"type": "integer", "minimum": 1},
        "train": {
            "type": "object",
            "properties": {
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "lam": {"type": "number", "minimum": 0},
                "standardize": {"type": "boolean"},
            },
        },
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    variants: tuple[str, ...] = ("SS", "II", "VP", "Base")
    n_list: tuple[int, ...] = (5,)
    trials: int = 10
    seed: int = 0
    k: int = 10000
    m_list: tuple[int, ...] = ()          # linear experiment only
    rotations: int = 100                  # mpa audit only
    workers: int = 1
    method: str = "pearson"
    estimator_layers: int = 16
    estimator_hidden: int = 16
    learning_rate: float = 0.01
    batch_size: int = 1000
    epochs: int = 300
    lam: float = 0.1
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.variants:
            raise ConfigError("variants must be nonempty")
        for v in self.variants:
            if v not in VARIANT_RECIPES:
                raise ConfigError(f"unknown variant {v!r}")
        if any(n < 2 for n in self.n_list):
            raise ConfigError("n must be >= 2")
        if len(set(self.n_list)) != len(self.n_list):
            raise ConfigError("duplicate n values")

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in ("variants", "n_list", "m_list"):
            doc[key] = list(doc[key])
        return doc

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def train_config(self, seed: int, regularizer: str) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lam=self.lam if regularizer != "none" else 0.0,
            regularizer=regularizer,
            seed=seed,
            standardize=self.standardize,
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        validate_config(doc)
        known = {f for f in cls.__dataclass_fields__}
        flat = {k: v for k, v in doc.items() if k in known and k != "train"}
        flat.update(doc.get("train", {}))
        for key in ("variants", "n_list", "m_list"):
            if key in flat:
                flat[key] = tuple(flat[key])
        return cls(**flat)


def validate_config(doc: dict) -> None:
    """Check a config document against CONFIG_SCHEMA, with field paths in
    error messages."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "kind" not in doc:
        raise ConfigError("missing required field: kind")
    props = CONFIG_SCHEMA["properties"]
    train_props = props["train"]["properties"]
    known = set(props) | set(TrainConfig.__dataclass_fields__)
    for key, value in doc.items():
        if key not in known:
            raise ConfigError(f"unknown field: {key}")
        spec = props.get(key)
        if spec is None:
            continue
        _check_field(key, value, spec)
    for key, value in doc.get("train", {}).items():
        if key not in set(TrainConfig.__dataclass_fields__):
            raise ConfigError(f"unknown field: train.{key}")
        if key in train_props:
            _check_field(f"train.{key}", value, train_props[key])


def _check_field(path: str, value, spec: dict) -> None:
    if "enum" in spec and value not in spec["enum"]:
        raise ConfigError(f"{path}: must be one of {spec['enum']}")
    t = spec.get("type")
    if t == "integer" and not isinstance(value, int):
        raise ConfigError(f"{path}: must be an integer")
    if t == "number" and not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: must be a number")
    if t == "boolean" and not isinstance(value, bool):
        raise ConfigError(f"{path}: must be a boolean")
    if t == "array":
        if not isinstance(value, list):
            raise ConfigError(f"{path}: must be an array")
        if "minItems" in spec and len(value) < spec["minItems"]:
            raise ConfigError(f"{path}: needs at least {spec['minItems']} items")
        for i, item in enumerate(value):
            _check_field(f"{path}[{i}]", item, spec["items"])
    if "minimum" in spec and isinstance(value, (int, float)) \
            and value < spec["minimum"]:
        raise ConfigError(f"{path}: must be >= {spec['minimum']}")
    if "exclusiveMinimum" in spec and isinstance(value, (int, float)) \
            and value <= spec["exclusiveMinimum"]:
        raise ConfigError(f"{path}: must be > {spec['exclusiveMinimum']}")


@dataclass
class RunRecord:
    kind: str
    config_hash: str
    config: dict
    trials: list[dict]
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "config": self.config,
            "trials": self.trials,
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _summary_stats(values: list[float | None]) -> dict:
    good = [v for v in values if v is not None]
    out = {
        "count": len(values),
        "failures": len(values) - len(good),
        "mcc": values,
    }
    if good:
        out["mean_mcc"] = float(np.mean(good))
        out["std_mcc"] = float(np.std(good))
    return out


# ---------------------------------------------------------------------------
# single training trial (worker-side)


def run_training_trial(variant: str, n: int, trial: int,
                       config: ExperimentConfig) -> dict:
    """Generate the variant's dataset, train the matching estimator and
    evaluate; failures are captured per-trial, never raised."""
    recipe = VARIANT_RECIPES[variant]
    seed = config.seed + trial  # per-trial stream: seed + trial index
    out = {"variant": variant, "n": n, "trial": trial, "seed": seed,
           "mcc": None, "error": None, "eval": None, "conditions": [],
           "history_csv": "", "meta": {}}
    try:
        ds = generate_dataset(recipe["generator"], n=n, k=config.k, seed=seed)
        out["meta"] = ds.meta()
        conditions: list[ConditionReport] = []
        if ds.mask is not None:
            pattern = SupportPattern.from_matrix(ds.mask)
            conditions.append(check_intersection_condition(pattern))
            if ds.mixing is not None:
                conditions.append(check_span_condition(
                    ds.mixing.jacobian, pattern, trials=64, seed=seed))
        out["conditions"] = [c.to_dict() for c in conditions]
        flow = CouplingFlow.create(
            n, config.estimator_layers, config.estimator_hidden,
            recipe["mode"], init="identity", seed=seed)
        prior = GaussianPrior.standard(n)
        tc = config.train_config(seed, recipe["regularizer"])
        flow, prior, history = train(flow, prior, ds.observations, tc)
        estimates = flow.inverse(ds.observations)
        report = mcc(ds.sources, estimates, config.method)
        out["mcc"] = report.mcc
        out["eval"] = report.to_dict()
        out["history_csv"] = history.to_csv()
        out["aborted"] = history.aborted
    except Exception as exc:  # isolate trial failures
        out["error"] = f"{type(exc).__name__}: {exc}"
        out["traceback"] = traceback.format_exc()
    return out


def _trial_task(args):
    return run_training_trial(*args)


def _run_pool(tasks: list[tuple], config: ExperimentConfig) -> list[dict]:
    if config.workers <= 1 or len(tasks) <= 1:
        return [_trial_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_trial_task, tasks))


# ---------------------------------------------------------------------------
# experiments


def run_ablation(config: ExperimentConfig,
                 out_dir: str | Path | None = None) -> RunRecord:
    """Per variant and trial: generate, train the matching estimator,
    evaluate MCC."""
    n = config.n_list[0]
    tasks = [(variant, n, t, config)
             for variant in config.variants for t in range(config.trials)]
    results = _run_pool(tasks, config)
    by_variant: dict[str, list[dict]] = {v: [] for v in config.variants}
    for res in results:
        by_variant[res["variant"]].append(res)
    summary = {v: _summary_stats([r["mcc"] for r in rows])
               for v, rows in by_variant.items()}
    record = RunRecord("ablation", config.hash(), config.to_dict(),
                       results, summary)
    if out_dir is not None:
        write_run_record(record, out_dir)
    return record


def run_stability(config: ExperimentConfig,
                  out_dir: str | Path | None = None) -> RunRecord:
    """MCC-versus-n series for the requested variants."""
    if len(config.n_list) < 2:
        raise ConfigError("stability needs at least two n values")
    tasks = [(variant, n, t, config)
             for variant in config.variants
             for n in config.n_list
             for t in range(config.trials)]
    results = _run_pool(tasks, config)
    summary: dict = {}
    for variant in config.variants:
        series = {}
        for n in config.n_list:
            vals = [r["mcc"] for r in results
                    if r["variant"] == variant and r["n"] == n]
            series[str(n)] = _summary_stats(vals)
        means = [series[str(n)].get("mean_mcc") for n in config.n_list]
        entry = {"per_n": series}
        if all(m is not None for m in means):
            entry["spread"] = float(max(means) - min(means))
            entry["decline"] = float(means[0] - means[-1])
        summary[variant] = entry
    record = RunRecord("stability", config.hash(), config.to_dict(),
                       results, summary)
    if out_dir is not None:
        write_run_record(record, out_dir)
    return record


def _linear_trial(args) -> dict:
    n, m, trial, config = args
    seed = config.seed + trial
    rng = np.random.default_rng(seed + 7_000_017)
    out = {"variant": "linear", "n": n, "m": m, "trial": trial, "seed": seed,
           "error": None}
    try:
        mask = random_intersection_mask(m, n, seed=seed,
                                        require_undercomplete=True)
        coeff = rng.choice([-1.0, 1.0], size=(m, n)) * rng.uniform(
            0.5, 1.5, size=(m, n))
        A = mask.matrix * coeff
        S, _variances = sample_sources(n, config.k, seed)
        X = S @ A.T
        search = RotationSearchConfig(seed=seed)
        mixing, result = recover_linear_gaussian(X, n, search)
        out["distance"] = signed_perm_distance(mixing.matrix, A)
        out["objective"] = result.objective
        out["mask"] = mask.matrix.astype(int).tolist()
        out["conditions"] = [
            check_intersection_condition(mask.pattern()).to_dict(),
            check_undercomplete_condition(mask.pattern()).to_dict(),
        ]
    except Exception as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
        out["distance"] = None
    return out


def run_linear(config: ExperimentConfig,
               out_dir: str | Path | None = None) -> RunRecord:
    """Linear Gaussian recovery over random admissible masks."""
    m_list = config.m_list if config.m_list else tuple(config.n_list)
    tasks = []
    for t in range(config.trials):
        n = config.n_list[t % len(config.n_list)]
        m = max(n, m_list[t % len(m_list)])
        tasks.append((n, m, t, config))
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_linear_trial, tasks))
    else:
        results = [_linear_trial(t) for t in tasks]
    distances = [r.get("distance") for r in results]
    good = [d for d in distances if d is not None]
    summary = {
        "distances": distances,
        "below_0.05": sum(1 for d in good if d < 0.05),
        "count": len(results),
    }
    if good:
        summary["mean_distance"] = float(np.mean(good))
    record = RunRecord("linear", config.hash(), config.to_dict(),
                       results, summary)
    if out_dir is not None:
        write_run_record(record, out_dir)
    return record


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish rotation from the QR of a Gaussian matrix, det +1."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def run_mpa_audit(config: ExperimentConfig,
                  out_dir: str | Path | None = None,
                  mask: StructureMask | None = None) -> RunRecord:
    """Measure how often a rotated-Gaussian spurious solution densifies the
    sampled Jacobian support of a structured linear mixing.

    Requires a structure passing the union-minus-rank condition; identity
    rotations are excluded by a distance guard. Per rotation the report
    carries the support counts and the worst per-component two-sample KS
    between true and spurious observations.
    """
    n = config.n_list[0]
    m = config.m_list[0] if config.m_list else 2 * n
    rng = np.random.default_rng(config.seed)
    if mask is None:
        mask = random_intersection_mask(m, n, seed=config.seed,
                                        require_undercomplete=True)
    report = check_undercomplete_condition(mask.pattern())
    if not report.verdict:
        raise ConfigError("structure fails the undercomplete condition")
    coeff = rng.choice([-1.0, 1.0], size=(m, n)) * rng.uniform(0.5, 1.5, (m, n))
    A = mask.matrix * coeff
    mixing = LinearMixing(A, seed=config.seed, mask=mask.matrix)
    S, variances = sample_sources(n, config.k, config.seed)
    prior = GaussianPrior.from_moments(np.zeros(n), variances)
    gaussianizer = fit_gaussianizer(prior=prior, kind="parametric")
    points = S[np.linspace(0, config.k - 1, 64, dtype=int)]
    X_true = mixing(S)

    def support_count(fn) -> int:
        mats = [fn.jacobian(p) for p in points]
        tol = 1e-6 * max(np.max(np.abs(M)) for M in mats)
        seen: set[tuple[int, int]] = set()
        for M in mats:
            idx = np.argwhere(np.abs(M) > tol)
            seen.update((int(i), int(j)) for i, j in idx)
        return len(seen)

    true_count = support_count(mixing)
    trials = []
    denser = 0
    for t in range(config.rotations):
        while True:
            U = random_rotation(n, rng)
            if np.max(np.abs(U - np.eye(n))) > 0.1:  # identity guard
                break
        mpa = rotated_gaussian_mpa(mixing, U, gaussianizer)
        count = support_count(mpa)
        X_mpa = mpa(S)
        ks = max(ks_statistic_two_sample(X_true[:, j], X_mpa[:, j])
                 for j in range(m))
        is_denser = count > true_count
        denser += int(is_denser)
        trials.append({
            "rotation_index": t,
            "support_count": count,
            "denser": bool(is_denser),
            "max_component_ks": ks,
        })
    summary = {
        "true_support_count": true_count,
        "densified_fraction": denser / config.rotations,
        "max_ks_over_rotations": max(t["max_component_ks"] for t in trials),
        "condition": report.to_dict(),
        "mask": mask.matrix.astype(int).tolist(),
    }
    record = RunRecord("mpa-audit", config.hash(), config.to_dict(),
                       trials, summary)
    if out_dir is not None:
        write_run_record(record, out_dir)
    return record


def run_check(path: str | Path) -> list[ConditionReport]:
    """All applicable structure checkers for a mask file or dataset directory.

    Accepts a SupportPattern JSON document, a 0/1 CSV mask, or a dataset
    directory whose meta.json carries a mask.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.is_dir():
        meta = json.loads((path / "meta.json").read_text())
        if "mask" not in meta:
            raise ValueError(f"{path}/meta.json has no mask to check")
        pattern = SupportPattern.from_matrix(np.asarray(meta["mask"]))
    else:
        text = path.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            doc = None
        if doc is not None:
            pattern = SupportPattern.from_json(text)
        else:
            try:
                pattern = SupportPattern.from_matrix(
                    np.loadtxt(path, delimiter=",", ndmin=2))
            except Exception as exc:
                raise ValueError(
                    f"{path}: neither SupportPattern JSON nor CSV mask "
                    f"({exc})") from exc
    reports = [check_intersection_condition(pattern)]
    try:
        reports.append(check_undercomplete_condition(pattern))
    except ValueError as exc:
        reports.append(ConditionReport(
            "undercomplete", False,
            details=[{"holds": None, "refused": str(exc)}],
            notes=("enumeration guard refused the instance",)))
    return reports


# ---------------------------------------------------------------------------
# on-disk layout


def write_run_record(record: RunRecord, out_dir: str | Path) -> Path:
    """<out>/<experiment>/<variant>/trial-<k>/{meta.json, history.csv,
    eval.json} plus a top-level summary.json. Reruns with an identical config
    are byte-identical."""
    base = Path(out_dir) / record.kind
    base.mkdir(parents=True, exist_ok=True)
    for res in record.trials:
        variant = str(res.get("variant", "run"))
        trial = res.get("trial", res.get("rotation_index", 0))
        tdir = base / variant / f"trial-{trial}"
        tdir.mkdir(parents=True, exist_ok=True)
        meta = {k: v for k, v in res.items()
                if k not in ("history_csv", "eval")}
        (tdir / "meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=1) + "\n")
        if res.get("history_csv"):
            (tdir / "history.csv").write_text(res["history_csv"])
        if res.get("eval") is not None:
            (tdir / "eval.json").write_text(
                json.dumps(res["eval"], sort_keys=True, indent=1) + "\n")
    (base / "summary.json").write_text(record.to_json() + "\n")
    return base


def load_summary(out_dir: str | Path, kind: str) -> dict:
    """Reload a summary and recheck it against its per-trial entries."""
    doc = json.loads((Path(out_dir) / kind / "summary.json").read_text())

    def check(stats: dict, label: str) -> None:
        entries = stats.get("mcc")
        if not entries:
            return
        good = [v for v in entries if v is not None]
        if good and abs(np.mean(good) - stats["mean_mcc"]) > 1e-12:
            raise ValueError(f"summary inconsistent for {label}")

    if doc["kind"] == "ablation":
        for variant, stats in doc["summary"].items():
            check(stats, variant)
    elif doc["kind"] == "stability":
        for variant, entry in doc["summary"].items():
            for n, stats in entry["per_n"].items():
                check(stats, f"{variant}/n={n}")
    return doc
