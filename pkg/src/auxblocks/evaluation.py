"""Experiment orchestration: threat-model tables, sweeps, and reports.

Static evaluation crafts every attack against the undefended backbone only
and feeds the same adversarials to each defense; adaptive evaluation hands
the attacker full defense parameters and re-crafts per defense. Reports
are plain rows plus named curves, emitted deterministically as CSV, JSON,
and (optionally) SVG.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import attacks, ensemble
from .adv_training import ATConfig
from .attacks import AttackConfig, AdvBatch
from .data import Dataset
from .models import Model
from .tensor import softmax

THREAT_KINDS = {"black_box": (False, False), "static": (True, False), "adaptive": (True, True)}


@dataclass(frozen=True)
class ThreatModel:
    kind: str
    knows_original_params: bool
    knows_defense_params: bool

    def __post_init__(self):
        expected = THREAT_KINDS.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown threat kind {self.kind!r}")
        if (self.knows_original_params, self.knows_defense_params) != expected:
            raise ValueError(f"threat {self.kind!r} must have knowledge flags {expected}")

    @staticmethod
    def static() -> "ThreatModel":
        return ThreatModel("static", True, False)

    @staticmethod
    def adaptive() -> "ThreatModel":
        return ThreatModel("adaptive", True, True)

    @staticmethod
    def black_box() -> "ThreatModel":
        return ThreatModel("black_box", False, False)


@dataclass
class EvalRow:
    dataset: str
    defense: str
    attack: str
    threat: str
    mode: str
    accuracy: float
    n: int
    seed: int
    config_hash: str


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)
    sweeps: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)
    ratios: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)
    metadata: Dict = field(default_factory=dict)

    def merge(self, other: "EvalReport") -> "EvalReport":
        merged = EvalReport(self.rows + other.rows, dict(self.sweeps), dict(self.ratios),
                            dict(self.metadata))
        merged.sweeps.update(other.sweeps)
        merged.ratios.update(other.ratios)
        merged.metadata.update(other.metadata)
        return merged

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "sweeps": {k: [[float(e), float(a)] for e, a in v] for k, v in self.sweeps.items()},
            "ratios": {k: [[float(e), float(a)] for e, a in v] for k, v in self.ratios.items()},
            "metadata": self.metadata,
        }

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        return EvalReport(
            rows=[EvalRow(**r) for r in d.get("rows", [])],
            sweeps={k: [(float(e), float(a)) for e, a in v] for k, v in d.get("sweeps", {}).items()},
            ratios={k: [(float(e), float(a)) for e, a in v] for k, v in d.get("ratios", {}).items()},
            metadata=d.get("metadata", {}),
        )


def config_hash(*parts) -> str:
    """Short stable hash of any JSON-serializable configuration pieces."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _per_example_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = softmax(logits.astype(np.float64))
    return -np.log(np.maximum(p[np.arange(len(labels)), labels], 1e-300))


def _defense_rows(report, defended: Dict[str, Model], images, labels, dataset, attack_name,
                  threat, seed, chash):
    """Accuracy rows for every defense/mode on one batch of (possibly attacked) images."""
    disagreements = {}
    for name, model in defended.items():
        if model.num_aux == 0:
            modes = ["public"]
        else:
            modes = ["vote", "score", "private_vote", "private_score"]
        preds = {m: ensemble.predict(model, images, m) for m in modes}
        for mode in modes:
            report.rows.append(EvalRow(dataset, name, attack_name, threat.kind, mode,
                                       float((preds[mode] == labels).mean()),
                                       len(labels), seed, chash))
        if "vote" in preds and "score" in preds:
            disagreements[name] = float((preds["vote"] != preds["score"]).mean())
    if disagreements:
        key = f"disagreement_rate:{attack_name}"
        report.metadata.setdefault(key, {}).update(disagreements)


def static_eval(defended: Dict[str, Model], undefended: Model, test: Dataset,
                attack_names: Sequence[str] = ("clean", "pgd", "cw", "boundary"),
                n: int = 2000, cw_n: int = 200, boundary_n: int = 1000,
                seed: int = 0,
                pgd_config: Optional[AttackConfig] = None,
                cw_config: Optional[AttackConfig] = None,
                boundary_config: Optional[AttackConfig] = None) -> EvalReport:
    """Static-adversary table: attacks see only the undefended backbone."""
    rng = np.random.default_rng(seed)
    threat = ThreatModel.static()
    report = EvalReport(metadata={"protocol": "static", "seed": seed})
    subset = test.sample(n, rng)

    for attack_name in attack_names:
        if attack_name == "clean":
            images, labels = subset.images, subset.labels
            chash = config_hash("clean", n, seed)
        elif attack_name == "pgd":
            cfg = pgd_config or AttackConfig(family="pgd", epsilon=0.3, step_size=0.1,
                                             iterations=5, seed=seed)
            batch = attacks.pgd(undefended, subset.images, subset.labels, cfg.epsilon,
                                cfg.step_size, cfg.iterations, random_start=cfg.random_start,
                                rng=np.random.default_rng(seed))
            images, labels = batch.adversarials, subset.labels
            chash = config_hash(asdict(cfg), n, seed)
        elif attack_name == "cw":
            cfg = cw_config or AttackConfig(family="cw_l2", seed=seed)
            sub = subset.subset(np.arange(min(cw_n, len(subset))))
            target = (sub.labels + np.random.default_rng(seed).integers(
                1, undefended.num_classes, size=len(sub))) % undefended.num_classes
            batch = attacks.cw_l2(undefended, sub.images, target, cfg)
            images, labels = batch.adversarials, sub.labels
            report.metadata["cw_success_rate"] = float(batch.success.mean())
            report.metadata["cw_mean_l2"] = float(batch.l2[batch.success].mean()) if batch.success.any() else None
            chash = config_hash(asdict(cfg), len(sub), seed)
        elif attack_name == "boundary":
            cfg = boundary_config or AttackConfig(family="boundary", seed=seed)
            sub = test.sample(boundary_n, np.random.default_rng(seed + 1))
            fn = attacks._default_predict(undefended)
            batch = attacks.boundary_attack(fn, sub.images, sub.labels, cfg, seed=seed)
            images, labels = batch.adversarials, sub.labels
            report.metadata["boundary_median_l2"] = float(np.median(batch.l2))
            chash = config_hash(asdict(cfg), len(sub), seed)
        else:
            raise ValueError(f"unknown static attack {attack_name!r}")
        _defense_rows(report, defended, images, labels, test.split or "test",
                      attack_name, threat, seed, chash)
    return report


def adaptive_eval(defended: Dict[str, Model], test: Dataset, n: int = 2000, seed: int = 0,
                  adp_config: Optional[AttackConfig] = None,
                  at_inner: Optional[ATConfig] = None,
                  at_name: str = "AdversarialTraining") -> EvalReport:
    """Adaptive-adversary table: Adp-PGD crafted per defense with full knowledge."""
    cfg = adp_config or AttackConfig(family="adp_pgd", epsilon=0.3, step_size=0.1,
                                     iterations=5, random_start=True, seed=seed)
    at_inner = at_inner or ATConfig()
    threat = ThreatModel.adaptive()
    rng = np.random.default_rng(seed)
    report = EvalReport(metadata={"protocol": "adaptive", "seed": seed})
    subset = test.sample(n, rng)

    for name, model in defended.items():
        x_start = None
        if name == at_name:
            # the defense's own perturbation is the adaptive starting point
            delta_batch = attacks.pgd(model, subset.images, subset.labels, at_inner.epsilon,
                                      at_inner.step_size, at_inner.iterations,
                                      rng=np.random.default_rng(seed))
            x_start = delta_batch.adversarials
        batch = attacks.adp_pgd(model, subset.images, subset.labels, cfg,
                                x_start=x_start, rng=np.random.default_rng(seed))
        chash = config_hash(asdict(cfg), name, n, seed)
        _defense_rows(report, {name: model}, batch.adversarials, subset.labels,
                      test.split or "test", "adp_pgd", threat, seed, chash)
        if model.num_aux > 0:
            logits = ensemble.predict_logits(model, batch.adversarials)
            per_head = [float((z.argmax(axis=1) == subset.labels).mean()) for z in logits]
            report.metadata.setdefault("per_head_accuracy", {})[name] = per_head
    return report


def epsilon_sweep(model: Model, family: str, eps_grid: Sequence[float], test: Dataset,
                  n: int = 500, mode: str = "vote", iterations: int = 5,
                  step_fraction: float = 1 / 3, seed: int = 0,
                  name: Optional[str] = None) -> List[Tuple[float, float]]:
    """Accuracy along an ascending epsilon grid; the zero point is exactly clean."""
    eps_grid = list(eps_grid)
    if not eps_grid:
        raise ValueError("empty epsilon grid")
    if sorted(eps_grid) != eps_grid:
        raise ValueError("epsilon grid must be sorted ascending")
    rng = np.random.default_rng(seed)
    subset = test.sample(n, rng)
    curve = []
    for eps in eps_grid:
        if eps == 0.0:
            acc = ensemble.accuracy(model, subset.images, subset.labels, mode)
        else:
            cfg = AttackConfig(family=family, epsilon=eps,
                               step_size=max(eps * step_fraction, 1e-4),
                               iterations=iterations, random_start=True, seed=seed)
            if family == "adp_fgsm":
                batch = attacks.adp_fgsm(model, subset.images, subset.labels, cfg,
                                         rng=np.random.default_rng(seed))
            elif family == "adp_pgd":
                batch = attacks.adp_pgd(model, subset.images, subset.labels, cfg,
                                        rng=np.random.default_rng(seed))
            else:
                raise ValueError(f"sweep supports adp_fgsm/adp_pgd, got {family!r}")
            acc = ensemble.accuracy(model, batch.adversarials, subset.labels, mode)
        curve.append((float(eps), float(acc)))
    return curve


DEFAULT_RATIO_GRID = (0.0, 0.01, 0.02, 0.03, 0.05, 0.1)


def loss_ratio_experiment(model: Model, test: Dataset,
                          eps_grid: Sequence[float] = DEFAULT_RATIO_GRID,
                          seed: int = 0, n: int = 300,
                          rand_init_scale: float = 1.0) -> Dict[str, List[Tuple[float, float]]]:
    """Per-head attack sensitivity: median l_avg / l_i across the subset.

    For each head i and epsilon, craft a single-step signed-gradient attack on
    head i's loss from a random start inside the scaled ball, then compare
    head i's loss to the average loss of the other heads. Returns one curve
    per head plus a ``pooled`` curve (median over all head/example pairs).
    """
    if model.num_aux < 1:
        raise ValueError("loss ratio experiment needs at least one aux head")
    rng = np.random.default_rng(seed)
    subset = test.sample(n, rng)
    k = model.num_aux + 1
    series: Dict[str, List[Tuple[float, float]]] = {f"block{i}": [] for i in range(k)}
    series["pooled"] = []
    for eps in eps_grid:
        pooled = []
        for i in range(k):
            if eps == 0.0:
                adv = subset.images
            else:
                loss_fn = attacks.block_loss(model, i)
                start = subset.images
                if rand_init_scale > 0:
                    start_rng = np.random.default_rng(seed + 7 * i)
                    start = np.clip(subset.images + start_rng.uniform(
                        -eps * rand_init_scale, eps * rand_init_scale,
                        size=subset.images.shape).astype(np.float32), 0.0, 1.0)
                grad = attacks.input_gradient(model, loss_fn, start, subset.labels)
                adv = np.clip(start + np.float32(eps) * np.sign(grad),
                              np.float32(0.0), np.float32(1.0))
            logits = ensemble.predict_logits(model, adv)
            losses = np.stack([_per_example_ce(z, subset.labels) for z in logits])
            l_i = losses[i]
            l_avg = (losses.sum(axis=0) - l_i) / (k - 1)
            ratios = l_avg / np.maximum(l_i, 1e-12)
            pooled.append(ratios)
            series[f"block{i}"].append((float(eps), float(np.median(ratios))))
        series["pooled"].append((float(eps), float(np.median(np.concatenate(pooled)))))
    return series


def block_position_study(model: Model, test: Dataset, n: int = 500, seed: int = 0,
                         epsilon: float = 8 / 255, step_size: float = 4 / 255,
                         iterations: int = 2) -> Dict[str, float]:
    """Per-head accuracy under a short PGD crafted from the public head."""
    if model.num_aux < 1:
        raise ValueError("position study needs aux heads")
    rng = np.random.default_rng(seed)
    subset = test.sample(n, rng)
    batch = attacks.pgd(model, subset.images, subset.labels, epsilon, step_size, iterations,
                        rng=np.random.default_rng(seed))
    logits = ensemble.predict_logits(model, batch.adversarials)
    out = {f"block{i}": float((z.argmax(axis=1) == subset.labels).mean())
           for i, z in enumerate(logits[:-1])}
    out["public"] = float((logits[-1].argmax(axis=1) == subset.labels).mean())
    return out


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

CSV_HEADER = ["dataset", "defense", "attack", "threat", "mode", "accuracy", "n", "seed",
              "config_hash"]


def _svg_chart(series: Dict[str, List[Tuple[float, float]]], title: str,
               width: int = 480, height: int = 320) -> str:
    """Hand-rolled deterministic SVG line chart."""
    pad = 40
    xs = [p[0] for curve in series.values() for p in curve]
    ys = [p[1] for curve in series.values() for p in curve]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(1.0, max(ys))
    xr = (x1 - x0) or 1.0
    yr = (y1 - y0) or 1.0
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    def sx(x):
        return pad + (x - x0) / xr * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / yr * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" '
             f'font-family="sans-serif" font-size="13">{title}</text>',
             f'<rect x="{pad}" y="{pad / 2:.1f}" width="{width - 2 * pad}" '
             f'height="{height - 1.5 * pad:.1f}" fill="none" stroke="#999"/>']
    for i, (name, curve) in enumerate(sorted(series.items())):
        color = colors[i % len(colors)]
        points = " ".join(f"{sx(e):.2f},{sy(a):.2f}" for e, a in curve)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i:.1f}" fill="{color}" '
                     f'font-family="sans-serif" font-size="10">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(report: EvalReport, out_dir, formats: Sequence[str] = ("csv", "json"),
                basename: str = "report") -> List[Path]:
    """Write the report deterministically; same report in, byte-identical files out."""
    if not report.rows and not report.sweeps and not report.ratios:
        raise ValueError("refusing to emit an empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for fmt in formats:
        if fmt == "csv":
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in report.rows:
                d = asdict(row)
                writer.writerow([d[k] if k != "accuracy" else repr(float(d[k]))
                                 for k in CSV_HEADER])
            path = out_dir / f"{basename}.csv"
            path.write_text(buf.getvalue())
        elif fmt == "json":
            path = out_dir / f"{basename}.json"
            path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
        elif fmt == "svg":
            charts = {}
            if report.sweeps:
                charts["sweeps"] = report.sweeps
            if report.ratios:
                charts["ratios"] = report.ratios
            if not charts:
                continue
            for kind, series in charts.items():
                path = out_dir / f"{basename}_{kind}.svg"
                path.write_text(_svg_chart(series, f"{basename} {kind}"))
                written.append(path)
            continue
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written


def read_report_csv(path) -> List[EvalRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(EvalRow(rec["dataset"], rec["defense"], rec["attack"], rec["threat"],
                                rec["mode"], float(rec["accuracy"]), int(rec["n"]),
                                int(rec["seed"]), rec["config_hash"]))
    return rows
