"""Corpus, benchmark and experiment orchestration behind the CLI.

All outputs are machine-readable CSV/JSON with documented schemas; every
run is a pure function of its config plus root seed, so identical invocations
produce byte-identical output trees.

Output tree of a benchmark:

    out/corpus/<sequence>/...               generated sequence dirs
    out/<tracker>/<sequence>/predictions.csv
    out/<tracker>/<sequence>/report.json
    out/tables/ablation.csv                 tracker,mean_auc
    out/tables/search.csv                   search,mean_auc
    out/tables/challenge.csv                tag,<tracker...>
    out/tables/repetition.csv               tracker,repetition,mean_auc
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import derive
from .errors import ConfigError, DataError
from .geom import Box
from .metrics import evaluate
from .synthvid import Sequence, SequenceConfig, extend_long, generate_sequence, write_sequence
from .trackers import TRACKER_KINDS, SiameseConfig, TrackRun, run_tracker
from . import dynamics, gate


def load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON: {e}") from e


# ---------------------------------------------------------------------------
# corpus

@dataclass
class CorpusSpec:
    sequences: list[tuple[str, SequenceConfig]]
    repetitions: int = 0  # 0: leave raw; >=1: extend by that many repetitions

    @classmethod
    def from_dict(cls, d: dict, root_seed: int | None = None) -> "CorpusSpec":
        seqs = []
        entries = d.get("sequences")
        if not entries:
            raise ConfigError("corpus config needs a non-empty 'sequences' list")
        seed0 = root_seed if root_seed is not None else int(d.get("root_seed", 0))
        for i, entry in enumerate(entries):
            entry = dict(entry)
            name = entry.pop("name", f"seq{i:03d}")
            if "seed" not in entry:
                entry["seed"] = derive(seed0, "sequence", name)
            seqs.append((name, SequenceConfig.from_dict(entry)))
        names = [n for n, _ in seqs]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate sequence names in corpus")
        return cls(seqs, int(d.get("repetitions", 0)))


def build_corpus(spec: CorpusSpec, out_dir=None) -> list[tuple[str, Sequence]]:
    """Generate (and optionally persist) every sequence of the corpus."""
    out = []
    for name, cfg in spec.sequences:
        seq = generate_sequence(cfg)
        if spec.repetitions >= 1:
            seq = extend_long(seq, spec.repetitions)
        if out_dir is not None:
            write_sequence(seq, Path(out_dir) / name)
        out.append((name, seq))
    return out


# ---------------------------------------------------------------------------
# prediction streams

def write_predictions(path, run: TrackRun) -> None:
    lines = ["frame,x,y,w,h,present,score,search_kind"]
    for i, (b, s, k) in enumerate(zip(run.boxes, run.scores, run.kinds)):
        p = 1 if b.present else 0
        lines.append(f"{i},{b.x!r},{b.y!r},{b.w!r},{b.h!r},{p},{float(s)!r},{k}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_predictions(path) -> tuple[list[Box], list[float], list[str]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"prediction file not found: {p}")
    lines = p.read_text().splitlines()
    if not lines or lines[0].strip() != "frame,x,y,w,h,present,score,search_kind":
        raise DataError(f"{p}: missing or bad header row")
    boxes, scores, kinds = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise DataError(f"{p}: line {ln}: expected 8 fields, got {len(parts)}")
        try:
            x, y, w, h = (float(v) for v in parts[1:5])
            present = int(parts[5])
            score = float(parts[6])
        except ValueError as e:
            raise DataError(f"{p}: line {ln}: {e}") from e
        boxes.append(Box(x, y, w, h) if present else Box.absent())
        scores.append(score)
        kinds.append(parts[7])
    return boxes, scores, kinds


# ---------------------------------------------------------------------------
# benchmark

@dataclass
class BenchmarkConfig:
    corpus: CorpusSpec
    roster: list[str]
    root_seed: int = 0
    gate_checkpoint: str | None = None
    alpha: float = 0.05
    sim_threshold: float = 0.5
    gate_threshold: float = 0.9
    gate_history: int = 8
    global_T: int = 15

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        if "corpus" not in d:
            raise ConfigError("benchmark config needs a 'corpus' section")
        root_seed = int(d.get("root_seed", 0))
        roster = d.get("roster") or []
        for t in roster:
            if t not in TRACKER_KINDS:
                raise ConfigError(f"unknown tracker in roster: {t!r}")
        if not roster:
            raise ConfigError("benchmark roster is empty")
        return cls(
            corpus=CorpusSpec.from_dict(d["corpus"], root_seed),
            roster=list(roster),
            root_seed=root_seed,
            gate_checkpoint=d.get("gate_checkpoint"),
            alpha=float(d.get("alpha", 0.05)),
            sim_threshold=float(d.get("sim_threshold", 0.5)),
            gate_threshold=float(d.get("gate_threshold", 0.9)),
            gate_history=int(d.get("gate_history", 8)),
            global_T=int(d.get("global_T", 15)),
        )


def _fmt_row(cells) -> str:
    return ",".join(repr(float(c)) if isinstance(c, float) else str(c) for c in cells)


def run_benchmark(cfg: BenchmarkConfig, out_dir) -> dict:
    """Run every (tracker, sequence) pair and emit reports and tables.

    Returns {tracker: {sequence: EvalReport}} for programmatic use.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = build_corpus(cfg.corpus, out / "corpus")

    gate_clf = None
    if "hybrid-gated" in cfg.roster:
        if not cfg.gate_checkpoint:
            raise ConfigError("roster includes hybrid-gated but no gate_checkpoint given")
        gate_clf = gate.load_checkpoint(cfg.gate_checkpoint)

    scfg = SiameseConfig(global_T=cfg.global_T)
    reports: dict[str, dict] = {}
    for tracker in cfg.roster:
        reports[tracker] = {}
        for name, seq in corpus:
            run = run_tracker(
                tracker,
                seq,
                siamese_config=scfg,
                alpha=cfg.alpha,
                sim_threshold=cfg.sim_threshold,
                gate=gate_clf,
                gate_threshold=cfg.gate_threshold,
                gate_history=cfg.gate_history,
            )
            d = out / tracker / name
            d.mkdir(parents=True, exist_ok=True)
            write_predictions(d / "predictions.csv", run)
            report = evaluate(run.result())
            report.write(d / "report.json")
            reports[tracker][name] = report

    tables = out / "tables"
    tables.mkdir(exist_ok=True)

    lines = ["tracker,mean_auc"]
    for tracker in cfg.roster:
        aucs = [reports[tracker][n].auc for n, _ in corpus]
        lines.append(_fmt_row([tracker, float(np.mean(aucs))]))
    (tables / "ablation.csv").write_text("\n".join(lines) + "\n")

    lines = ["search,mean_auc"]
    for label, tracker in (("local", "siamese-local-only"), ("global", "siamese-global-only")):
        if tracker in reports:
            aucs = [reports[tracker][n].auc for n, _ in corpus]
            lines.append(_fmt_row([label, float(np.mean(aucs))]))
    (tables / "search.csv").write_text("\n".join(lines) + "\n")

    all_tags = sorted({t for _, seq in corpus for t in seq.tags})
    lines = ["tag," + ",".join(cfg.roster)]
    for tag in all_tags:
        cells: list = [tag]
        for tracker in cfg.roster:
            vals = [reports[tracker][n].auc for n, seq in corpus if tag in seq.tags]
            cells.append(float(np.mean(vals)) if vals else float("nan"))
        lines.append(_fmt_row(cells))
    (tables / "challenge.csv").write_text("\n".join(lines) + "\n")

    lines = ["tracker,repetition,mean_auc"]
    n_reps = max((len(r.per_repetition) for t in reports.values() for r in t.values()), default=0)
    for tracker in cfg.roster:
        for k in range(n_reps):
            vals = [
                reports[tracker][n].per_repetition[k]
                for n, _ in corpus
                if len(reports[tracker][n].per_repetition) > k
            ]
            if vals:
                lines.append(_fmt_row([tracker, k + 1, float(np.mean(vals))]))
    (tables / "repetition.csv").write_text("\n".join(lines) + "\n")

    return reports


# ---------------------------------------------------------------------------
# decay-dynamics experiments

@dataclass
class DynamicsConfig:
    sigmas: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    seeds: int = 10
    eta: float = 0.005
    root_seed: int = 0
    length: int = 120
    sequence_dir: str | None = None


def run_dynamics(cfg: DynamicsConfig, out_dir) -> dict:
    """Sweep sigma x seed, write one trace CSV per run plus a summary.

    Summary rows: sigma, seed, terminal cumulative bias/perfect magnitudes,
    final loss and final prediction error.
    """
    from .synthvid import read_sequence

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.eta < 0:
        raise ConfigError("eta must be >= 0")
    if cfg.sequence_dir is not None:
        seq = read_sequence(cfg.sequence_dir)
    else:
        seq = generate_sequence(
            SequenceConfig(
                width=64, height=64, length=cfg.length,
                seed=derive(cfg.root_seed, "dynamics-scene"),
                target_size=14.0, velocity=0.4, jitter_sd=0.2,
            )
        )

    rows = []
    summary: dict[float, list[float]] = {}
    for sigma in cfg.sigmas:
        if sigma < 0:
            raise ConfigError("sigma must be >= 0")
        for k in range(cfg.seeds):
            seed = derive(cfg.root_seed, "dynamics-run", repr(float(sigma)), k)
            trace = dynamics.run_decay_experiment(seq, float(sigma), cfg.eta, seed)
            tag = f"sigma{float(sigma)!r}_seed{k:03d}"
            trace.to_csv(out / f"trace_{tag}.csv")
            rows.append(
                _fmt_row([
                    float(sigma), k, trace.terminal_cum_bias,
                    float(trace.cum_perfect[-1]), float(trace.loss[-1]),
                    float(trace.pred_error[-1]),
                ])
            )
            summary.setdefault(float(sigma), []).append(trace.terminal_cum_bias)

    header = "sigma,seed,terminal_cum_bias,terminal_cum_perfect,final_loss,final_pred_error"
    (out / "summary.csv").write_text("\n".join([header] + rows) + "\n")

    lines = ["sigma,mean_terminal_cum_bias"]
    for sigma in cfg.sigmas:
        lines.append(_fmt_row([float(sigma), float(np.mean(summary[float(sigma)]))]))
    (out / "summary_by_sigma.csv").write_text("\n".join(lines) + "\n")
    return {s: float(np.mean(v)) for s, v in summary.items()}


# ---------------------------------------------------------------------------
# gate training pipeline

def collect_gate_windows(
    seqs: list[Sequence], history: int, global_T: int | None = 1
) -> list[gate.GateWindow]:
    """Run the plain template tracker with global search over the sequences
    and turn the retained maps into labeled windows."""
    runs = []
    for seq in seqs:
        runs.append(
            run_tracker(
                "siamese-global-only" if global_T == 1 else "siamese-no-update",
                seq,
                siamese_config=SiameseConfig(global_T=global_T),
                keep_maps=True,
            )
        )
    return gate.build_training_set(runs, history)


def train_gate_from_sequences(
    train_seqs: list[Sequence],
    history: int = 8,
    steps: int = 400,
    batch_size: int = 32,
    lr: float = 0.01,
    momentum: float = 0.9,
    seed: int = 0,
):
    """End-to-end gate training; returns (classifier, loss history)."""
    windows = collect_gate_windows(train_seqs, history)
    if not windows:
        raise DataError("no usable training windows were produced")
    clf = gate.init_classifier(derive(seed, "gate-init"))
    return gate.train_gate(
        clf, windows, steps=steps, batch_size=batch_size,
        lr=lr, momentum=momentum, seed=derive(seed, "gate-batches"),
    )
