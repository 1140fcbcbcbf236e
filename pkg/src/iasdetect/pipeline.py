"""Pipeline stages. Each stage reads upstream artifacts from the workspace, writes its own,
and records them in the manifest under the current config hash."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .advnet import CutMixSpec, DetectorTrainConfig, evaluate, gradcam_refereeing, train_advnet
from .attacks import AUTHENTIC, BenchmarkItem, build_benchmark
from .config import PipelineConfig
from .data import LabeledSample, load_dataset, read_jsonl, save_dataset, write_jsonl
from .encoder import AuxHeads, Encoder, ModelConfig, TrainConfig, accuracy, aux_accuracy, fine_tune, train_aux_heads
from .features import FeatureInput, FeatureVector, Standardizer, assemble, load_features, matrix, save_features
from .ias import IASConfig, compute_ias, flip_middle, state_from_record
from .lexicon import Lexicon
from .synthetic import gen_synthetic, perceptron_probe

log = logging.getLogger(__name__)

FAMILY_VIEWS = {
    "full": (("mask", "flip", "lw"), False),
    "mask": (("mask",), False),
    "flip": (("flip",), False),
    "lw": (("lw",), False),
    "bin": (("mask", "flip", "lw"), True),
    "no-cutmix": (("mask", "flip", "lw"), False),
}


class MissingArtifact(RuntimeError):
    """An upstream artifact is absent or was produced under a different config."""


def dump_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path: Path):
    return json.loads(Path(path).read_text())


class Workspace:
    """Output directory plus a manifest mapping artifact -> (producing command, config hash)."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = config.resolve_output()
        self.hash = config.config_hash()
        self.root.mkdir(parents=True, exist_ok=True)
        self._manifest_path = self.root / "manifest.json"
        self.manifest = load_json(self._manifest_path) if self._manifest_path.exists() else {"artifacts": {}}
        dump_json(self.root / "config.json", {**config.to_dict(), "config_hash": self.hash})

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, name: str, command: str):
        self.manifest["artifacts"][name] = {"command": command, "config_hash": self.hash}
        dump_json(self._manifest_path, self.manifest)

    def fresh(self, name: str) -> bool:
        entry = self.manifest["artifacts"].get(name)
        return bool(entry) and entry["config_hash"] == self.hash and (self.root / name).exists()

    def require(self, name: str, command: str) -> Path:
        entry = self.manifest["artifacts"].get(name)
        if entry is None or not (self.root / name).exists():
            raise MissingArtifact(f"missing {self.root / name}; run `iasdetect {command}` first")
        if entry["config_hash"] != self.hash:
            raise MissingArtifact(
                f"{self.root / name} was produced under config {entry['config_hash']}, current config is "
                f"{self.hash}; rerun `iasdetect {command}`"
            )
        return self.root / name


# ---------------------------------------------------------------------------
# helpers


def ias_config(cfg: PipelineConfig) -> IASConfig:
    return IASConfig(
        alpha=cfg.ias_alpha, eta=cfg.ias_eta, beta=cfg.ias_beta, beta_step=cfg.ias_beta_step,
        learning_rate=cfg.ias_learning_rate, optimizer=cfg.ias_optimizer, init=cfg.ias_init,
    )


def detector_config(cfg: PipelineConfig, seed: int, cutmix: bool = True) -> DetectorTrainConfig:
    return DetectorTrainConfig(
        learning_rate=cfg.det_learning_rate, batch_size=cfg.det_batch_size, max_epochs=cfg.det_max_epochs,
        patience=cfg.det_patience, seed=seed, dropout=cfg.det_dropout,
        cutmix=CutMixSpec(R=cfg.cutmix_r, ratio=cfg.cutmix_ratio if cutmix else 0.0),
    )


def load_task(ws: Workspace):
    d = "data"
    train = load_dataset(ws.require(f"{d}/train.jsonl", "gen-data"))
    val = load_dataset(ws.require(f"{d}/val.jsonl", "gen-data"))
    test = load_dataset(ws.require(f"{d}/test.jsonl", "gen-data"))
    lex = Lexicon.load(ws.require(f"{d}/lexicon.tsv", "gen-data"))
    return train, val, test, lex


def load_encoder(ws: Workspace, preset: str) -> Encoder:
    return Encoder.load(ws.require(f"{preset}/encoder.npz", "train-encoder"))


def load_aux(ws: Workspace, preset: str) -> AuxHeads:
    return AuxHeads.load(ws.require(f"{preset}/aux.npz", "train-aux"))


def load_vectors(ws: Workspace, preset: str) -> tuple[list[FeatureVector], ModelConfig]:
    enc_cfg = ModelConfig.from_dict(load_json(ws.require(f"{preset}/encoder_metrics.json", "train-encoder"))["model"])
    vectors = load_features(ws.require(f"{preset}/features.jsonl", "extract-features"), enc_cfg.n, enc_cfg.m)
    return vectors, enc_cfg


def by_split(vectors, name):
    return [v for v in vectors if v.split == name]


def fit_detector(cfg: PipelineConfig, vectors, variant: str = "full", seed: int = 0, train_subset=None, eval_subset=None):
    """Train on the train split (or ``train_subset``) and report on the test split."""
    families, binary = FAMILY_VIEWS[variant]
    tr = train_subset if train_subset is not None else by_split(vectors, "train")
    X, y = matrix(tr, families, binary)
    Xv, yv = matrix(by_split(vectors, "val"), families, binary)
    te = eval_subset if eval_subset is not None else by_split(vectors, "test")
    Xt, yt = matrix(te, families, binary)
    if cfg.feature_zscore:
        z = Standardizer().fit(X)
        X, Xv, Xt = z.transform(X), z.transform(Xv), z.transform(Xt)
    net, hist = train_advnet(X, y, Xv, yv, detector_config(cfg, seed, cutmix=variant != "no-cutmix"))
    return net, hist, evaluate(net, Xt, yt, [v.attack_type for v in te])


# ---------------------------------------------------------------------------
# stages


def gen_data(ws: Workspace) -> str:
    cfg = ws.config
    if cfg.task == "external":
        src = Path(cfg.data_dir)
        splits = {name: load_dataset(src / f"{name}.jsonl", name) for name in ("train", "val", "test")}
        lex = Lexicon.load(src / "lexicon.tsv") if (src / "lexicon.tsv").exists() else Lexicon()
        num_classes = 1 + max(s.label for s in splits["train"])
        probe = None
    else:
        task = gen_synthetic(cfg.task.split("-", 1)[1], cfg.data_size, cfg.seed)
        splits = {"train": task.train, "val": task.val, "test": task.test}
        lex, num_classes = task.lexicon, task.num_classes
        probe = perceptron_probe(task.train + task.val + task.test, num_classes)
    for name, samples in splits.items():
        save_dataset(ws.path(f"data/{name}.jsonl"), samples)
        ws.record(f"data/{name}.jsonl", "gen-data")
    lex.save(ws.path("data/lexicon.tsv"))
    ws.record("data/lexicon.tsv", "gen-data")
    counts = np.bincount([s.label for s in splits["train"]], minlength=num_classes)
    stats = {
        "task": cfg.task,
        "num_classes": int(num_classes),
        "sizes": {k: len(v) for k, v in splits.items()},
        "class_fractions": (counts / counts.sum()).tolist(),
        "vocabulary": len({w for v in splits.values() for s in v for w in s.text.split()}),
        "probe_accuracy": probe,
    }
    dump_json(ws.path("data/stats.json"), stats)
    ws.record("data/stats.json", "gen-data")
    return f"gen-data: {stats['sizes']} vocabulary {stats['vocabulary']} probe {probe}"


def train_encoder(ws: Workspace, preset: str) -> str:
    cfg = ws.config
    train, val, test, _ = load_task(ws)
    num_classes = load_json(ws.require("data/stats.json", "gen-data"))["num_classes"]
    mc = ModelConfig.preset(preset, max_len=cfg.max_len, num_classes=num_classes)
    tc = TrainConfig(cfg.enc_learning_rate, cfg.enc_batch_size, cfg.enc_max_epochs, cfg.enc_patience, cfg.enc_min_delta, cfg.seed)
    enc, rec = fine_tune(train, mc, val=val, tc=tc)
    enc.save(ws.path(f"{preset}/encoder.npz"))
    ws.record(f"{preset}/encoder.npz", "train-encoder")
    metrics = {
        "model": enc.config.to_dict(),
        "epochs": rec.epochs,
        "train_loss": rec.train_loss,
        "val_loss": rec.val_loss,
        "train_accuracy": rec.train_accuracy,
        "val_accuracy": rec.val_accuracy,
        "test_accuracy": accuracy(enc, test),
        "checksum": enc.checksum(),
    }
    metrics["model"].pop("d_k")
    dump_json(ws.path(f"{preset}/encoder_metrics.json"), metrics)
    ws.record(f"{preset}/encoder_metrics.json", "train-encoder")
    return f"train-encoder[{preset}]: {rec.epochs} epochs, test accuracy {metrics['test_accuracy']:.4f}"


def train_aux(ws: Workspace, preset: str) -> str:
    cfg = ws.config
    train, val, test, _ = load_task(ws)
    enc = load_encoder(ws, preset)
    tc = TrainConfig(cfg.aux_learning_rate, cfg.enc_batch_size, cfg.aux_max_epochs, cfg.aux_patience, cfg.enc_min_delta, cfg.seed)
    aux = train_aux_heads(enc, train, val, tc=tc)
    aux.save(ws.path(f"{preset}/aux.npz"))
    ws.record(f"{preset}/aux.npz", "train-aux")
    accs = aux_accuracy(enc, aux, test)
    dump_json(ws.path(f"{preset}/aux_metrics.json"), {"test_accuracy_per_layer": accs})
    ws.record(f"{preset}/aux_metrics.json", "train-aux")
    return f"train-aux[{preset}]: per-layer test accuracy {np.round(accs, 4).tolist()}"


def attack(ws: Workspace, preset: str) -> str:
    cfg = ws.config
    _, _, test, lex = load_task(ws)
    enc = load_encoder(ws, preset)
    bench = build_benchmark(
        test, enc, lex, seed=cfg.seed, per_type_quota=cfg.attack_quota, types=cfg.attack_types,
        budget_fraction=cfg.attack_budget_fraction,
    )
    write_jsonl(ws.path(f"{preset}/adversarial.jsonl"), (a.record() for a in bench.adversarial))
    write_jsonl(ws.path(f"{preset}/benchmark.jsonl"), (asdict(it) for it in bench.items))
    dump_json(ws.path(f"{preset}/benchmark_stats.json"), bench.stats())
    for name in ("adversarial.jsonl", "benchmark.jsonl", "benchmark_stats.json"):
        ws.record(f"{preset}/{name}", "attack")
    s = bench.stats()
    return f"attack[{preset}]: {s['total']} benchmark items, per split {s['per_split']}"


def extract_features(ws: Workspace, preset: str) -> str:
    cfg = ws.config
    enc = load_encoder(ws, preset)
    aux = load_aux(ws, preset)
    items = [BenchmarkItem(**r) for r in read_jsonl(ws.require(f"{preset}/benchmark.jsonl", "attack"))]
    inputs = [FeatureInput(it.sample_id, it.text, it.label, it.attack_type, it.split) for it in items]
    res = assemble(enc, aux, inputs, ias_config(cfg))
    save_features(ws.path(f"{preset}/features.jsonl"), res.vectors)
    write_jsonl(ws.path(f"{preset}/masks.jsonl"), res.masks)
    betas = [m["beta_used"] for m in res.masks]
    active = [float(np.mean(m["g_b"])) for m in res.masks]
    stats = {
        "count": len(res.masks),
        "flagged_fraction": float(np.mean([m["flagged"] for m in res.masks])),
        "beta_used": {str(b): betas.count(b) for b in sorted(set(betas), key=lambda b: -1 if b is None else b)},
        "active_fraction_median": float(np.median(active)),
        "active_fraction_mean": float(np.mean(active)),
    }
    dump_json(ws.path(f"{preset}/ias_stats.json"), stats)
    for name in ("features.jsonl", "masks.jsonl", "ias_stats.json"):
        ws.record(f"{preset}/{name}", "extract-features")
    return f"extract-features[{preset}]: {stats['count']} vectors, median active fraction {stats['active_fraction_median']:.3f}"


def train_detector(ws: Workspace, preset: str) -> str:
    cfg = ws.config
    vectors, _ = load_vectors(ws, preset)
    net, hist, _ = fit_detector(cfg, vectors, "full", cfg.det_seeds[0])
    net.save(ws.path(f"{preset}/detector.npz"), {"seed": cfg.det_seeds[0], "variant": "full"})
    dump_json(ws.path(f"{preset}/detector_history.json"), asdict(hist))
    ws.record(f"{preset}/detector.npz", "train-detector")
    ws.record(f"{preset}/detector_history.json", "train-detector")
    return f"train-detector[{preset}]: best epoch {hist.best_epoch}, val accuracy {max(hist.val_accuracy):.4f}"


def evaluate_stage(ws: Workspace, preset: str) -> str:
    from .advnet import AdvNet

    vectors, _ = load_vectors(ws, preset)
    net = AdvNet.load(ws.require(f"{preset}/detector.npz", "train-detector"))
    out = {}
    for split in ("val", "test"):
        vs = by_split(vectors, split)
        X, y = matrix(vs)
        if ws.config.feature_zscore:
            X = Standardizer().fit(matrix(by_split(vectors, "train"))[0]).transform(X)
        out[split] = evaluate(net, X, y, [v.attack_type for v in vs])
    dump_json(ws.path(f"{preset}/detection.json"), out)
    ws.record(f"{preset}/detection.json", "evaluate")
    t = out["test"]
    return f"evaluate[{preset}]: test accuracy {t['accuracy']:.4f} precision {t['precision']:.4f} recall {t['recall']:.4f}"


def ablate_features(ws: Workspace, preset: str) -> str:
    cfg = ws.config
    vectors, _ = load_vectors(ws, preset)
    out = {}
    for variant in cfg.ablations:
        accs = [fit_detector(cfg, vectors, variant, seed)[2]["accuracy"] for seed in cfg.det_seeds]
        out[variant] = {"per_seed": accs, "mean": float(np.mean(accs))}
    dump_json(ws.path(f"{preset}/ablations.json"), out)
    ws.record(f"{preset}/ablations.json", "ablate-features")
    return "ablate-features: " + ", ".join(f"{k} {v['mean']:.4f}" for k, v in out.items())


def stratified_subset(vectors, fraction: float, seed: int):
    """Per-(attack type) prefix of a seeded shuffle, so every group keeps its share."""
    rng = np.random.default_rng([seed, 31])
    groups: dict[str, list] = {}
    for v in vectors:
        groups.setdefault(v.attack_type, []).append(v)
    out = []
    for key in sorted(groups):
        grp = groups[key]
        k = max(1, int(round(fraction * len(grp))))
        out += [grp[int(i)] for i in rng.permutation(len(grp))[:k]]
    return out


def sweep_train_size(ws: Workspace, preset: str) -> str:
    cfg = ws.config
    vectors, _ = load_vectors(ws, preset)
    train = by_split(vectors, "train")
    rows = []
    for frac in cfg.sweep_fractions:
        sub = stratified_subset(train, frac, cfg.seed)
        accs = [fit_detector(cfg, vectors, "full", seed, train_subset=sub)[2]["accuracy"] for seed in cfg.det_seeds]
        rows.append({"fraction": frac, "train_size": len(sub), "per_seed": accs, "mean": float(np.mean(accs))})
    dump_json(ws.path(f"{preset}/sweep.json"), rows)
    ws.record(f"{preset}/sweep.json", "sweep-train-size")
    return "sweep-train-size: " + ", ".join(f"{r['fraction']}: {r['mean']:.4f}" for r in rows)


def transfer(ws: Workspace, preset: str) -> str:
    """Train on a subset of attack types; test on authentic + unseen-type adversarial (new) and on all."""
    cfg = ws.config
    vectors, _ = load_vectors(ws, preset)
    types = sorted({v.attack_type for v in vectors} - {AUTHENTIC})
    test = by_split(vectors, "test")
    full = [fit_detector(cfg, vectors, "full", seed)[2]["accuracy"] for seed in cfg.det_seeds]
    rows = []
    for frac in cfg.transfer_fractions:
        k = max(1, int(round(frac * len(types))))
        per_seed_new, per_seed_all = [], []
        for seed in cfg.det_seeds:
            order = np.random.default_rng([cfg.seed, seed, 41]).permutation(len(types))
            seen = {types[int(i)] for i in order[:k]}
            train = [v for v in by_split(vectors, "train") if v.attack_type == AUTHENTIC or v.attack_type in seen]
            new = [v for v in test if v.attack_type == AUTHENTIC or v.attack_type not in seen]
            net, _, rep_all = fit_detector(cfg, vectors, "full", seed, train_subset=train)
            X, y = matrix(new)
            if cfg.feature_zscore:
                X = Standardizer().fit(matrix(train)[0]).transform(X)
            per_seed_new.append(evaluate(net, X, y)["accuracy"])
            per_seed_all.append(rep_all["accuracy"])
        rows.append({
            "fraction": frac, "seen_types": k, "new_types_accuracy": float(np.mean(per_seed_new)),
            "all_types_accuracy": float(np.mean(per_seed_all)), "per_seed_new": per_seed_new, "per_seed_all": per_seed_all,
        })
    out = {"full_training_accuracy": float(np.mean(full)), "full_per_seed": full, "rows": rows}
    dump_json(ws.path(f"{preset}/transfer.json"), out)
    ws.record(f"{preset}/transfer.json", "transfer")
    return "transfer: " + ", ".join(f"{r['fraction']}: ({r['new_types_accuracy']:.4f}, {r['all_types_accuracy']:.4f})" for r in rows)


def ensure_preset(ws: Workspace, preset: str):
    """Run any missing or stale per-preset stages up to feature extraction."""
    steps = [
        ("encoder.npz", train_encoder), ("aux.npz", train_aux), ("benchmark.jsonl", attack),
        ("features.jsonl", extract_features),
    ]
    stale = False
    for name, fn in steps:
        if stale or not ws.fresh(f"{preset}/{name}"):
            log.info(fn(ws, preset))
            stale = True


def compare_size(ws: Workspace) -> str:
    cfg = ws.config
    out = {}
    for preset in cfg.compare_presets:
        ensure_preset(ws, preset)
        vectors, mc = load_vectors(ws, preset)
        accs = [fit_detector(cfg, vectors, "full", seed)[2]["accuracy"] for seed in cfg.det_seeds]
        enc_metrics = load_json(ws.path(f"{preset}/encoder_metrics.json"))
        out[preset] = {
            "n": mc.n, "m": mc.m, "d_model": mc.d_model, "per_seed": accs, "mean": float(np.mean(accs)),
            "encoder_test_accuracy": enc_metrics["test_accuracy"],
            "benchmark_size": len(vectors),
        }
    dump_json(ws.path("compare_size.json"), out)
    ws.record("compare_size.json", "compare-size")
    return "compare-size: " + ", ".join(f"{k} {v['mean']:.4f}" for k, v in out.items())


def _pca2(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    proj = Xc @ vt[:2].T
    # fix the sign of each component so the projection is reproducible
    signs = np.sign(vt[:2][np.arange(2), np.argmax(np.abs(vt[:2]), axis=1)])
    return proj * signs


def _mean(values: np.ndarray):
    """Mean as a float, or None for an empty group (keeps the JSON free of NaN)."""
    return float(np.mean(values)) if len(values) else None


def analyze(ws: Workspace, preset: str) -> str:
    from .advnet import AdvNet

    cfg = ws.config
    enc = load_encoder(ws, preset)
    vectors, mc = load_vectors(ws, preset)
    masks = {r["sample_id"]: r for r in read_jsonl(ws.require(f"{preset}/masks.jsonl", "extract-features"))}
    items = {r["sample_id"]: r for r in read_jsonl(ws.require(f"{preset}/benchmark.jsonl", "attack"))}
    net = AdvNet.load(ws.require(f"{preset}/detector.npz", "train-detector"))
    is_adv = np.array([v.label >= 0.5 for v in vectors])

    # gate trajectories for a few authentic and adversarial test inputs
    test = by_split(vectors, "test")
    k = cfg.analysis_trajectories // 2
    pick = [v for v in test if v.label < 0.5][:k] + [v for v in test if v.label >= 0.5][:k]
    trajectories = []
    if pick:
        ids = enc.encode([items[v.sample_id]["text"] for v in pick])
        targets = [masks[v.sample_id]["target_class"] for v in pick]
        for v, st in zip(pick, compute_ias(enc, ids, targets, ias_config(cfg))):
            trajectories.append({"sample_id": v.sample_id, "authentic": v.label < 0.5, "g": st.trajectory.tolist()})

    # active-head counts
    counts = np.array([int(sum(masks[v.sample_id]["g_b"])) for v in vectors])
    nm = mc.n * mc.m
    hist = {
        "bins": list(range(nm + 1)),
        "authentic": np.bincount(counts[~is_adv], minlength=nm + 1).tolist(),
        "adversarial": np.bincount(counts[is_adv], minlength=nm + 1).tolist(),
    }

    # target-class probability under the flipped subnetwork
    ids = enc.encode([items[v.sample_id]["text"] for v in vectors])
    g_f = flip_middle(np.stack([state_from_record(masks[v.sample_id]).g_b for v in vectors]), mc.n, mc.m).g_f
    logits = enc.logits_np(ids, g_f)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    targets = np.array([masks[v.sample_id]["target_class"] for v in vectors])
    tprob = probs[np.arange(len(vectors)), targets]
    cdf = {}
    for name, sel in (("authentic", ~is_adv), ("adversarial", is_adv)):
        vals = np.sort(tprob[sel])
        cdf[name] = {"x": vals.tolist(), "y": (np.arange(1, len(vals) + 1) / max(len(vals), 1)).tolist()}

    # 2-D principal-component projection of the gate pre-activations
    P = np.stack([v.f_mask for v in vectors])
    proj = _pca2(P) if len(P) > 2 else np.zeros((len(P), 2))
    pca = [{"sample_id": v.sample_id, "attack_type": v.attack_type, "pc1": float(a), "pc2": float(b)} for v, (a, b) in zip(vectors, proj)]

    # refereeing heads on correctly detected adversarial test vectors
    quart = np.zeros(4)
    head_counts = np.zeros(nm)
    used = 0
    for v in test:
        if v.label < 0.5:
            continue
        ref = gradcam_refereeing(net, v.assembled, mc.n, mc.m, cfg.refereeing_threshold)
        if ref.predicted != 1:
            continue
        used += 1
        quart += ref.quartiles
        head_counts[ref.heads] += 1
    refereeing = {
        "inputs": used,
        "quartile_fractions": (quart / quart.sum()).tolist() if quart.sum() else [0.0] * 4,
        "head_frequency": (head_counts / max(used, 1)).tolist(),
    }

    flip = np.stack([v.f_flip for v in vectors])
    lw = np.stack([v.f_lw for v in vectors])
    summary = {
        "nontarget_rate": {"authentic": _mean(1 - flip[~is_adv, 3]), "adversarial": _mean(1 - flip[is_adv, 3])},
        "aux_mismatch_mean": {"authentic": _mean(mc.n - 1 - lw[~is_adv, -2]), "adversarial": _mean(mc.n - 1 - lw[is_adv, -2])},
        "switch_mean": {"authentic": _mean(lw[~is_adv, -1]), "adversarial": _mean(lw[is_adv, -1])},
        "active_fraction_median": float(np.median(counts / nm)),
    }
    out = {
        "summary": summary, "trajectories": trajectories, "active_heads": hist, "flip_target_cdf": cdf,
        "mask_pca": pca, "refereeing": refereeing,
    }
    dump_json(ws.path(f"{preset}/analysis.json"), out)
    ws.record(f"{preset}/analysis.json", "analyze")
    rate = {k: "n/a" if v is None else f"{v:.3f}" for k, v in summary["nontarget_rate"].items()}
    return f"analyze[{preset}]: non-target rate adv {rate['adversarial']} vs auth {rate['authentic']}; refereeing inputs {used}"


REPORT_INPUTS = {
    "data/stats.json": "gen-data",
    "{p}/encoder_metrics.json": "train-encoder",
    "{p}/aux_metrics.json": "train-aux",
    "{p}/benchmark_stats.json": "attack",
    "{p}/ias_stats.json": "extract-features",
    "{p}/detection.json": "evaluate",
    "{p}/ablations.json": "ablate-features",
    "{p}/sweep.json": "sweep-train-size",
    "{p}/transfer.json": "transfer",
    "compare_size.json": "compare-size",
    "{p}/analysis.json": "analyze",
}


def report(ws: Workspace) -> str:
    from .report import render_figures

    cfg = ws.config
    p = cfg.preset
    mixed = sorted(
        f"{name} ({e['config_hash']})" for name, e in ws.manifest["artifacts"].items() if e["config_hash"] != ws.hash
    )
    if mixed:
        raise MissingArtifact(
            f"refusing to mix artifacts from different configs (current {ws.hash}): {', '.join(mixed)}; "
            "rerun the producing commands or use a fresh output directory"
        )
    art = {k.format(p=p): load_json(ws.require(k.format(p=p), cmd)) for k, cmd in REPORT_INPUTS.items()}
    compare = art["compare_size.json"]
    results = {
        "config": {**cfg.to_dict(), "config_hash": ws.hash, "output_dir": None},
        "encoder_metrics": {
            "data": art["data/stats.json"],
            **{q: {**load_json(ws.path(f"{q}/encoder_metrics.json")), "aux": load_json(ws.path(f"{q}/aux_metrics.json"))}
               for q in sorted(set(cfg.compare_presets) | {p}) if ws.fresh(f"{q}/aux_metrics.json")},
        },
        "benchmark_stats": {
            q: {**load_json(ws.path(f"{q}/benchmark_stats.json")), "ias": load_json(ws.path(f"{q}/ias_stats.json"))}
            for q in sorted(set(cfg.compare_presets) | {p}) if ws.fresh(f"{q}/ias_stats.json")
        },
        "detection": {"preset": p, **art[f"{p}/detection.json"], "compare_size": compare},
        "ablations": {"features": art[f"{p}/ablations.json"], "train_size": art[f"{p}/sweep.json"]},
        "transfer": art[f"{p}/transfer.json"],
        "analysis": {k: v for k, v in art[f"{p}/analysis.json"].items() if k in ("summary", "refereeing", "active_heads")},
    }
    dump_json(ws.root / "results.json", results)
    figures = render_figures(ws.root / "figures", results, art[f"{p}/analysis.json"])
    return f"report: wrote {ws.root / 'results.json'} and {len(figures)} figures"
