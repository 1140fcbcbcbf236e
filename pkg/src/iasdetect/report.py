"""Figure and table emission: every figure is written as CSV curve points plus a rendered PNG."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COLORS = {"authentic": "tab:blue", "adversarial": "tab:red"}


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def fig_trajectories(out: Path, analysis: dict) -> list[Path]:
    rows = []
    for tr in analysis["trajectories"]:
        for step, g in enumerate(tr["g"]):
            rows += [[tr["sample_id"], int(tr["authentic"]), step, h, v] for h, v in enumerate(g)]
    write_csv(out / "gate_trajectories.csv", ["sample_id", "authentic", "step", "head", "g"], rows)
    trs = analysis["trajectories"][:2]
    fig, axes = plt.subplots(1, max(1, len(trs)), figsize=(5 * max(1, len(trs)), 3.5), squeeze=False)
    for ax, tr in zip(axes[0], trs):
        g = list(zip(*tr["g"]))
        for curve in g:
            ax.plot(range(len(curve)), curve, lw=0.8)
        ax.set_title(f"{tr['sample_id']} ({'authentic' if tr['authentic'] else 'adversarial'})", fontsize=9)
        ax.set_xlabel("optimization step")
        ax.set_ylabel("gate value")
    _save(fig, out / "gate_trajectories.png")
    return [out / "gate_trajectories.csv", out / "gate_trajectories.png"]


def fig_active_heads(out: Path, analysis: dict) -> list[Path]:
    h = analysis["active_heads"]
    write_csv(out / "active_heads.csv", ["active_heads", "authentic", "adversarial"],
              list(zip(h["bins"], h["authentic"], h["adversarial"])))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    w = 0.4
    ax.bar([b - w / 2 for b in h["bins"]], h["authentic"], w, label="authentic", color=COLORS["authentic"])
    ax.bar([b + w / 2 for b in h["bins"]], h["adversarial"], w, label="adversarial", color=COLORS["adversarial"])
    ax.set_xlabel("active heads")
    ax.set_ylabel("inputs")
    ax.legend()
    _save(fig, out / "active_heads.png")
    return [out / "active_heads.csv", out / "active_heads.png"]


def _cdf_figure(out: Path, stem: str, cdf: dict, xlabel: str) -> list[Path]:
    rows = [[name, x, y] for name, c in cdf.items() for x, y in zip(c["x"], c["y"])]
    write_csv(out / f"{stem}.csv", ["group", "value", "cdf"], rows)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, c in cdf.items():
        ax.step(c["x"], c["y"], where="post", label=name, color=COLORS.get(name))
    ax.set_xlabel(xlabel)
    ax.set_ylabel("cumulative fraction")
    ax.legend()
    _save(fig, out / f"{stem}.png")
    return [out / f"{stem}.csv", out / f"{stem}.png"]


def fig_train_size(out: Path, sweep: list) -> list[Path]:
    write_csv(out / "train_size.csv", ["fraction", "train_size", "mean_accuracy"],
              [[r["fraction"], r["train_size"], r["mean"]] for r in sweep])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["fraction"] for r in sweep], [r["mean"] for r in sweep], marker="o")
    ax.set_xlabel("fraction of detector training data")
    ax.set_ylabel("test accuracy")
    _save(fig, out / "train_size.png")
    return [out / "train_size.csv", out / "train_size.png"]


def fig_mask_pca(out: Path, analysis: dict) -> list[Path]:
    pts = analysis["mask_pca"]
    write_csv(out / "mask_pca.csv", ["sample_id", "attack_type", "pc1", "pc2"],
              [[p["sample_id"], p["attack_type"], p["pc1"], p["pc2"]] for p in pts])
    fig, ax = plt.subplots(figsize=(5, 4))
    for name in ("authentic", "adversarial"):
        sel = [p for p in pts if (p["attack_type"] == "authentic") == (name == "authentic")]
        ax.scatter([p["pc1"] for p in sel], [p["pc2"] for p in sel], s=6, alpha=0.6, label=name, color=COLORS[name])
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend()
    _save(fig, out / "mask_pca.png")
    return [out / "mask_pca.csv", out / "mask_pca.png"]


def fig_refereeing(out: Path, analysis: dict) -> list[Path]:
    q = analysis["refereeing"]["quartile_fractions"]
    labels = ["Q1 (shallow)", "Q2", "Q3", "Q4 (deep)"]
    write_csv(out / "refereeing_quartiles.csv", ["layer_quartile", "fraction"], list(zip(labels, q)))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(labels, q, color="tab:green")
    ax.set_ylabel("fraction of refereeing heads")
    _save(fig, out / "refereeing_quartiles.png")
    return [out / "refereeing_quartiles.csv", out / "refereeing_quartiles.png"]


def tables(out: Path, results: dict) -> list[Path]:
    det = results["detection"]
    write_csv(out / "per_attack_accuracy.csv", ["attack_type", "n", "accuracy"],
              [[t, r["n"], r["accuracy"]] for t, r in det["test"].get("per_type", {}).items()])
    abl = results["ablations"]["features"]
    write_csv(out / "ablations.csv", ["variant", "mean_accuracy", "per_seed"],
              [[k, v["mean"], " ".join(f"{a:.4f}" for a in v["per_seed"])] for k, v in abl.items()])
    tr = results["transfer"]
    write_csv(out / "transfer.csv", ["fraction", "seen_types", "new_types_accuracy", "all_types_accuracy"],
              [[r["fraction"], r["seen_types"], r["new_types_accuracy"], r["all_types_accuracy"]] for r in tr["rows"]])
    cs = det["compare_size"]
    write_csv(out / "compare_size.csv", ["preset", "n", "m", "mean_accuracy"],
              [[k, v["n"], v["m"], v["mean"]] for k, v in cs.items()])
    return [out / f for f in ("per_attack_accuracy.csv", "ablations.csv", "transfer.csv", "compare_size.csv")]


def render_figures(out: Path, results: dict, analysis: dict) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    files += fig_trajectories(out, analysis)
    files += fig_active_heads(out, analysis)
    files += _cdf_figure(out, "flip_target_cdf", analysis["flip_target_cdf"], "target-class probability (flipped subnetwork)")
    files += _cdf_figure(out, "detector_cdf", results["detection"]["test"]["cdf"], "detector adversarial probability")
    files += fig_train_size(out, results["ablations"]["train_size"])
    files += fig_mask_pca(out, analysis)
    files += fig_refereeing(out, analysis)
    files += tables(out, results)
    return files
