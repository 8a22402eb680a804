#!/usr/bin/env python3
"""
Desk-scale acceptance runs.

Trains the laptop-scale presets through the ``dvapfn`` command line, evaluates
them and prints one PASS/FAIL line per check. Finished runs are reused, so an
interrupted session picks up where it stopped. Expect several hours on one core.

    python scripts/run_acceptance.py --only headline_1d coverage
"""
import argparse
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

# Add project root to path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from dvapfn.config import get_settings
from dvapfn.errors import DvaPfnError
from dvapfn.main import EXIT_OK, cli_dispatch, configure_logging
from dvapfn.services.manifest import MANIFEST_NAME, load_manifest

logger = logging.getLogger("acceptance")

LOCALITY_CONTEXTS = "20,40,80"


@dataclass
class CheckResult:
    check: str
    passed: bool
    detail: str


class Acceptance:
    """Runs subcommands under one root directory and collects check results."""

    def __init__(self, root: Path):
        self.root = root
        self.results: List[CheckResult] = []

    def run(self, name: str, argv: List[str]) -> Path:
        out = self.root / name
        manifest = out / MANIFEST_NAME
        if manifest.exists() and load_manifest(manifest).artifacts:
            logger.info("reusing %s", out)
            return out
        code = cli_dispatch([*argv, "--out", str(out)])
        if code != EXIT_OK:
            raise DvaPfnError(f"{name}: {' '.join(argv)} exited with {code}")
        return out

    def train(self, preset: str, backbone: str = "transformer", attention: str = "DVA", *extra: str, tag: str = "") -> Path:
        name = f"train-{preset}-{backbone}-{attention}{tag}"
        return self.run(name, ["train", "--preset", preset, "--backbone", backbone, "--attention", attention, "--desk", *extra])

    def record(self, check: str, passed: bool, detail: str) -> None:
        self.results.append(CheckResult(check, bool(passed), detail))
        status = "PASS" if passed else "FAIL"
        print(f"  [{status}] {check}: {detail}")


def final_val_nll(run_dir: Path) -> float:
    return float(pd.read_csv(run_dir / "train_log.csv")["val_nll"].iloc[-1])


def metrics_by_model(run_dir: Path, name: str = "metrics.csv") -> Dict[str, pd.Series]:
    frame = pd.read_csv(run_dir / name)
    return {row["model"]: row for _, row in frame.iterrows()}


# ==================== Checks ====================

def headline_1d(acc: Acceptance) -> None:
    for backbone in ("transformer", "cnn"):
        model_dir = acc.train("1d", backbone)
        eval_dir = acc.run(f"eval-1d-{backbone}", [
            "evaluate", "--checkpoint", str(model_dir / "model.ckpt"), "--with-gp", "--coverage",
            "--preset", "1d", "--context", "80", "--test", "20", "--datasets", "64",
        ])
        rows = metrics_by_model(eval_dir)
        pfn, gp = rows[f"{backbone}+DVA"]["mse"], rows["GP"]["mse"]
        acc.record(f"headline_1d[{backbone}]", pfn <= 3.0 * gp, f"PFN mse {pfn:.3e} vs GP {gp:.3e}")


def bias_reduction_5d(acc: Acceptance) -> None:
    nll = {
        (backbone, attention): final_val_nll(acc.train("5d", backbone, attention))
        for backbone in ("transformer", "cnn")
        for attention in ("DVA", "VA")
    }
    for backbone in ("transformer", "cnn"):
        gap = nll[(backbone, "VA")] - nll[(backbone, "DVA")]
        acc.record(f"bias_5d[{backbone}]", gap >= 0.3, f"VA - DVA = {gap:.3f} nats")
    attention_gap = min(nll[(b, "VA")] - nll[(b, "DVA")] for b in ("transformer", "cnn"))
    backbone_gap = max(abs(nll[("cnn", a)] - nll[("transformer", a)]) for a in ("DVA", "VA"))
    acc.record("bias_5d[attention vs backbone]", attention_gap > backbone_gap, f"{attention_gap:.3f} > {backbone_gap:.3f}")


def stall_10d(acc: Acceptance) -> None:
    improvement = {}
    for attention in ("VA", "DVA"):
        log = pd.read_csv(acc.train("10d", "transformer", attention) / "train_log.csv")
        early = log[log["step"] <= 0.1 * log["step"].iloc[-1]]["val_nll"].iloc[-1]
        improvement[attention] = early - log["val_nll"].iloc[-1]
    acc.record("stall_10d[VA]", improvement["VA"] < 0.1, f"VA improves {improvement['VA']:.3f} nats after 10%")
    acc.record("stall_10d[DVA]", improvement["DVA"] >= 0.3, f"DVA improves {improvement['DVA']:.3f} nats after 10%")


def locality(acc: Acceptance) -> None:
    summaries = {}
    for attention in ("DVA", "VA"):
        model_dir = acc.train("1d", "transformer", attention)
        out = acc.run(f"locality-1d-{attention}", [
            "diagnose-locality", "--checkpoint", str(model_dir / "model.ckpt"),
            "--contexts", LOCALITY_CONTEXTS, "--datasets", "32", "--epsilon", "0.3",
        ])
        summaries[attention] = pd.read_csv(out / "locality_summary.csv")
    dva, va = summaries["DVA"], summaries["VA"]
    acc.record("locality[DVA spearman]", (dva["spearman"] < -0.5).all(), f"{dva['spearman'].round(3).tolist()}")
    acc.record("locality[VA spearman]", (va["spearman"].abs() < 0.3).all(), f"{va['spearman'].round(3).tolist()}")
    masses = dva["far_mass"].to_numpy()
    acc.record("locality[DVA far mass]", bool(np.all(np.diff(masses) < 0)), f"{np.round(masses, 4).tolist()}")


def kernel_parity(acc: Acceptance) -> None:
    dva, kernel = final_val_nll(acc.train("1d")), final_val_nll(acc.train("1d", "transformer", "KernelRBF"))
    acc.record("kernel_parity[rbf]", abs(kernel - dva) <= 0.2, f"KernelRBF {kernel:.3f} vs DVA {dva:.3f}")

    periodic = ("--set", "prior.kernel.kind=linear_periodic")
    dva_lp = final_val_nll(acc.train("1d", "transformer", "DVA", *periodic, tag="-periodic"))
    kernel_lp = final_val_nll(acc.train("1d", "transformer", "KernelRBF", *periodic, tag="-periodic"))
    acc.record("kernel_parity[linear_periodic]", dva_lp <= kernel_lp, f"DVA {dva_lp:.3f} vs KernelRBF {kernel_lp:.3f}")

    out = acc.run("timing-1d", ["timing", "--preset", "1d", "--desk", "--attentions", "DVA,KernelRBF", "--contexts", "80,"])
    seconds = pd.read_csv(out / "timing.csv").set_index("attention")["seconds_per_step"]
    ratio = seconds["KernelRBF"] / seconds["DVA"]
    acc.record("kernel_parity[cost]", True, f"KernelRBF/DVA seconds per step = {ratio:.2f}")


def posthoc(acc: Acceptance) -> None:
    model_dir = acc.train("1d")
    out = acc.run("knn-1d", [
        "evaluate", "--checkpoint", str(model_dir / "model.ckpt"), "--preset", "1d",
        "--context", "30", "--test", "20", "--datasets", "64", "--knn", ",".join(str(k) for k in range(1, 31)),
    ])
    sweep = pd.read_csv(out / "k_sensitivity.csv")
    unfiltered = sweep[sweep["k"] == 0]["mse"].iloc[0]
    acc.record("posthoc[k=N]", sweep[sweep["k"] == 30]["mse"].iloc[0] == unfiltered, "k=30 equals unfiltered")
    curve = sweep[sweep["k"] > 0].reset_index(drop=True)
    best = int(curve["k"].iloc[curve["mse"].idxmin()])
    acc.record("posthoc[interior minimum]", 1 < best < 30, f"best k = {best}")

    stalled = acc.train("10d", "transformer", "VA")
    out = acc.run("knn-10d-VA", [
        "evaluate", "--checkpoint", str(stalled / "model.ckpt"), "--preset", "10d",
        "--context", "80", "--test", "20", "--datasets", "32", "--knn", "5,10,20,40,60,80",
    ])
    sweep = pd.read_csv(out / "k_sensitivity.csv")
    unfiltered = sweep[sweep["k"] == 0]["mse"].iloc[0]
    best = sweep[sweep["k"] > 0]["mse"].min()
    acc.record("posthoc[stalled VA]", best >= 0.9 * unfiltered, f"best filtered {best:.3e} vs unfiltered {unfiltered:.3e}")


def power_flow(acc: Acceptance) -> None:
    try:
        acc.run("powerflow-33bus-50pct", ["gen-powerflow", "--buses", "33", "--delta", "50", "--samples", "1000", "--raw"])
        acc.record("power_flow[residual]", True, "1000 scenarios at +/-50% solved below 1e-8")
    except DvaPfnError as exc:
        acc.record("power_flow[residual]", False, str(exc))

    model_dir = acc.train("power")
    out = acc.run("eval-power", [
        "evaluate", "--checkpoint", str(model_dir / "model.ckpt"), "--suite", "powerflow",
        "--context", "500", "--test", "20", "--datasets", "16", "--delta", "5",
    ])
    mae = metrics_by_model(out)["transformer+DVA"]["mae"]
    acc.record("power_flow[surrogate]", mae < 1e-2, f"MAE {mae:.3e} p.u.")


def coverage(acc: Acceptance) -> None:
    if not (acc.root / "eval-1d-transformer" / "coverage.csv").exists():
        headline_1d(acc)
    frame = pd.read_csv(acc.root / "eval-1d-transformer" / "coverage.csv").set_index("model")
    row = frame.loc["transformer+DVA"]
    bands = [row["within_0_1_sigma"], row["within_1_sigma"], row["within_2_sigma"]]
    passed = row["within_2_sigma"] >= 0.9 and bands == sorted(bands)
    acc.record("coverage", passed, f"bands {np.round(bands, 4).tolist()}")


def determinism(acc: Acceptance) -> None:
    original = acc.train("1d")
    replay = acc.run("replay-train-1d", ["train", "--manifest", str(original / MANIFEST_NAME)])
    same = load_manifest(original).artifacts == load_manifest(replay).artifacts
    acc.record("determinism", same, "manifest replay reproduces every hashed artifact")


CHECKS: Dict[str, Callable[[Acceptance], None]] = {
    "headline_1d": headline_1d,
    "bias_reduction_5d": bias_reduction_5d,
    "stall_10d": stall_10d,
    "locality": locality,
    "kernel_parity": kernel_parity,
    "posthoc": posthoc,
    "power_flow": power_flow,
    "coverage": coverage,
    "determinism": determinism,
}


def main() -> int:
    parser = argparse.ArgumentParser(description="desk-scale acceptance runs")
    parser.add_argument("--root", default=None, help="output root (default: <RUNS_DIR>/acceptance)")
    parser.add_argument("--only", nargs="+", choices=sorted(CHECKS), help="run a subset of the checks")
    args = parser.parse_args()
    configure_logging()

    root = Path(args.root or Path(get_settings().RUNS_DIR) / "acceptance")
    root.mkdir(parents=True, exist_ok=True)
    acc = Acceptance(root)

    print("\n" + "=" * 60)
    print(f"ACCEPTANCE RUNS IN {root}")
    print("=" * 60 + "\n")
    for name in args.only or list(CHECKS):
        print(f"--- {name} ---")
        try:
            CHECKS[name](acc)
        except DvaPfnError as exc:
            acc.record(name, False, f"run failed: {exc}")

    pd.DataFrame([asdict(r) for r in acc.results]).to_csv(root / "acceptance.csv", index=False)
    failed = [r.check for r in acc.results if not r.passed]
    print("\n" + "=" * 60)
    print(f"{len(acc.results) - len(failed)}/{len(acc.results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed))
    print("=" * 60)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
