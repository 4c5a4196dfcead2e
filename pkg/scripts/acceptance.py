#!/usr/bin/env python3
"""
Full-size acceptance checks for ConceptLens.

These take minutes to half an hour, so they live outside the pytest suite.
Run from project root:

    python scripts/acceptance.py                 # every check
    python scripts/acceptance.py s1 dip grad     # a subset
    python scripts/acceptance.py causal --trials 5
"""
import argparse
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy import stats as ss

# Project root: parent of scripts/
PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.analysis.dip import hartigan_dip  # noqa: E402
from src.analysis.rsa import rank_neurons, searchlight  # noqa: E402
from src.core.dataio import read_table_s1  # noqa: E402
from src.core.models import ActivationTensor, ModelConfig, RatingTable, RunConfig, SynthSpec  # noqa: E402
from src.ml.prompting import gradient_check  # noqa: E402
from src.ml.toylm import init_model  # noqa: E402
from src.pipeline.commands import cmd_run  # noqa: E402
from src.pipeline.experiment import (  # noqa: E402
    drop_direction_test,
    run_ablation_grid,
    run_pipeline,
    table_s1_check,
)
from src.pipeline.synth import gen_synthetic  # noqa: E402

def check_s1(args) -> bool:
    r = table_s1_check(read_table_s1())
    print(f"  r = {r:.4f} (target 0.797 ± 0.005)")
    return abs(r - 0.797) <= 0.005


def check_dip(args) -> bool:
    """p-values of uniform samples should themselves be uniform."""
    rng = np.random.default_rng(args.seed)
    pvalues = [
        hartigan_dip(rng.random(50), boots=10_000, seed=args.seed).pvalue
        for _ in range(500)
    ]
    d = ss.kstest(pvalues, "uniform").statistic
    print(f"  KS distance = {d:.4f} (limit 0.05)")
    return d <= 0.05


def check_gradient(args) -> bool:
    model = init_model(ModelConfig(), args.seed)
    bench = gen_synthetic(SynthSpec(seed=args.seed))
    batch = bench.tasks[bench.concepts[0]].train.subset(np.arange(8))
    prompt = np.random.default_rng(args.seed).standard_normal((model.cfg.prompt_len, model.cfg.d_model)) * 0.02
    err = gradient_check(model, prompt, batch)
    print(f"  max relative error = {err:.2e} (limit 1e-4)")
    return err <= 1e-4


def check_planted(args) -> bool:
    hits = 0
    for trial in range(20):
        rng = np.random.default_rng([args.seed, trial])
        scores = rng.standard_normal((27, 14))
        ratings = RatingTable(concepts=[f"c{i}" for i in range(27)],
                              attributes=[f"a{j}" for j in range(14)], scores=scores)
        values = rng.standard_normal((4, 27, 2000))
        planted = rng.choice(2000, size=20, replace=False)
        target = scores[:, 0]
        for i in planted:
            values[:, :, i] = target + 0.1 * target.std() * rng.standard_normal((4, 27))
        taus = searchlight(ActivationTensor(concepts=ratings.concepts, values=values), ratings, q=0.01)
        top = rank_neurons(taus, "a0", 40).indices
        recovered = len(set(top.tolist()) & set(planted.tolist())) / len(planted)
        hits += recovered >= 0.9
    print(f"  {hits}/20 trials recovered >= 90% (need 18)")
    return hits >= 18


def check_causal(args) -> bool:
    """Selective ablation hurts more than random ablation at the middle n level."""
    cfg = RunConfig()
    middle = cfg.n_levels[len(cfg.n_levels) // 2]
    passed = 0
    for trial in range(args.trials):
        spec = SynthSpec(seed=args.seed + trial)
        result = run_pipeline(spec, cfg.model, cfg.seeds, cfg.q, hyper=cfg.train, jobs=args.jobs)
        tests = {name: splits.test for name, splits in result.benchmark.tasks.items()}
        records, _ = run_ablation_grid(result.model, result.rankings, tests, result.prompts,
                                       [middle], spec.seed, jobs=args.jobs)
        res = drop_direction_test(records, middle)
        print(f"  seed {spec.seed}: t = {res.statistic:.3f}, p = {res.pvalue:.4g}")
        passed += res.pvalue < 0.05
    need = int(np.ceil(0.9 * args.trials))
    print(f"  {passed}/{args.trials} seeds with p < .05 (need {need})")
    return passed >= need


def check_determinism(args) -> bool:
    reports = ("ablation.jsonl", "drops.csv", "dip_table.csv", "correlation.csv")
    with tempfile.TemporaryDirectory() as tmp:
        for jobs in (1, 8):
            cmd_run(RunConfig(seed=args.seed, out=str(Path(tmp) / f"jobs{jobs}"), jobs=jobs))
        same = [
            (Path(tmp) / "jobs1" / r).read_bytes() == (Path(tmp) / "jobs8" / r).read_bytes()
            for r in reports
        ]
    for r, ok in zip(reports, same):
        print(f"  {r}: {'identical' if ok else 'DIFFERS'}")
    return all(same)


CHECKS = {
    "s1": check_s1,
    "dip": check_dip,
    "grad": check_gradient,
    "planted": check_planted,
    "causal": check_causal,
    "determinism": check_determinism,
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("checks", nargs="*", metavar="CHECK", help=f"Any of: {', '.join(CHECKS)}")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trials", type=int, default=20, help="Master seeds for the causal check")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    unknown = sorted(set(args.checks) - set(CHECKS))
    if unknown:
        parser.error(f"unknown check(s): {', '.join(unknown)}")
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    print("ConceptLens acceptance checks\n")
    failed = []
    for i, name in enumerate(args.checks or CHECKS, 1):
        print(f"{i}. {name}")
        start = time.perf_counter()
        ok = CHECKS[name](args)
        print(f"  {'PASS' if ok else 'FAIL'} in {time.perf_counter() - start:.1f}s\n")
        if not ok:
            failed.append(name)
    print("All checks passed." if not failed else f"Failed: {', '.join(failed)}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
