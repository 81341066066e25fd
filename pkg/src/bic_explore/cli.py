"""Command-line entry point: ``bic-explore <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .baselines import Environment, make_algorithm
from .bic_core import ReductionConfig, run_black_box_reduction, run_two_arm_sampler
from .config import ConfigError, contextual_prior_from_config, load_config, prior_from_config
from .contextual import PolicyClass, run_contextual_reduction
from .detail_free import DetailFreeConfig, run_detail_free
from .harness import BicAuditor, build_experiment, curve_csv, regret_matrix, run_experiment
from .metrics import RegretCurve
from .model import derive_stream
from .priors import (PriorNotPersuadable, estimate_detail_free_thresholds, estimate_persuasion_constants,
                     min_phase_length_m_arm, min_phase_length_two_arm)


def _prior_block(path):
    cfg = load_config(path)
    return cfg.get("prior", cfg)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _transcript_text(tr, out):
    return tr.to_csv() if out and out.endswith(".csv") else tr.to_jsonl()


def cmd_constants(args) -> int:
    prior = prior_from_config(_prior_block(args.prior))
    rng = derive_stream(args.seed, 0, "constants")
    pc = estimate_persuasion_constants(prior, args.k, args.replicates, args.confidence, rng, stage=args.stage)
    out = pc.to_dict()
    out["L_m_arm"] = min_phase_length_m_arm(prior, pc, derive_stream(args.seed, 1, "constants"),
                                            args.max_replicates, args.confidence)
    if prior.m == 2:
        out["L_two_arm"] = min_phase_length_two_arm(prior, args.k, args.max_replicates, args.confidence,
                                                    derive_stream(args.seed, 2, "constants"))
    out["L"] = out.get("L_two_arm", out["L_m_arm"])
    if prior.independent and prior.bounded and prior.means[-1] > 0:
        try:
            df = estimate_detail_free_thresholds(prior, args.T, args.tau, derive_stream(args.seed, 3, "constants"),
                                                 args.max_replicates, args.confidence)
            out["N_P"] = df.N_P
            out["detail_free"] = df.to_dict()
        except PriorNotPersuadable as e:
            out["N_P"] = None
            out["detail_free_error"] = str(e)
    _write(json.dumps(out, sort_keys=True, indent=1) + "\n", args.out)
    return 0


def cmd_run_bic(args) -> int:
    prior = prior_from_config(_prior_block(args.prior))
    env = Environment.from_prior(prior, args.seed, args.replicate)
    if args.two_arm:
        tr = run_two_arm_sampler(prior, args.k, args.L, env)
    else:
        alg = make_algorithm(args.algo, prior.m, args.T, prior=prior,
                             rng=derive_stream(args.seed, args.replicate, "algorithm"))
        tr = run_black_box_reduction(prior, ReductionConfig(args.k, args.L, args.T), alg, env)
    _write(_transcript_text(tr, args.out), args.out)
    return 0


def cmd_run_df(args) -> int:
    if args.prior:
        prior = prior_from_config(_prior_block(args.prior))
        means = tuple(prior.means)
        env = Environment.from_prior(prior, args.seed, args.replicate)
    else:
        raise ConfigError("run-df: --prior is required")
    cfg = DetailFreeConfig(args.mu_hat, args.N, args.T, means, args.tau, args.theta)
    tr = run_detail_free(cfg, env)
    _write(_transcript_text(tr, args.out), args.out)
    side = json.dumps(cfg.constants(), sort_keys=True, indent=1) + "\n"
    if args.out and args.out != "-":
        Path(args.out).with_suffix(".constants.json").write_text(side)
    else:
        sys.stderr.write(side)
    return 0


def cmd_run_ctx(args) -> int:
    prior = contextual_prior_from_config(_prior_block(args.prior))
    env = prior.environment(args.seed, args.replicate)
    params = {}
    if args.algo == "eps-greedy":
        params = {"policies": PolicyClass.all_policies(prior.m, prior.n_contexts).table, "epsilon": args.epsilon}
    alg = make_algorithm(args.algo, prior.m, args.T, rng=derive_stream(args.seed, args.replicate, "algorithm"),
                         **params)
    tr = run_contextual_reduction(prior, ReductionConfig(args.k, args.L, args.T), alg, env,
                                  rank1_phase=not args.literal_sampling)
    _write(_transcript_text(tr, args.out), args.out)
    return 0


def _seed_reps(cfg, args):
    seed = cfg.get("seed", 0) if args.seed is None else args.seed
    reps = cfg.get("replicates", 1000) if args.replicates is None else args.replicates
    return int(seed), int(reps)


def cmd_audit(args) -> int:
    cfg = load_config(args.config)
    seed, reps = _seed_reps(cfg, args)
    exp = build_experiment(cfg)
    auditor = BicAuditor()
    for r in range(reps):
        auditor.add(exp.run(exp.make_env(seed, r)))
    audit_cfg = cfg.get("audit", {})
    eps = args.epsilon if args.epsilon is not None else float(audit_cfg.get("epsilon", 0.01))
    min_cell = args.min_cell if args.min_cell is not None else int(audit_cfg.get("min_cell", 200))
    report = auditor.report(eps, min_cell)
    _write(report.to_json() + "\n", args.out)
    worst = report.worst()
    msg = f"audit {report.verdict}: {len(report.conclusive)} conclusive cells, {len(report.inconclusive)} inconclusive"
    if worst is not None:
        msg += f"; worst lower bound {worst.lo:.4f} ({worst.group}, {worst.arm} vs {worst.competitor})"
    print(msg, file=sys.stderr)
    return 0 if report.verdict == "PASS" else 1


def cmd_regret(args) -> int:
    cfg = load_config(args.config)
    seed, reps = _seed_reps(cfg, args)
    exp = build_experiment(cfg)
    trs = [exp.run(exp.make_env(seed, r)) for r in range(reps)]
    curve = RegretCurve.from_matrix(regret_matrix(exp, trs))
    _write(curve_csv(curve), args.out)
    mean, se = curve.final()
    print(f"final regret {mean:.3f} +/- {se:.3f} over {reps} replicates", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    seed, reps = _seed_reps(cfg, args)
    summary = run_experiment(cfg, args.out, seed, reps, args.save_transcripts)
    print(json.dumps(summary, sort_keys=True))
    return 0 if summary["verdict"] != "FAIL" else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bic-explore", description="Incentive-compatible bandit exploration toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="estimate prior-dependent constants")
    p.add_argument("--prior", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--max-replicates", type=int, default=200_000)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--stage", choices=["sampling", "simulation", "both"], default="both")
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("run-bic", help="run the black-box reduction (or the two-arm sampler)")
    p.add_argument("--prior", required=True)
    p.add_argument("--algo", default="ucb1")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--two-arm", action="store_true", help="run only the two-arm sampler")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run_bic)

    p = sub.add_parser("run-df", help="run the detail-free algorithm")
    p.add_argument("--prior", required=True)
    p.add_argument("--mu-hat", type=float, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--theta", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run_df)

    p = sub.add_parser("run-ctx", help="run the contextual reduction")
    p.add_argument("--prior", required=True)
    p.add_argument("--algo", default="eps-greedy")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--literal-sampling", action="store_true",
                   help="skip the extra arm-rank-1 sampling phase (k + (m-1)kL sampling rounds)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run_ctx)

    for name, func, helptext in (("audit", cmd_audit, "BIC audit of a configured algorithm"),
                                 ("regret", cmd_regret, "Bayesian regret curve as CSV")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--replicates", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name == "audit":
            p.add_argument("--epsilon", type=float)
            p.add_argument("--min-cell", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="run an experiment and write CSV/JSON/SVG artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--save-transcripts", type=int)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PriorNotPersuadable) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
