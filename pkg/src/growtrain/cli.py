"""Command-line driver.

Subcommands: plan, train, grow, verify, flops, eval.  Exit codes: 0 on
success, 1 for validation/integrity failures (and failed preservation
checks under ``verify``), 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import growth
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config
from .costs import format_report, report_to_dict, schedule_cost
from .data import gen_corpus, mask_tokens, truncate
from .errors import GrowtrainError
from .rng import Rng
from .train import evaluate, run_schedule


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="growtrain",
        description="Progressive compound growth for a toy Transformer MLM.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="cost report for a schedule vs. its baseline")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("train", help="run a staged training schedule")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("grow", help="apply growth ops to a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--op", required=True)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("verify", help="check function preservation of an op")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("flops", help="per-stage cost table for a schedule")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="held-out MLM loss of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("-c", "--config", required=True)
    return parser


def _probe_batch(ckpt, batch_size: int, seed: int):
    """Synthesize a probe batch consistent with the checkpoint's data config."""
    dc = ckpt.data_config
    rng = Rng(seed).fork("probe")
    corpus = gen_corpus(dc, rng.fork("corpus"))
    ids, positions = [], []
    for j in range(batch_size):
        seq = truncate(corpus[j % corpus.shape[0]], dc.train_len)
        inp, pos, _ = mask_tokens(seq, dc.masks_per_seq, rng.fork(f"seq{j}"),
                                  dc.mask_token_id, dc.V)
        ids.append(inp)
        positions.append(pos)
    return np.stack(ids), np.stack(positions)


def _cmd_plan(args) -> int:
    rc = load_run_config(args.config)
    report = schedule_cost(rc.schedule.stage_plans(), rc.schedule.baseline_plans(),
                           count_overhead=rc.cost.count_overhead,
                           flops_x2=rc.cost.flops_x2)
    if args.json:
        print(json.dumps(report_to_dict(report), indent=1))
    else:
        print(format_report(report))
    return 0


def _cmd_flops(args) -> int:
    rc = load_run_config(args.config)
    report = schedule_cost(rc.schedule.stage_plans(), rc.schedule.baseline_plans(),
                           count_overhead=rc.cost.count_overhead,
                           flops_x2=rc.cost.flops_x2)
    if args.json:
        doc = report_to_dict(report)
        del doc["speedup_vs_baseline"], doc["baseline_total"]
        print(json.dumps(doc, indent=1))
    else:
        lines = format_report(report).splitlines()
        print("\n".join(line for line in lines
                        if not line.startswith(("baseline", "speedup"))))
    return 0


def _cmd_train(args) -> int:
    rc = load_run_config(args.config)
    result = run_schedule(rc.schedule, seed=args.seed, out_dir=args.out,
                          opt_cfg=rc.optimizer)
    last = result.loss_log[-1]
    print(f"done: {last[0] + 1} steps, final logged loss {last[3]:.4f}")
    print(f"checkpoints in {args.out}")
    return 0


def _cmd_grow(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    ops_list = growth.parse_ops(args.op)
    params, config, dc = growth.apply(ops_list, ckpt.params, ckpt.model_config,
                                      ckpt.data_config)
    save_checkpoint(args.out, params, config, dc, ckpt.stage_index,
                    ckpt.global_step, ckpt.rng_state,
                    extra={"boundary_ops": [growth.format_op(o) for o in ops_list]})
    print(f"grew {args.op}: L={config.L}, ffn_mode={config.ffn_mode}, "
          f"pool_k={config.pool_k} -> {args.out}")
    return 0


def _cmd_verify(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    ops_list = growth.parse_ops(args.op)
    probe = _probe_batch(ckpt, args.batch, args.seed)
    report = growth.verify_function_preserving(
        ckpt.params, ckpt.model_config, ops_list, probe, tol=args.tol,
        data_config=ckpt.data_config)
    kind = "preservation-class" if report.preservation_class else "report-only"
    print(f"op {report.op} ({kind}): max abs diff {report.max_abs_diff:.3e} "
          f"(tol {report.tol:.1e})")
    if report.preservation_class:
        print("PASS" if report.passed else "FAIL")
        return 0 if report.passed else 1
    return 0


def _cmd_eval(args) -> int:
    rc = load_run_config(args.config)
    ckpt = load_checkpoint(args.ckpt)
    dc = ckpt.data_config
    data_rng = Rng(dc.seed)
    corpus = gen_corpus(dc, data_rng.fork("data"), stream="heldout")
    loss = evaluate(ckpt.params, ckpt.model_config, dc, corpus,
                    data_rng.fork("heldout_mask"),
                    batch_size=rc.eval_batch_size)
    print(f"held-out MLM loss: {loss:.6f}")
    return 0


_COMMANDS = {"plan": _cmd_plan, "train": _cmd_train, "grow": _cmd_grow,
             "verify": _cmd_verify, "flops": _cmd_flops, "eval": _cmd_eval}


def cli(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except GrowtrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
