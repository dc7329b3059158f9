"""Walk through the analytic Mult-Add cost model.

Prints per-layer costs at BERT-base dimensions, then the staged-schedule
speedup tables for the stacking and compound presets.
"""

from growtrain.config import load_run_config
from growtrain.costs import (attn_mult_adds, ffn_mult_adds, format_report,
                             model_mult_adds_per_step, schedule_cost)
from growtrain.model import ModelConfig


def main():
    print("== per-layer Mult-Adds, BERT-base dims (N=512, D=768, H=3072) ==")
    print(f"feedforward: {ffn_mult_adds(512, 768, 3072):,}")
    print(f"attention:   {attn_mult_adds(512, 512, 768):,}")
    print(f"attention with query pooling (N_q=256): "
          f"{attn_mult_adds(256, 512, 768):,}")

    cfg = ModelConfig(L=12, D=768, H=3072, M=12, N_max=512, V=30522)
    step = model_mult_adds_per_step(cfg, 512, 76)
    print(f"\n12-layer forward pass: {step.layers_total:,}")
    print(f"MLM head (76 masks):   {step.head:,}")

    for name in ("stack_base_paper", "compound_base_paper"):
        rc = load_run_config(name)
        report = schedule_cost(rc.schedule.stage_plans(),
                               rc.schedule.baseline_plans(),
                               count_overhead=rc.cost.count_overhead)
        print(f"\n== {name} vs single-stage baseline ==")
        print(format_report(report))


if __name__ == "__main__":
    main()
