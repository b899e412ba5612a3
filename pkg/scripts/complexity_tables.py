"""Print parameter and FLOP tables for the S/B/L presets and the block variants.

    python scripts/complexity_tables.py
"""

from posmlp_video.accounting import count_model_flops, count_model_params, count_unit_params
from posmlp_video.config import preset
from posmlp_video.units import GatingUnitSpec

REPORTED = {"S": (13.51e6, 40.49e9), "B": (18.98e6, None), "L": (35.4e6, None)}
VARIANTS = {"parallel_v1": 13.51e6, "parallel_v2": 13.49e6, "parallel_v3": 9.80e6, "parallel_v4": 7.96e6,
            "cascade_ts": 13.51e6, "cascade_st": 13.51e6}


def main():
    win = (16, 7, 7)
    print("unit (16x7x7, g=8)   table1      text     paper")
    for kind in ("potgu", "posgu", "postgu", "tgu", "sgu"):
        spec = GatingUnitSpec(kind, win, 8, 64)
        print(f"{kind:<18}" + "".join(f"{count_unit_params(spec, c):>10,}" for c in ("table1", "text", "paper")))

    print("\nmodel   params      reported   GFLOPs(mac)  GFLOPs(2mac)  reported")
    for name, (p_ref, f_ref) in REPORTED.items():
        cfg = preset(name)
        p = count_model_params(cfg).total
        f1, f2 = (count_model_flops(cfg, convention=c).gflops for c in ("mac", "2mac"))
        ref = f"{f_ref / 1e9:.2f}" if f_ref else "-"
        print(f"{name:<6}{p / 1e6:>8.2f}M{p_ref / 1e6:>10.2f}M{f1:>12.2f}{f2:>14.2f}{ref:>10}")

    print("\nS-size variant  params   reported  GFLOPs(mac)")
    for v, ref in VARIANTS.items():
        cfg = preset("S", block_variant=v, expansion=4 if v == "parallel_v2" else 2)
        p = count_model_params(cfg).total
        print(f"{v:<14}{p / 1e6:>8.2f}M{ref / 1e6:>9.2f}M{count_model_flops(cfg).gflops:>12.2f}")


if __name__ == "__main__":
    main()
