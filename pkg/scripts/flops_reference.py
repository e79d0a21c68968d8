"""Print FLOPs reductions for the uniform-rate ResNet/VGG reference settings.

    python scripts/flops_reference.py [--channels fractional|integer]
"""
import argparse

from prunekit.arch import build_arch, count_flops, uniform_rates

ROWS = [("resnet20", 0.2, 29.3), ("resnet20", 0.4, 54.0), ("resnet56", 0.2, 28.4),
        ("resnet56", 0.4, 52.6), ("resnet56", 0.6, 72.6), ("resnet110", 0.2, 28.2),
        ("vgg16", 0.2, 34.2)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", choices=("fractional", "integer"), default="fractional")
    args = ap.parse_args()
    print(f"{'arch':<10} {'rate':>5} {'baseline':>10} {'pruned':>10} {'red%':>7} {'target':>7} {'diff':>6}")
    for name, rate, target in ROWS:
        arch = build_arch(name)
        base = count_flops(arch, channels=args.channels)
        r = count_flops(arch, uniform_rates(arch, rate), channels=args.channels)
        print(f"{name:<10} {rate:>5.2f} {base.total:>10.3e} {r.total:>10.3e} "
              f"{r.reduction_pct:>7.2f} {target:>7.1f} {r.reduction_pct - target:>+6.2f}")


if __name__ == "__main__":
    main()
