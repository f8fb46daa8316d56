"""Print the symbolic shape trace and parameter budget of the full-scale model.

No weights are allocated: shapes come from config arithmetic and parameter
counts from a meta-device instantiation.

Usage: python scripts/trace_full_scale.py [--image-size N] [--classes N]
"""

import argparse

from mmadapt.config import HeadConfig, ModelConfig
from mmadapt.model import count_parameters_symbolically
from mmadapt.shapes import trace_shapes


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--image-size", type=int, default=1024)
    parser.add_argument("--classes", type=int, default=25)
    args = parser.parse_args()

    cfg = ModelConfig(head=HeadConfig(num_classes=args.classes))
    cfg.backbone.image_size = args.image_size
    print(f"{'stage':<32} shape")
    for name, shape in trace_shapes(cfg).items():
        print(f"{name:<32} {'x'.join(str(s) for s in shape)}")

    counts = count_parameters_symbolically(cfg)
    print()
    total = sum(counts.values())
    for name, count in counts.items():
        print(f"{name:<12} {count / 1e6:>8.2f} M params")
    print(f"{'total':<12} {total / 1e6:>8.2f} M params")
    side = counts["fusion"] + counts["adapter"]
    print(f"\nside network / backbone ratio: {side / counts['backbone']:.3f} "
          f"({'asymmetric' if side < counts['backbone'] else 'symmetric or heavier'})")


if __name__ == "__main__":
    main()
