#!/usr/bin/env python3
"""Export torchvision ResNet-18 weights to the safetensors file regad loads.

    python scripts/convert_resnet18.py                 # ImageNet weights -> $REGAD_CACHE
    python scripts/convert_resnet18.py --out w.safetensors
    python scripts/convert_resnet18.py --random --fixture DIR

Only the stem and layer1..layer3 are written. With --fixture, a random input
and the reference stage outputs (eval mode) are saved next to the weights so
the Rust backbone can be checked against torchvision.
"""

import argparse
import os
from pathlib import Path

import torch
import torchvision
from safetensors.torch import save_file

KEEP = ("conv1.", "bn1.", "layer1.", "layer2.", "layer3.")


def default_out() -> Path:
    cache = os.environ.get("REGAD_CACHE")
    root = Path(cache) if cache else Path.home() / ".cache" / "regad"
    return root / "resnet18.safetensors"


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--random", action="store_true", help="random init instead of ImageNet weights")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fixture", type=Path, default=None, help="also dump input and stage outputs here")
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    weights = None if args.random else torchvision.models.ResNet18_Weights.IMAGENET1K_V1
    model = torchvision.models.resnet18(weights=weights).eval()
    if args.random:
        # Non-trivial running statistics so eval-mode BN is exercised.
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.running_mean.uniform_(-0.1, 0.1)
                m.running_var.uniform_(0.5, 1.5)

    state = {
        k: v.detach().float().contiguous()
        for k, v in model.state_dict().items()
        if k.startswith(KEEP) and not k.endswith("num_batches_tracked")
    }
    out = args.out or (args.fixture / "resnet18.safetensors" if args.fixture else default_out())
    out.parent.mkdir(parents=True, exist_ok=True)
    save_file(state, str(out))
    print(f"wrote {len(state)} tensors to {out}")

    if args.fixture:
        x = torch.randn(1, 3, 64, 64)
        with torch.no_grad():
            h = model.maxpool(model.relu(model.bn1(model.conv1(x))))
            s1 = model.layer1(h)
            s2 = model.layer2(s1)
            s3 = model.layer3(s2)
        save_file(
            {"input": x, "stage1": s1.contiguous(), "stage2": s2.contiguous(), "stage3": s3.contiguous()},
            str(args.fixture / "reference.safetensors"),
        )
        print(f"wrote reference activations to {args.fixture}")


if __name__ == "__main__":
    main()
