#!/usr/bin/env python3
"""Write the LPIPS (AlexNet, v0.1 heads) weights in the flat layout r2t loads.

Needs torchvision and the `lpips` package plus network access for the
ImageNet AlexNet download:

    pip install torchvision lpips
    python tools/export_lpips_weights.py lpips_alex.pt
    r2t lpips-weights --check lpips_alex.pt

Keys: features.{0,3,6,8,10}.{weight,bias} and lin{0..4}.weight.
"""

import argparse
import os

import torch


CONV_INDICES = (0, 3, 6, 8, 10)


def collect():
    import lpips
    import torchvision

    alex = torchvision.models.alexnet(weights=torchvision.models.AlexNet_Weights.IMAGENET1K_V1)
    out = {}
    for i in CONV_INDICES:
        conv = alex.features[i]
        out[f"features.{i}.weight"] = conv.weight.detach().float().contiguous()
        out[f"features.{i}.bias"] = conv.bias.detach().float().contiguous()

    heads = os.path.join(os.path.dirname(lpips.__file__), "weights", "v0.1", "alex.pth")
    lin = torch.load(heads, map_location="cpu")
    for k in range(5):
        out[f"lin{k}.weight"] = lin[f"lin{k}.model.1.weight"].float().contiguous()
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", help="output file, e.g. lpips_alex.pt")
    args = ap.parse_args()
    weights = collect()
    torch.save(weights, args.out)
    print(f"wrote {len(weights)} tensors to {args.out}")


if __name__ == "__main__":
    main()
