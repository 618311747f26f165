#!/usr/bin/env python3
"""Convert a timm VisionTransformer into a gpatch weight file.

    python3 tools/convert_timm.py vit_base_patch16_224.augreg2_in21k_ft_in1k \
        --name vit_b16 --out assets/victims

loads the pretrained checkpoint through timm (or --checkpoint for a local
state dict / safetensors file), writes <out>/<name>.bin and adds or replaces
the victim's line in <out>/manifest.tsv.

--reference N also writes <out>/<name>.reference.json with N random [0,1]
images and the logits timm produces for them; the C++ tests use that file to
check the hand-written forward pass against PyTorch.
"""

import argparse
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import timm
import torch

MAGIC = b"GPATCHW1"


def tensor_order(depth, pool):
    names = ["patch_embed.proj.weight", "patch_embed.proj.bias", "cls_token", "pos_embed"]
    for i in range(depth):
        p = f"blocks.{i}."
        names += [p + s for s in (
            "norm1.weight", "norm1.bias", "attn.qkv.weight", "attn.qkv.bias",
            "attn.proj.weight", "attn.proj.bias", "norm2.weight", "norm2.bias",
            "mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight", "mlp.fc2.bias")]
    final = "fc_norm" if pool == "avg" else "norm"
    names += [final + ".weight", final + ".bias", "head.weight", "head.bias"]
    return names


def describe(model):
    if model.global_pool not in ("token", "avg"):
        raise SystemExit(f"unsupported global_pool {model.global_pool!r}")
    if getattr(model, "num_prefix_tokens", 1) != 1 or model.cls_token is None:
        raise SystemExit("only class-token models without register tokens are supported")
    embed = model.patch_embed
    cfg = model.pretrained_cfg or {}
    return {
        "image_size": int(embed.img_size[0]),
        "patch_size": int(embed.patch_size[0]),
        "dim": int(model.embed_dim),
        "depth": len(model.blocks),
        "heads": int(model.blocks[0].attn.num_heads),
        "mlp_dim": int(model.blocks[0].mlp.fc1.out_features),
        "num_classes": int(model.num_classes),
        "mean": [float(v) for v in cfg.get("mean", (0.5, 0.5, 0.5))],
        "std": [float(v) for v in cfg.get("std", (0.5, 0.5, 0.5))],
        "norm_eps": float(model.blocks[0].norm1.eps),
        "pool": model.global_pool,
    }


def write_weights(model, config, path):
    state = model.state_dict()
    names = tensor_order(config["depth"], config["pool"])
    header = {
        "format": "gpatch-weights",
        "version": 1,
        "architecture": "vit",
        "config": config,
        "dtype": "float32",
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    text = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for n in names:
            f.write(state[n].detach().to(torch.float32).contiguous().numpy().tobytes())


def update_manifest(directory, name, file):
    manifest = directory / "manifest.tsv"
    lines = manifest.read_text().splitlines() if manifest.exists() else ["# name\tfile\tsha256"]
    lines = [l for l in lines if l.startswith("#") or l.split("\t")[0] != name]
    digest = hashlib.sha256((directory / file).read_bytes()).hexdigest()
    lines.append(f"{name}\t{file}\t{digest}")
    manifest.write_text("\n".join(lines) + "\n")


def reference(model, config, count, seed):
    rng = np.random.default_rng(seed)
    side = config["image_size"]
    images = rng.random((count, side, side, 3), dtype=np.float32)
    mean = np.asarray(config["mean"], dtype=np.float32)
    std = np.asarray(config["std"], dtype=np.float32)
    x = torch.from_numpy(((images - mean) / std).transpose(0, 3, 1, 2).copy())
    with torch.no_grad():
        logits = model(x).double().numpy()
    return {"images": images.reshape(count, -1).tolist(), "logits": logits.tolist()}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("model", help="timm model name")
    ap.add_argument("--name", required=True, help="victim name for the manifest")
    ap.add_argument("--out", required=True, type=Path, help="weights directory")
    ap.add_argument("--checkpoint", type=Path, help="local state dict instead of downloading")
    ap.add_argument("--random", action="store_true", help="random init, perturbed so every parameter matters (fixtures)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reference", type=int, default=0, metavar="N")
    ap.add_argument("--model-args", default="{}", help="JSON kwargs for timm.create_model")
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    pretrained = not args.random and args.checkpoint is None
    model = timm.create_model(args.model, pretrained=pretrained, **json.loads(args.model_args))
    if args.checkpoint is not None:
        if args.checkpoint.suffix == ".safetensors":
            from safetensors.torch import load_file
            state = load_file(str(args.checkpoint))
        else:
            state = torch.load(args.checkpoint, map_location="cpu")
        model.load_state_dict(state)
    if args.random:
        # timm zeroes biases and sets norm gains to one; perturb everything so a
        # fixture exercises every parameter.
        with torch.no_grad():
            for p in model.parameters():
                p.add_(0.05 * torch.randn_like(p))
    model.eval()

    config = describe(model)
    args.out.mkdir(parents=True, exist_ok=True)
    file = f"{args.name}.bin"
    write_weights(model, config, args.out / file)
    update_manifest(args.out, args.name, file)
    if args.reference:
        ref = reference(model, config, args.reference, args.seed)
        ref["config"] = config
        (args.out / f"{args.name}.reference.json").write_text(json.dumps(ref))
    print(f"wrote {args.out / file} ({config['depth']} blocks, dim {config['dim']}, "
          f"{config['num_classes']} classes)")


if __name__ == "__main__":
    main()
