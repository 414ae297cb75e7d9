"""Command line: bundle-export --images ... --out DIR [--layers -3,-2,-1] ..."""

from __future__ import annotations

import argparse
import sys

from .backbones import PatchStatsBackbone, TorchScriptBackbone
from .errors import ExporterError
from .export import ExportJob, run_job
from .segmenters import PromptFloodSegmenter, TorchScriptSegmenter


def _parse_prompts(text: str):
    prompts = []
    for chunk in text.split(";"):
        row, col = chunk.split(",")
        prompts.append((int(row), int(col)))
    return tuple(prompts)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bundle-export", description=__doc__)
    parser.add_argument("--images", nargs="+", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--layers", default="-3,-2,-1", help="comma-separated backbone layer indices")
    parser.add_argument("--prompts", default="224,224", help="semicolon-separated row,col prompt points")
    parser.add_argument("--target-size", type=int, default=448)
    parser.add_argument("--max-regions", type=int, default=None)
    parser.add_argument("--backbone", default="local", help="'local' or a scripted-model path")
    parser.add_argument("--segmenter", default="local", help="'local' or a scripted-model path")
    args = parser.parse_args(argv)
    try:
        job = ExportJob(
            images=tuple(args.images),
            out_dir=args.out,
            layer_indices=tuple(int(v) for v in args.layers.split(",")),
            prompts=_parse_prompts(args.prompts),
            target_size=args.target_size,
            max_regions=args.max_regions,
        )
        backbone = PatchStatsBackbone() if args.backbone == "local" else TorchScriptBackbone(args.backbone)
        segmenter = (
            PromptFloodSegmenter() if args.segmenter == "local" else TorchScriptSegmenter(args.segmenter)
        )
        fragment = run_job(job, backbone, segmenter)
    except ExporterError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.code
    ok = sum(1 for img in fragment["images"] if img["status"] == "ok")
    print(f"exported {ok}/{len(fragment['images'])} images to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
