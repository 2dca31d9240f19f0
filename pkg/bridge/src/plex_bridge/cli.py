"""plex-bridge: export embeddings and masked predictions from real checkpoints."""

from __future__ import annotations

import argparse
import json
import sys

from .export import export_embeddings, export_masked_predictions


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plex-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="write interchange JSONL for a corpus")
    p.add_argument("--model", required=True, help="hub id or local checkpoint directory")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", choices=["last", "all"], default="last")
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("export-masked", help="answer keep-masks with class probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["delete", "mask"], default="delete")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--device", default="cpu")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            n = export_embeddings(args.model, args.infile, args.out,
                                  layers=args.layers, device=args.device)
            print(f"wrote {n} records to {args.out}")
        else:
            n = export_masked_predictions(args.model, args.infile, args.masks, args.out,
                                          mode=args.mode, batch_size=args.batch,
                                          device=args.device)
            print(f"wrote {n} masked predictions to {args.out}")
        return 0
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
