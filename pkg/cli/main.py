"""Argument parsing for the sfda command line."""

import argparse
import sys
from typing import List, Optional

from cli.commands import EXIT_CODES, dispatch, error_code, error_line
from cli.config import parse_config

ABLATION_FLAGS = ("no_fms", "no_emin", "no_sc", "with_st", "no_pamr", "no_cl")

USAGE_EXAMPLES = """examples:
  python run_sfda.py synth --out data/synthetic
  python run_sfda.py pretrain --preset desk --preprocess synthetic --manifest data/synthetic/source_manifest.json --out runs/source
  python run_sfda.py adapt --preset desk --preprocess synthetic --manifest data/synthetic/target_manifest.json \\
      --checkpoint runs/source/source_model.pt --out runs/adapt
  python run_sfda.py eval --preset desk --preprocess synthetic --manifest data/synthetic/target_manifest.json \\
      --checkpoint runs/adapt/adapt_bundle.pt --out runs/eval
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_sfda.py",
        description="Source-free adaptation of a pretrained segmentation model to an unlabeled target domain.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=USAGE_EXAMPLES,
    )
    parser.add_argument("command", choices=["pretrain", "adapt", "eval", "synth", "refine", "ablate"])
    parser.add_argument("--config", help="KEY=VALUE run config file; flags override its values")

    run = parser.add_argument_group("run")
    run.add_argument("--preset", choices=["full", "desk", "tiny"])
    run.add_argument("--preprocess", choices=["clinical", "synthetic"])
    run.add_argument("--seed", type=int)
    run.add_argument("--epochs", type=int, help="Total adaptation epochs")
    run.add_argument("--stage-t", dest="stage_t", type=int, help="First epoch of the circular stage")
    run.add_argument("--batch", type=int, help="Batch size of every network")
    run.add_argument("--source-epochs", dest="source_epochs", type=int)
    run.add_argument("--validate-every", dest="validate_every", type=int)
    run.add_argument("--device")
    run.add_argument("--dump-triplets", dest="dump_triplets", action="store_true", default=None)
    run.add_argument("--entropy-on-u3", dest="entropy_on_u3", action="store_true", default=None)
    run.add_argument("--flat-dice", dest="flat_dice", action="store_true", default=None)

    ablation = parser.add_argument_group("ablation")
    for flag in ABLATION_FLAGS:
        ablation.add_argument(f"--{flag.replace('_', '-')}", dest=flag, action="store_true", default=None)

    paths = parser.add_argument_group("paths")
    paths.add_argument("--manifest")
    paths.add_argument("--checkpoint")
    paths.add_argument("--labeled-volume", dest="labeled_volume")
    paths.add_argument("--resume")
    paths.add_argument("--volume", help="Image volume (refine)")
    paths.add_argument("--soft-mask", dest="soft_mask", help="Soft mask .npy or label volume (refine)")
    paths.add_argument("--out")

    other = parser.add_argument_group("command options")
    other.add_argument("--domain", choices=["source", "target"], help="pretrain: source model or target upper bound")
    other.add_argument("--network", choices=["u3", "source"], help="eval: spec of a single-network checkpoint")
    other.add_argument("--train-fraction", dest="train_fraction", type=float)
    other.add_argument("--image-size", dest="image_size", type=int)
    other.add_argument("--slices-per-volume", dest="slices_per_volume", type=int)
    other.add_argument("--volumes-per-domain", dest="volumes_per_domain", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    config_path = args.pop("config")
    try:
        cfg = parse_config(config_path, args)
    except Exception as e:
        print(f"[CLI] ❌ Invalid configuration: {str(e)}")
        print(error_line(e))
        return EXIT_CODES[error_code(e)]

    print(f"[CLI] Resolved config (digest {cfg.digest}):")
    print(cfg.model_dump_json(indent=2, exclude={"digest"}))
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
