"""Shared argument handling for the experiment scripts."""
import argparse
import json
import logging

from advdialog.config import load_config


def parser(description, seeds):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, nargs="+", default=list(seeds))
    p.add_argument("--config", help="YAML file layered over the toy profile")
    p.add_argument("--json", help="write per-seed results here")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup(args):
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def config_for(args, seed):
    return load_config(args.config, {"seed": seed})


def dump(args, payload):
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
