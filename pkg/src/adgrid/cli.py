"""Command line entry point.

Exit status: 0 on success (an ad rejection is a success), 1 on usage errors,
2 on data errors (bad files, contract violations).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import _serial
from .errors import DataError
from .features import fit_pca, fit_permutation, load_features, pipeline_from_dict, pipeline_to_dict, project_set
from .layout import LayoutResult
from .pipeline import PipelineManifest, load_model, run_pipeline
from .quantizer import LopqConfig, encode_batch, fit_lopq, model_to_dict, write_codes
from .render import render_html
from .synthetic import SyntheticConfig, eval_agreement, gen_synthetic

EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _manifest(args) -> PipelineManifest:
    m = PipelineManifest.load(args.manifest)
    if args.seed is not None:
        m.seed = args.seed
    if getattr(args, "strategy", None):
        m.strategy = args.strategy
    if args.exclude:
        m.exclude_ads = list(m.exclude_ads) + list(args.exclude)
    return m


def cmd_train_pca(args):
    feats = load_features(args.features, args.ids)
    pca = fit_pca(feats, args.output_dim)
    plan = fit_permutation(pca.variances, args.subvectors)
    _serial.write_json(pipeline_to_dict(pca, plan), args.out)


def cmd_train_lopq(args):
    feats = load_features(args.features, args.ids)
    pca, plan = pipeline_from_dict(_serial.read_json(args.pca))
    if plan.num_subvectors != args.subvectors:
        logging.getLogger(__name__).warning(
            "permutation was balanced for M=%d, training with M=%d", plan.num_subvectors, args.subvectors
        )
    config = LopqConfig(args.bits, args.subvectors, args.per_cell, args.seed, args.max_iters)
    model = fit_lopq(project_set(feats, pca, plan), config, pca, plan)
    _serial.write_json(model_to_dict(model), args.out)


def cmd_encode(args):
    feats = load_features(args.features, args.ids)
    _, _, model = load_model(args.model)
    if model is None:
        raise DataError("encode needs an LOPQ model file")
    codes = encode_batch(project_set(feats, model.pca, model.plan), model)
    write_codes(codes, model.M, model.bits, args.out)
    Path(args.out).with_suffix(".ids").write_text("".join(f"{i}\n" for i in feats.ids), encoding="utf-8")


def cmd_select(args):
    result = run_pipeline(_manifest(args))
    _serial.write_json(result.selection.to_dict(), args.out)


def cmd_place(args):
    result = run_pipeline(_manifest(args))
    _serial.write_json(result.to_dict(), args.out)


def cmd_render(args):
    doc = _serial.read_json(args.layout)
    layout = LayoutResult.from_dict(doc.get("layout", doc))
    title = args.title or doc.get("query_label", "")
    Path(args.out).write_text(render_html(layout, args.image_dir, title), encoding="utf-8")


def cmd_gen_synthetic(args):
    counts = tuple(int(x) for x in args.ads_per_topic.split(",")) if args.ads_per_topic else None
    if counts is None:
        if args.topics != 5:
            raise DataError("--ads-per-topic is required unless --topics is 5")
        counts = SyntheticConfig().ads_per_topic
    cfg = SyntheticConfig(
        topics=args.topics, ads_per_topic=counts, images_per_query=args.images_per_query,
        queries=args.queries, d=args.dim, separation=args.separation,
        train_size=args.train_size, seed=args.seed,
    )
    gen_synthetic(args.out, cfg)


def cmd_eval_agreement(args):
    pca, plan, model = load_model(args.model)
    if model is None:
        raise DataError("eval-agreement needs an LOPQ model file")
    report = eval_agreement(args.dataset, model, args.queries, args.mode)
    _serial.write_json(report.to_dict(), args.out)
    print(f"overall agreement {report.overall:.3f} over {report.num_queries} queries")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adgrid", description="Visually congruent ad selection and grid placement.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train-pca", help="fit PCA and the variance-balancing permutation")
    s.add_argument("--features", required=True)
    s.add_argument("--ids")
    s.add_argument("--output-dim", type=int, default=128)
    s.add_argument("--subvectors", "-M", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_pca)

    s = sub.add_parser("train-lopq", help="train coarse and residual codebooks")
    s.add_argument("--features", required=True)
    s.add_argument("--ids")
    s.add_argument("--pca", required=True, help="output of train-pca")
    s.add_argument("--bits", "-b", type=int, default=8, help="bits per coarse half")
    s.add_argument("--subvectors", "-M", type=int, default=16)
    s.add_argument("--per-cell", action="store_true")
    s.add_argument("--max-iters", type=int, default=25)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_lopq)

    s = sub.add_parser("encode", help="compress features to a VCC1 code file")
    s.add_argument("--features", required=True)
    s.add_argument("--ids")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    for name, func, helptext in (
        ("select", cmd_select, "rank ads and pick the winner"),
        ("place", cmd_place, "run the full pipeline and write selection + layout"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--manifest", required=True)
        s.add_argument("--seed", type=int, default=None, help="override the manifest seed")
        s.add_argument("--exclude", action="append", default=[], metavar="AD_ID",
                       help="drop an ad from the pool (repeatable), e.g. after a reciprocity rejection")
        if name == "place":
            s.add_argument("--strategy", help="override the manifest strategy")
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("render", help="write a static HTML contact sheet")
    s.add_argument("--layout", required=True, help="layout JSON or the output of place")
    s.add_argument("--image-dir")
    s.add_argument("--title", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("gen-synthetic", help="generate a synthetic topical ad corpus")
    s.add_argument("--topics", type=int, default=5)
    s.add_argument("--ads-per-topic", help="comma separated, e.g. 23,48,45,16,18")
    s.add_argument("--images-per-query", type=int, default=24)
    s.add_argument("--queries", type=int, default=100)
    s.add_argument("--dim", type=int, default=128)
    s.add_argument("--separation", type=float, default=3.0)
    s.add_argument("--train-size", type=int, default=4000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="dataset directory")
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("eval-agreement", help="compressed-vs-exact ad selection agreement")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--queries", type=int, default=None)
    s.add_argument("--mode", choices=("min", "sum"), default="sum")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_agreement)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (DataError, OSError) as exc:
        print(f"adgrid {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
