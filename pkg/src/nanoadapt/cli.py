"""Command line entry point.

    nanoadapt frontend slice --image IMG.ppm [--config RUN.json] [--out DIR]
    nanoadapt nta init --out PARAMS.ntab [--config RUN.json]
    nanoadapt nta forward --tokens T.ntat --params PARAMS.ntab [--config RUN.json] --out OUT.ntat
    nanoadapt nta gradcheck --seed 7
    nanoadapt nta bench --n-list 256,512,1024,2048,4096 --out bench.csv [--json]
    nanoadapt train toy [--config RUN.json] --out report.json
    nanoadapt metrics corpus --in corpus.jsonl
    nanoadapt metrics captions --pred pred.jsonl --ref ref.jsonl

Exit status: 0 success, 1 contract or I/O error, 2 usage error.
"""

import argparse
import csv
import json
import os
import sys

from . import __version__
from .bench import ADAPTORS, render_report, run_scaling_bench
from .config import load_config
from .exceptions import NanoAdaptError
from .frontend import encode_image, read_ppm
from .gradsuite import TOLERANCE, run_nta_suite, run_primitive_suite
from .metrics import Corpus, caption_scores, corpus_stats, cwr, load_references, tgc
from .nta import NtaParams, init_nta_params, nta_forward
from .tensor import Tensor, ntat, no_grad
from .training import build_toy_task, train_two_stage


def _json_out(obj, stream=None):
    (stream or sys.stdout).write(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def cmd_frontend_slice(args):
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    image = read_ppm(args.image)
    grid, tokens = encode_image(image, cfg.frontend, seed)
    files = []
    out_dir = args.out or cfg.paths.out_dir
    os.makedirs(out_dir, exist_ok=True)
    for i, t in enumerate(tokens):
        path = os.path.join(out_dir, f"slice_{i:02d}.ntat")
        ntat.save(path, t.values.data)
        files.append(path)
    _json_out({"width": image.width, "height": image.height, "rows_m": grid.rows_m,
               "cols_n": grid.cols_n, "slice_count": grid.slice_count,
               "token_grid": list(tokens[0].values.shape), "files": files})
    return 0


def cmd_nta_init(args):
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    ntat.save_bundle(args.out, init_nta_params(cfg.nta, seed).to_arrays())
    return 0


def cmd_nta_forward(args):
    cfg = load_config(args.config)
    tokens = ntat.load(args.tokens)
    params = NtaParams.from_arrays(ntat.load_bundle(args.params))
    with no_grad():
        out = nta_forward(Tensor(tokens), params, cfg.nta)
    if args.out:
        ntat.save(args.out, out.data)
    _json_out({"input": list(tokens.shape), "output": list(out.shape)})
    return 0


def cmd_nta_gradcheck(args):
    seeds = [args.seed * 1000 + i for i in range(args.configs)]
    prim = run_primitive_suite(seeds)
    full = run_nta_suite(seeds)
    for name, err in {**{f"primitive/{k}": v for k, v in prim.errors.items()},
                      **{f"nta/{k}": v for k, v in full.errors.items()}}.items():
        print(f"{name}\t{err:.3e}")
    ok = prim.ok() and full.ok()
    print(f"max_rel_err\t{max(prim.max_error, full.max_error):.3e}\t{'PASS' if ok else 'FAIL'} (tol {TOLERANCE:g})")
    return 0 if ok else 1


def cmd_nta_bench(args):
    cfg = load_config(args.config)
    n_list = [int(x) for x in args.n_list.split(",") if x]
    adaptors = args.adaptors.split(",") if args.adaptors else ADAPTORS
    report = run_scaling_bench(adaptors, n_list, cfg.nta, trials=args.trials, seed=cfg.seed)
    text = render_report(report, "json" if args.json else "csv")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for name, s in report.slopes.items():
        print(f"{name}: flops slope {s['flops']:.3f}, wall slope {s['wall']:.3f}", file=sys.stderr)
    return 0


def cmd_train_toy(args):
    cfg = load_config(args.config)
    pipeline, samples = build_toy_task(cfg.toy)
    report = train_two_stage(pipeline, samples, cfg.toy.schedule)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    print(f"accuracy {report.accuracy:.4f} final_loss {report.final_loss:.4f}", file=sys.stderr)
    return 0


def cmd_metrics_corpus(args):
    corpus = Corpus.from_jsonl(args.inp)
    stats = corpus_stats(corpus)
    _json_out({"captions": len(corpus.captions), "tgc": tgc(corpus), "cwr": cwr(corpus),
               "length_histogram": {str(k): v for k, v in stats["length_histogram"].items()},
               "labels": stats["labels"], "env_cooccurrence": stats["env_cooccurrence"]})
    return 0


def cmd_metrics_captions(args):
    preds = {i: caps[0] for i, caps in load_references(args.pred).items()}
    scores = caption_scores(preds, load_references(args.ref))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in scores.items():
        writer.writerow([name, f"{value:.6f}"])
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="nanoadapt", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"nanoadapt {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)

    fe = groups.add_parser("frontend").add_subparsers(dest="cmd", required=True)
    p = fe.add_parser("slice", help="slice, encode and compress a PPM image")
    p.add_argument("--image", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for per-slice NTAT files")
    p.set_defaults(func=cmd_frontend_slice)

    nta = groups.add_parser("nta").add_subparsers(dest="cmd", required=True)
    p = nta.add_parser("init", help="write seeded NTA parameters as an NTAB bundle")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nta_init)
    p = nta.add_parser("forward", help="run the adaptor on an NTAT token grid")
    p.add_argument("--tokens", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_nta_forward)
    p = nta.add_parser("gradcheck", help="autodiff vs finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=20)
    p.set_defaults(func=cmd_nta_gradcheck)
    p = nta.add_parser("bench", help="FLOPs and wall-time scaling")
    p.add_argument("--n-list", default="256,512,1024,2048,4096")
    p.add_argument("--adaptors", help=f"comma list from {','.join(ADAPTORS)}")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_nta_bench)

    tr = groups.add_parser("train").add_subparsers(dest="cmd", required=True)
    p = tr.add_parser("toy", help="two-stage training on the synthetic shapes task")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    me = groups.add_parser("metrics").add_subparsers(dest="cmd", required=True)
    p = me.add_parser("corpus", help="TGC, CWR and corpus statistics")
    p.add_argument("--in", dest="inp", required=True)
    p.set_defaults(func=cmd_metrics_corpus)
    p = me.add_parser("captions", help="BLEU, ROUGE and CIDEr as CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_metrics_captions)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NanoAdaptError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
