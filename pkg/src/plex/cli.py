"""Command-line surface: encode, train, build datasets, explain, evaluate, render.

Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric divergence. Errors
go to stderr as one JSON object. Every command's randomness flows from its
--seed (or --toy-seed) flag; identical inputs and seeds give byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import datasetgen, evaluate, explainers, render, siamese
from .classifier import HeadTrainConfig, predict, train_head
from .encoder import (
    EncodeCounter,
    EmbeddingSet,
    TokenizedSentence,
    ToyEncoderParams,
    encode_toy,
    layer_distance_matrix,
    load_embeddings,
    save_embeddings,
    tokenize,
)
from .errors import DataFormatError, DivergenceError, PlexError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 with JSON on stderr, not argparse's exit 2
        raise UsageError(message)


def _emit_error(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)


def _read_config(path) -> list[str]:
    """Translate key=value lines into flags; explicit argv still wins."""
    args: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"config line without '=': {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() == "true":
                args.append(flag)
            elif value.lower() == "false":
                continue
            else:
                args.extend([flag, value])
    return args


def _toy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--toy-seed", type=int, default=7, help="seed for the built-in encoder weights")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--ff", type=int, default=64)


def _toy_params(args) -> ToyEncoderParams:
    return ToyEncoderParams(seed=args.toy_seed, d=args.dim, heads=args.heads,
                            layers=args.layers, ff=args.ff)


def _load_corpus(path) -> list[TokenizedSentence]:
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sentences.append(tokenize(rec["text"], sid=str(rec["id"]), label=rec.get("label")))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"line {lineno}: bad corpus record ({exc})") from exc
    return sentences


def _sentences_from_embeddings(embeddings: list[EmbeddingSet]) -> list[TokenizedSentence]:
    """Rebuild word-level sentences (one token per word) from interchange records."""
    return [TokenizedSentence(sid=e.sid, tokens=list(e.words_text),
                              word_map=[[i] for i in range(e.n_words)], label=e.label)
            for e in embeddings]


def _rebuild_encoder(embeddings: list[EmbeddingSet]) -> ToyEncoderParams:
    model = embeddings[0].model
    if not model.startswith("toy:"):
        raise UsageError(
            f"embeddings came from {model!r}; masked re-encoding needs --masked-preds"
        )
    return ToyEncoderParams.from_model_tag(model)


# --- subcommands ---------------------------------------------------------------


def _cmd_encode(args) -> int:
    if args.from_bridge:
        records = list(load_embeddings(args.infile))
        save_embeddings(records, args.out)
        return 0
    corpus = _load_corpus(args.infile)
    params = _toy_params(args)
    sets = []
    for sentence in corpus:
        e = encode_toy(sentence, params)
        if args.final_only:
            e.layers = None
        sets.append(e)
    save_embeddings(sets, args.out)
    return 0


def _cmd_train_head(args) -> int:
    embeddings = list(load_embeddings(args.emb))
    examples = [(e, e.label) for e in embeddings if e.label is not None]
    if not examples:
        raise DataFormatError("no labelled records in the embedding file")
    config = HeadTrainConfig(classes=args.classes, epochs=args.epochs, batch_size=args.batch,
                             lr=args.lr, seed=args.seed, target_loss=args.target_loss)
    head = train_head(examples, config)
    siamese.save_head(head, args.out)
    return 0


def _cmd_build_dataset(args) -> int:
    embeddings = list(load_embeddings(args.emb))
    if not embeddings:
        raise DataFormatError("empty embedding file")
    config = datasetgen.DatasetConfig(explainer=args.explainer, n_samples=args.samples,
                                      seed=args.seed, kernel_width=args.kernel_width,
                                      ridge_lambda=args.ridge_lambda)
    if args.masked_preds:
        table = explainers.load_masked_predictions(args.masked_preds)
        pairs, manifest = datasetgen.build_dataset_from_table(embeddings, table, config)
    else:
        head = siamese.load_head(args.head)
        enc_params = _rebuild_encoder(embeddings)
        corpus = _sentences_from_embeddings(embeddings)
        pairs, manifest = datasetgen.build_dataset(corpus, enc_params, head, config)
    datasetgen.save_pairs(pairs, args.out, manifest=manifest, manifest_path=args.manifest)
    return 0


def _cmd_train_plex(args) -> int:
    pairs = datasetgen.load_pairs(args.pairs)
    config = siamese.TrainConfig(alpha=args.alpha, batch_size=args.batch, epochs=args.epochs,
                                 seed=args.seed, lr=args.lr, dropout=not args.no_dropout,
                                 optimizer=args.optimizer)
    params, history = siamese.train_plex(pairs, config)
    siamese.save_params(params, args.out)
    if args.loss_out:
        with open(args.loss_out, "w", encoding="utf-8") as fh:
            json.dump({"epochs": len(history), "loss": history}, fh, indent=2)
            fh.write("\n")
    print(f"trained {len(pairs)} pairs for {len(history)} epochs, final loss {history[-1]:.6f}")
    return 0


def _emit_masks(embeddings, args) -> int:
    masks = {}
    for e in embeddings:
        m = e.n_words
        if args.method == "lime":
            generated = explainers.lime_masks(m, args.samples, args.seed)
            if m == 1:
                generated = np.vstack([generated, np.zeros((1, 1), dtype=np.uint8)])
        elif args.method == "shap":
            generated = explainers.shap_masks(m, args.samples, args.seed)
        elif args.method == "exact":
            if m > explainers.EXACT_WORD_BUDGET:
                raise ValueError(f"sentence {e.sid!r}: {m} words exceed the exact "
                                 f"enumeration budget of {explainers.EXACT_WORD_BUDGET}")
            generated = explainers._enumerate_masks(m, include_empty=True, include_full=True)
        else:
            raise UsageError("--emit-masks applies to lime, shap or exact")
        masks[e.sid] = generated
    explainers.save_masks(masks, args.emit_masks)
    return 0


def _explain_embedding(e: EmbeddingSet, args, head, plex_params, enc_params, table):
    if args.method == "plex":
        return siamese.plex_explain(e, plex_params, head=head)
    if table is not None:
        records = table.get(e.sid)
        if not records:
            raise DataFormatError(f"no masked predictions for sentence {e.sid!r}")
        model = explainers.TableMaskModel.from_records(e.n_words, records)
        if e.probs is None:
            raise DataFormatError(f"record {e.sid!r} carries no class probabilities")
        target = int(np.argmax(e.probs))
        fx = float(e.probs[target])
    else:
        sentence = TokenizedSentence(sid=e.sid, tokens=list(e.words_text),
                                     word_map=[[i] for i in range(e.n_words)], label=e.label)
        model = explainers.SentenceMaskModel(sentence, enc_params, head)
        dist = predict(e.cls, head)
        target, fx = dist.argmax, float(dist.probs[dist.argmax])
    if args.method == "lime":
        raw = explainers.lime_raw_scores(model, target, args.samples, args.seed,
                                         args.kernel_width, args.ridge_lambda)
    elif args.method == "shap":
        raw = explainers.shap_raw_scores(model, target, fx, args.samples, args.seed)
    elif args.method == "exact":
        raw = explainers.exact_shapley_raw_scores(model, target)
    else:
        raise UsageError(f"unknown method {args.method!r}")
    return explainers.ImportanceVector(sid=e.sid, scores=explainers.normalize_scores(raw),
                                       target_class=target, method=args.method)


def _cmd_explain(args) -> int:
    if bool(args.sentence) == bool(args.emb):
        raise UsageError("give exactly one of --sentence or --emb")
    if args.sentence:
        enc_params = _toy_params(args)
        sentence = tokenize(args.sentence, sid=args.id)
        embeddings = [encode_toy(sentence, enc_params)]
    else:
        embeddings = list(load_embeddings(args.emb))
        if not embeddings:
            raise DataFormatError("empty embedding file")
        enc_params = None

    if args.emit_masks:
        return _emit_masks(embeddings, args)

    head = siamese.load_head(args.head) if args.head else None
    plex_params = siamese.load_params(args.plex_params) if args.plex_params else None
    table = explainers.load_masked_predictions(args.masked_preds) if args.masked_preds else None
    if args.method == "plex" and plex_params is None:
        raise UsageError("--method plex needs --plex-params")
    if args.method != "plex" and table is None:
        if head is None:
            raise UsageError(f"--method {args.method} needs --head (or --masked-preds)")
        if enc_params is None:
            enc_params = _rebuild_encoder(embeddings)

    vectors = [_explain_embedding(e, args, head, plex_params, enc_params, table) for e in embeddings]
    if args.out:
        explainers.save_scores(vectors, args.out)
    if args.html:
        blocks = [(list(e.words_text), list(iv.scores), f"{e.sid} [{iv.method}]")
                  for e, iv in zip(embeddings, vectors)]
        with open(args.html, "w", encoding="utf-8") as fh:
            fh.write(render.html_heatmap(blocks))
    if args.ansi:
        for e, iv in zip(embeddings, vectors):
            print(render.ansi_heatmap(list(e.words_text), list(iv.scores)))
    return 0


def _cmd_stress(args) -> int:
    embeddings = list(load_embeddings(args.emb))
    if not embeddings:
        raise DataFormatError("empty embedding file")
    head = siamese.load_head(args.head)
    enc_params = _rebuild_encoder(embeddings)
    corpus = _sentences_from_embeddings(embeddings)

    if args.method == "plex":
        plex_params = siamese.load_params(args.plex_params)
        by_sid = {e.sid: e for e in embeddings}

        def explainer_fn(s):
            return siamese.plex_explain(by_sid[s.sid], plex_params, head=head)
    elif args.method == "lime":
        def explainer_fn(s):
            return explainers.lime_explain(s, enc_params, head, args.samples, args.seed,
                                           args.kernel_width, args.ridge_lambda)
    elif args.method == "shap":
        def explainer_fn(s):
            return explainers.shap_explain(s, enc_params, head, args.samples, args.seed)
    elif args.method == "exact":
        def explainer_fn(s):
            return explainers.exact_shapley(s, enc_params, head)
    else:
        raise UsageError(f"unknown method {args.method!r}")

    report = evaluate.stress_test(corpus, explainer_fn, enc_params, head, k_max=args.kmax)
    report.method = args.method
    if args.out:
        evaluate.write_json(report, args.out)
    if args.csv:
        evaluate.write_stress_csv([report], args.csv)
    for k in sorted(report.accuracy):
        print(f"k={k} accuracy={report.accuracy[k]:.4f}")
    return 0


def _aligned_scores(path_a, path_b):
    a = explainers.load_scores(path_a)
    b = {iv.sid: iv for iv in explainers.load_scores(path_b)}
    pairs = [(iv, b[iv.sid]) for iv in a if iv.sid in b]
    if not pairs:
        raise DataFormatError("no shared sentence ids between the score files")
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _cmd_agree(args) -> int:
    va, vb = _aligned_scores(args.a, args.b)
    report = evaluate.agreement_report(va, vb, ks=tuple(range(1, args.k + 1)), thresholds=())
    for k in sorted(report.overlap):
        print(f"top-{k} overlap: {report.overlap[k]:.1f}%")
    if args.out:
        evaluate.write_json(report, args.out)
    return 0


def _cmd_polarity(args) -> int:
    va, vb = _aligned_scores(args.a, args.b)
    thresholds = tuple(float(t) for t in str(args.threshold).split(","))
    report = evaluate.agreement_report(va, vb, ks=(), thresholds=thresholds)
    for t in thresholds:
        mean = report.polarity_mean(t)
        print(f"threshold={t:g} mean polarity agreement: {mean:.1f}% "
              f"({report.polarity_excluded[t]} sentences excluded)")
    if args.out:
        evaluate.write_json(report, args.out)
    return 0


def _cmd_bench(args) -> int:
    embeddings = list(load_embeddings(args.emb))
    if not embeddings:
        raise DataFormatError("empty embedding file")
    head = siamese.load_head(args.head)
    enc_params = _rebuild_encoder(embeddings)
    corpus = _sentences_from_embeddings(embeddings)
    by_sid = {e.sid: e for e in embeddings}
    methods = args.methods.split(",")
    budgets = [int(b) for b in args.budgets.split(",")]
    plex_params = siamese.load_params(args.plex_params) if args.plex_params else None

    reports: list[evaluate.CostReport] = []
    for method in methods:
        for budget in budgets:
            counter = EncodeCounter()
            if method == "plex":
                if plex_params is None:
                    raise UsageError("bench with plex needs --plex-params")

                def explain_fn(s, _budget=budget):
                    emb = encode_toy(s, enc_params, counter=counter)
                    return siamese.plex_explain(emb, plex_params, head=head, counter=counter)
            elif method == "lime":
                def explain_fn(s, _budget=budget):
                    return explainers.lime_explain(s, enc_params, head, _budget, args.seed,
                                                   counter=counter)
            elif method == "shap":
                def explain_fn(s, _budget=budget):
                    return explainers.shap_explain(s, enc_params, head, _budget, args.seed,
                                                   counter=counter)
            else:
                raise UsageError(f"bench does not support method {method!r}")
            times = evaluate.bench(explain_fn, corpus, repeats=args.repeats)
            counter = EncodeCounter()  # count one clean sweep per bucket total
            for s in corpus:
                explain_fn(s)
            per_sentence_passes = counter.encoder_passes / len(corpus)
            for bucket, t in times.items():
                n_words = int(np.mean([s.n_words for s in corpus
                                       if evaluate.length_bucket(s.n_words) == bucket]))
                rep = evaluate.cost_model(method, args.flops_per_token, n_words,
                                          0 if method == "plex" else budget,
                                          siamese_params=plex_params,
                                          measured_passes=int(round(per_sentence_passes)))
                rep.wall_time_s = t
                rep.perturbations = 0 if method == "plex" else budget
                reports.append(rep)
            print(f"{method} budget={budget}: " +
                  ", ".join(f"{bucket}={t * 1e3:.2f}ms" for bucket, t in times.items()))
    if args.out:
        evaluate.write_cost_csv(reports, args.out)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_layer_heatmap(args) -> int:
    import csv as _csv

    embeddings = list(load_embeddings(args.emb))
    if not embeddings:
        raise DataFormatError("empty embedding file")
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["id", "layer", "word_index", "word", "distance"])
        for e in embeddings:
            dmat = layer_distance_matrix(e)
            for r, layer in enumerate(sorted(e.layers)):
                for w in range(e.n_words):
                    writer.writerow([e.sid, layer, w, e.words_text[w], f"{dmat[r, w]:.6f}"])
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="plex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a corpus with the toy encoder or validate bridge output")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--from-bridge", action="store_true",
                   help="input is already interchange JSONL; validate and normalize")
    p.add_argument("--final-only", action="store_true", help="drop per-layer embeddings")
    _toy_flags(p)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("train-head", help="train the classifier head on labelled embeddings")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-loss", type=float, default=1e-4)
    p.set_defaults(fn=_cmd_train_head)

    p = sub.add_parser("build-dataset", help="label every word with an explainer and emit training pairs")
    p.add_argument("--emb", required=True)
    p.add_argument("--head")
    p.add_argument("--explainer", choices=["lime", "shap"], required=True)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--kernel-width", type=float, default=None)
    p.add_argument("--ridge-lambda", type=float, default=1e-3)
    p.add_argument("--masked-preds", default=None,
                   help="tabulated masked predictions (for non-toy embeddings)")
    p.set_defaults(fn=_cmd_build_dataset)

    p = sub.add_parser("train-plex", help="train the Siamese scorer on a pair dataset")
    p.add_argument("--pairs", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--no-dropout", action="store_true")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-out", default=None, help="write the loss history as JSON")
    p.set_defaults(fn=_cmd_train_plex)

    p = sub.add_parser("explain", help="score the words of a sentence or of every embedded sentence")
    p.add_argument("--sentence", default=None)
    p.add_argument("--id", default="s0", help="sentence id used with --sentence")
    p.add_argument("--emb", default=None)
    p.add_argument("--method", choices=["plex", "lime", "shap", "exact"], required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--html", default=None)
    p.add_argument("--ansi", action="store_true")
    p.add_argument("--head", default=None)
    p.add_argument("--plex-params", default=None)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-width", type=float, default=None)
    p.add_argument("--ridge-lambda", type=float, default=1e-3)
    p.add_argument("--masked-preds", default=None)
    p.add_argument("--emit-masks", default=None,
                   help="write the masks this explanation would evaluate, then stop")
    _toy_flags(p)
    p.set_defaults(fn=_cmd_explain)

    p = sub.add_parser("stress", help="deletion stress test against the original predictions")
    p.add_argument("--emb", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--method", choices=["plex", "lime", "shap", "exact"], required=True)
    p.add_argument("--kmax", type=int, default=4)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-width", type=float, default=None)
    p.add_argument("--ridge-lambda", type=float, default=1e-3)
    p.add_argument("--plex-params", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=_cmd_stress)

    p = sub.add_parser("agree", help="top-k overlap between two score files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_agree)

    p = sub.add_parser("polarity", help="sign agreement between two score files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--threshold", default="0,0.01,0.05",
                   help="one value or a comma-separated list")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_polarity)

    p = sub.add_parser("bench", help="wall time and FLOPs across methods and budgets")
    p.add_argument("--emb", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--methods", default="plex,lime")
    p.add_argument("--budgets", default="256,512,1024")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--plex-params", default=None)
    p.add_argument("--flops-per-token", type=float, default=260e6,
                   help="encoder cost per token used by the cost formula")
    p.add_argument("--out", default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("layer-heatmap", help="per-layer CLS-to-word distances as CSV")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_layer_heatmap)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # --config FILE supplies key=value defaults; explicit flags override them
    # because argparse keeps the last occurrence.
    try:
        if "--config" in argv:
            i = argv.index("--config")
            try:
                cfg_path = argv[i + 1]
            except IndexError:
                raise UsageError("--config needs a file argument") from None
            extra = _read_config(cfg_path)
            argv = argv[:1] + extra + argv[1:i] + argv[i + 2:]
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        _emit_error(exc)
        return 1
    except DivergenceError as exc:
        _emit_error(exc)
        return 3
    except (PlexError, ValueError, OSError) as exc:
        _emit_error(exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
