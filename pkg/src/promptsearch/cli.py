"""Command-line surface.

Subcommands cover the full workflow: ``train-toy`` builds a synthetic
task and fits the toy model, ``select-labels`` picks label tokens,
``search`` finds triggers, ``eval`` scores prompts, ``grid`` and
``lowdata`` run the sweep protocols, ``perturb`` rewrites fact contexts,
and ``serve`` exposes a local model over the wire protocol.

A JSON config file may supply any long-flag value (keys use underscores);
explicit flags win over the file. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 oracle/backend error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data as data_io
from . import evaluation as evl
from . import labels as label_mod
from . import search as search_mod
from .errors import ConfigError, DataError, OracleError, PromptSearchError
from .oracle import MlmOracle, ToyMlm, train_toy
from .remote import RemoteOracle
from .server import OracleServer
from .templates import Template, TriggerSlot, load_template_file, parse_template, render_prompt
from .vocab import Vocabulary, build_token_filter

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ORACLE = 4


# ----------------------------------------------------------------------
# shared plumbing


def _comma_ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(part) for part in str(text).split(",") if part != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}") from exc


def _apply_config_file(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {args.config} must hold a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)


def _defaults(args: argparse.Namespace, defaults: dict) -> None:
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _open_oracle(spec: str, vocab_path=None) -> MlmOracle:
    if spec is None:
        raise ConfigError("--oracle is required")
    kind, _, rest = str(spec).partition(":")
    if kind == "toy":
        if not rest:
            raise ConfigError("toy oracle needs a model path: toy:PATH")
        try:
            return ToyMlm.load(rest)
        except (OSError, ValueError, KeyError) as exc:
            raise OracleError(f"cannot load toy model {rest}: {exc}") from exc
    if kind == "remote":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError("remote oracle spec must be remote:HOST:PORT")
        if vocab_path is None:
            raise ConfigError("remote oracle needs --vocab FILE for the shared vocabulary")
        return RemoteOracle(host, int(port), Vocabulary.from_file(vocab_path))
    raise ConfigError(f"unknown oracle spec {spec!r}")


def _load_template(path, index: int = 0) -> Template:
    templates = load_template_file(path)
    if not (0 <= index < len(templates)):
        raise ConfigError(f"template index {index} out of range for {path}")
    return templates[index]


def _load_dataset(args) -> data_io.ClassificationDataset:
    if args.data is None:
        raise ConfigError("--data is required")
    return data_io.load_classification(args.data, fmt=args.data_format, header=args.header)


def _out_path(args, filename: str):
    import pathlib

    out = pathlib.Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out / filename


def _search_config(args, vocab: Vocabulary) -> search_mod.SearchConfig:
    token_filter = build_token_filter(
        vocab,
        block_capitalized=bool(args.block_capitalized),
        block_specials=True,
    )
    return search_mod.SearchConfig(
        candidate_k=args.candidate_k,
        trigger_len=args.trigger_len,
        iterations=args.iterations,
        candidate_batch=args.candidate_batch,
        eval_batch=args.eval_batch,
        seed=args.seed,
        token_filter=token_filter,
        include_incumbent=args.include_incumbent,
        position_order=args.position_order,
        max_length=args.max_length,
    )


def _fit_labels(
    oracle: MlmOracle,
    template: Template,
    train_examples,
    classes,
    label_k: int,
    args,
) -> label_mod.LabelTokenSet:
    prompts = label_mod.probe_prompts(template, train_examples, oracle.vocab, args.max_length)
    hiddens = label_mod.collect_mask_hiddens(oracle, prompts)
    classifier = label_mod.fit_logistic(
        hiddens,
        l2=args.l2,
        steps=args.fit_steps,
        learning_rate=args.fit_lr,
        seed=args.seed,
        classes=tuple(classes),
        center=bool(args.center),
    )
    token_filter = build_token_filter(
        oracle.vocab, block_capitalized=bool(args.block_capitalized), block_specials=True
    )
    return label_mod.select_label_sets(
        classifier, oracle.embedding_view(), label_k, token_filter, oracle.vocab
    )


def _write_history_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "dev_log_likelihood", "dev_accuracy", "position",
             "accepted_token", "eval_metric"]
        )
        for row in history:
            writer.writerow(
                [row.iteration, repr(row.dev_log_likelihood), repr(row.dev_accuracy),
                 "" if row.position is None else row.position,
                 "" if row.accepted_token is None else row.accepted_token,
                 "" if row.eval_metric is None else repr(row.eval_metric)]
            )


SHARED_DEFAULTS = {
    "seed": 0,
    "out": ".",
    "data_format": data_io.TSV_SENTENCE_LABEL,
    "header": False,
    "template_index": 0,
    "max_length": None,
    "block_capitalized": False,
}

SEARCH_DEFAULTS = {
    "candidate_k": 10,
    "trigger_len": 3,
    "iterations": 50,
    "candidate_batch": 16,
    "eval_batch": 16,
    "include_incumbent": True,
    "position_order": search_mod.ROUND_ROBIN,
}

FIT_DEFAULTS = {"label_k": 3, "l2": 1e-3, "fit_steps": 300, "fit_lr": 0.5, "center": False}


# ----------------------------------------------------------------------
# commands


def cmd_train_toy(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, "n_examples": 200, "dim": 8, "steps": 300,
                     "lr": 0.5, "n_pos": 3, "n_neg": 3, "n_neutral": 12, "sentence_len": 6})
    spec = data_io.SyntheticSpec(
        n_pos=args.n_pos, n_neg=args.n_neg, n_neutral=args.n_neutral,
        sentence_len=args.sentence_len,
    )
    task = data_io.gen_synthetic_sentiment(spec, args.n_examples, args.seed)
    model = train_toy(
        corpus=task.corpus,
        vocab=task.vocab,
        dim=args.dim,
        steps=args.steps,
        learning_rate=args.lr,
        seed=args.seed,
    )
    model.save(_out_path(args, "model.npz"))
    task.vocab.to_file(_out_path(args, "vocab.json"))
    with open(_out_path(args, "data.tsv"), "w", encoding="utf-8") as fh:
        for inputs, label in task.dataset.examples:
            fh.write(f"{inputs['sent']}\t{label}\n")
    print(f"trained toy model on {len(task.dataset)} examples -> {args.out}")
    return EXIT_OK


def cmd_select_labels(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, **FIT_DEFAULTS})
    oracle = _open_oracle(args.oracle, args.vocab)
    template = _load_template(args.template, args.template_index)
    dataset = _load_dataset(args)
    train, _dev = data_io.split(dataset, "80-20", args.seed)
    labels = _fit_labels(oracle, template, train.examples, dataset.classes, args.label_k, args)
    labels.to_file(_out_path(args, "labels.json"), oracle.vocab)
    overlaps = labels.overlapping_classes()
    if overlaps:
        print(f"warning: label sets overlap for {overlaps}", file=sys.stderr)
    print(f"selected {args.label_k} label tokens per class -> {args.out}")
    return EXIT_OK


def cmd_search(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, **SEARCH_DEFAULTS})
    oracle = _open_oracle(args.oracle, args.vocab)
    template = _load_template(args.template, args.template_index)
    dataset = _load_dataset(args)
    labels = label_mod.LabelTokenSet.from_file(args.labels)
    train, dev = data_io.split(dataset, "80-20", args.seed)
    config = _search_config(args, oracle.vocab)
    stream = data_io.ExampleStream(train.examples, args.seed)
    resume = search_mod.load_checkpoint(args.resume) if args.resume else None
    result = search_mod.run_search(
        oracle, stream, list(dev.examples), labels, template, config,
        checkpoint_path=args.checkpoint, resume=resume,
    )
    search_mod.write_prompt_artifact(
        _out_path(args, "prompt.json"),
        template=template,
        triggers=result.best_triggers,
        labels=labels,
        vocab=oracle.vocab,
        dev_metric=result.best_dev_metric,
        dev_accuracy=result.best_dev_accuracy,
        config=config,
    )
    _write_history_csv(_out_path(args, "history.csv"), result.history)
    surfaces = " ".join(oracle.vocab.string_of(t) for t in result.best_triggers)
    print(
        f"best triggers [{surfaces}] dev_ll={result.best_dev_metric:.4f} "
        f"dev_acc={result.best_dev_accuracy:.4f}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, "task": "classification", "perturbed": False,
                     "max_per_relation": 1000})
    oracle = _open_oracle(args.oracle, args.vocab)
    artifact = search_mod.load_prompt_artifact(args.artifact)
    if artifact["vocab_fingerprint"] != oracle.vocab.fingerprint():
        raise ConfigError("prompt artifact was built for a different vocabulary")
    template = parse_template(artifact["template"])
    triggers = [int(t) for t in artifact["triggers"]["ids"]]
    labels = label_mod.LabelTokenSet(
        classes=tuple(artifact["label_sets"]["classes"]),
        sets={k: tuple(v) for k, v in artifact["label_sets"]["sets"].items()},
    )

    if args.task == "classification":
        dataset = _load_dataset(args)
        prompts = [
            (render_prompt(template, inputs, triggers, oracle.vocab, args.max_length), label)
            for inputs, label in dataset.examples
        ]
        report = evl.classification_metrics(oracle, prompts, labels)
        evl.write_classification_csv(_out_path(args, "classification_report.csv"), report)
        evl.write_summary_json(
            _out_path(args, "report.json"),
            {"task": "classification", "accuracy": report.accuracy, "n": report.n,
             "per_class_precision": report.per_class_precision},
        )
        print(f"accuracy {report.accuracy:.4f} on {report.n} examples")
        return EXIT_OK

    facts = data_io.load_facts(
        args.data, vocab=oracle.vocab, max_per_relation=args.max_per_relation, seed=args.seed
    )
    if args.task == "facts":
        reports = evl.fact_rank_reports(
            oracle, template, triggers, dict(facts.facts_by_relation), args.max_length
        )
        evl.write_rank_csv(_out_path(args, "rank_report.csv"), reports)
        macro = reports["macro"]
        evl.write_summary_json(
            _out_path(args, "report.json"),
            {"task": "facts",
             "macro": {"mrr": macro.mrr, "p_at_1": macro.p_at_1,
                       "p_at_10": macro.p_at_10, "n": macro.n}},
        )
        print(f"macro MRR {macro.mrr:.4f} P@1 {macro.p_at_1:.4f} P@10 {macro.p_at_10:.4f}")
        return EXIT_OK

    if args.task == "re":
        predictor = evl.oracle_top_token_predictor(oracle, template, triggers, args.max_length)
        all_facts = facts.all_facts
        summary = {"task": "re", "original_accuracy": evl.re_accuracy(predictor, all_facts)}
        if args.perturbed:
            perturbed = evl.perturb_facts(all_facts, args.seed)
            summary["perturbed_accuracy"] = evl.re_accuracy(predictor, perturbed)
        evl.write_summary_json(_out_path(args, "report.json"), summary)
        parts = [f"original {summary['original_accuracy']:.4f}"]
        if args.perturbed:
            parts.append(f"perturbed {summary['perturbed_accuracy']:.4f}")
        print("credit-rule accuracy: " + ", ".join(parts))
        return EXIT_OK
    raise ConfigError(f"unknown eval task {args.task!r}")


def _template_with_trigger_len(template: Template, length: int) -> Template:
    """Rebuild a template with ``length`` trigger slots in place of its run.

    Grid cells vary trigger length, so the base template's contiguous
    trigger block is stretched or shrunk; non-contiguous blocks are
    rejected because the intent would be ambiguous.
    """
    positions = [i for i, seg in enumerate(template.segments) if isinstance(seg, TriggerSlot)]
    if not positions:
        raise ConfigError("template has no trigger slots to resize")
    if positions != list(range(positions[0], positions[-1] + 1)):
        raise ConfigError("grid needs the template's trigger slots to be contiguous")
    head = template.segments[: positions[0]]
    tail = template.segments[positions[-1] + 1 :]
    middle = tuple(TriggerSlot(i) for i in range(length))
    return Template(head + middle + tail)


def _run_cell(oracle_factory, template, dataset, cell, args):
    candidate_k, label_k, trigger_len = cell
    oracle = oracle_factory()
    cell_template = _template_with_trigger_len(template, trigger_len)
    cell_args = argparse.Namespace(**vars(args))
    cell_args.candidate_k = candidate_k
    cell_args.trigger_len = trigger_len
    train, dev = data_io.split(dataset, "80-20", args.seed)
    labels = _fit_labels(
        oracle, cell_template, train.examples, dataset.classes, label_k, cell_args
    )
    config = _search_config(cell_args, oracle.vocab)
    stream = data_io.ExampleStream(train.examples, args.seed)
    result = search_mod.run_search(
        oracle, stream, list(dev.examples), labels, cell_template, config
    )
    return {
        "labels": labels,
        "template": cell_template,
        "config": config,
        "result": result,
    }


def cmd_grid(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, **SEARCH_DEFAULTS, **FIT_DEFAULTS, "workers": 1})
    if not (args.candidate_k_list and args.label_k_list and args.trigger_len_list):
        raise ConfigError("grid needs non-empty --candidate-k-list, "
                          "--label-k-list, and --trigger-len-list")
    oracle_probe = _open_oracle(args.oracle, args.vocab)
    template = _load_template(args.template, args.template_index)
    dataset = _load_dataset(args)

    def oracle_factory():
        # A toy oracle is immutable and shared; remote cells get their own link.
        if str(args.oracle).startswith("toy:"):
            return oracle_probe
        return _open_oracle(args.oracle, args.vocab)

    cells = list(
        itertools.product(
            _comma_ints(args.candidate_k_list),
            _comma_ints(args.label_k_list),
            _comma_ints(args.trigger_len_list),
        )
    )
    outcomes: list[dict | Exception] = [None] * len(cells)
    if args.workers and args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            futures = [
                pool.submit(_run_cell, oracle_factory, template, dataset, cell, args)
                for cell in cells
            ]
            for i, future in enumerate(futures):
                try:
                    outcomes[i] = future.result()
                except PromptSearchError as exc:
                    outcomes[i] = exc
    else:
        for i, cell in enumerate(cells):
            try:
                outcomes[i] = _run_cell(oracle_factory, template, dataset, cell, args)
            except PromptSearchError as exc:
                outcomes[i] = exc

    with open(_out_path(args, "grid.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["candidate_k", "label_k", "trigger_len",
                         "dev_accuracy", "dev_log_likelihood", "status"])
        for cell, outcome in zip(cells, outcomes):
            if isinstance(outcome, Exception):
                writer.writerow([*cell, "", "", f"error: {outcome}"])
            else:
                result = outcome["result"]
                writer.writerow(
                    [*cell, repr(result.best_dev_accuracy),
                     repr(result.best_dev_metric), "ok"]
                )

    best_index = None
    for i, outcome in enumerate(outcomes):
        if isinstance(outcome, Exception):
            continue
        if best_index is None:
            best_index = i
            continue
        a, b = outcomes[i]["result"], outcomes[best_index]["result"]
        if (a.best_dev_accuracy, a.best_dev_metric) > (
            b.best_dev_accuracy, b.best_dev_metric
        ):
            best_index = i
    if best_index is None:
        print("all grid cells failed", file=sys.stderr)
        return EXIT_ORACLE
    best = outcomes[best_index]
    search_mod.write_prompt_artifact(
        _out_path(args, "best_prompt.json"),
        template=best["template"],
        triggers=best["result"].best_triggers,
        labels=best["labels"],
        vocab=oracle_probe.vocab,
        dev_metric=best["result"].best_dev_metric,
        dev_accuracy=best["result"].best_dev_accuracy,
        config=best["config"],
    )
    ck, lk, tl = cells[best_index]
    print(
        f"best cell candidate_k={ck} label_k={lk} trigger_len={tl} "
        f"dev_acc={best['result'].best_dev_accuracy:.4f}"
    )
    return EXIT_OK


def cmd_lowdata(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, **SEARCH_DEFAULTS, **FIT_DEFAULTS,
                     "sizes": [10, 100, 1000], "repeats": 10})
    oracle = _open_oracle(args.oracle, args.vocab)
    template = _load_template(args.template, args.template_index)
    dataset = _load_dataset(args)
    train, dev = data_io.split(dataset, "80-20", args.seed)
    sizes = _comma_ints(args.sizes)
    subsets = data_io.subsample(train, sizes, args.repeats, args.seed)

    rows = []
    for size in sizes:
        for repeat, subset in enumerate(subsets[size]):
            child_seed = int(
                np.random.SeedSequence([args.seed, size, repeat]).generate_state(1)[0]
            )
            run_args = argparse.Namespace(**vars(args))
            run_args.seed = child_seed
            labels = _fit_labels(
                oracle, template, subset.examples, dataset.classes, args.label_k, run_args
            )
            config = _search_config(run_args, oracle.vocab)
            stream = data_io.ExampleStream(subset.examples, child_seed)
            result = search_mod.run_search(
                oracle, stream, list(dev.examples), labels, template, config
            )
            rows.append((size, repeat, result.best_dev_accuracy, result.best_dev_metric))

    with open(_out_path(args, "lowdata_raw.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "repeat", "dev_accuracy", "dev_log_likelihood"])
        for size, repeat, acc, ll in rows:
            writer.writerow([size, repeat, repr(acc), repr(ll)])

    with open(_out_path(args, "lowdata_summary.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "min", "mean", "max"])
        for size in sizes:
            accs = [acc for s, _, acc, _ in rows if s == size]
            writer.writerow(
                [size, repr(min(accs)), repr(sum(accs) / len(accs)), repr(max(accs))]
            )
    print(f"low-data protocol complete: {len(rows)} searches -> {args.out}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, "max_per_relation": None})
    vocab = Vocabulary.from_file(args.vocab) if args.vocab else None
    facts = data_io.load_facts(
        args.data, vocab=vocab, max_per_relation=args.max_per_relation, seed=args.seed
    )
    perturbed = evl.perturb_facts(facts.all_facts, args.seed)
    out_file = _out_path(args, "perturbed.jsonl")
    with open(out_file, "w", encoding="utf-8") as fh:
        for fact in perturbed:
            fh.write(json.dumps({
                "sub": fact.subject,
                "rel": fact.relation,
                "obj": fact.object_canonical,
                "obj_token": fact.object_token,
                "contexts": list(fact.context_sentences),
                "surfaces": sorted(fact.surface_forms),
            }, sort_keys=True) + "\n")
    print(f"perturbed {len(perturbed)} facts -> {out_file}")
    return EXIT_OK


def cmd_serve(args) -> int:
    _defaults(args, {**SHARED_DEFAULTS, "bind": "127.0.0.1:7690"})
    oracle = _open_oracle(args.oracle, args.vocab)
    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError("--bind must be HOST:PORT")
    if args.vocab_out:
        oracle.vocab.to_file(args.vocab_out)
        print(f"wrote vocabulary to {args.vocab_out}")
    server = OracleServer(oracle, host, int(port))
    print(f"serving on {server.host}:{server.port}", flush=True)
    server.serve_forever()
    return EXIT_OK


# ----------------------------------------------------------------------
# parser


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file supplying any flag value")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--oracle", help="toy:PATH or remote:HOST:PORT")
    p.add_argument("--vocab", help="vocabulary JSON (required for remote oracles)")
    p.add_argument("--template", help="template file")
    p.add_argument("--template-index", type=int)
    p.add_argument("--data", help="dataset file")
    p.add_argument("--data-format", choices=[data_io.TSV_SENTENCE_LABEL, data_io.PAIR_TSV])
    p.add_argument("--header", action=argparse.BooleanOptionalAction)
    p.add_argument("--max-length", type=int)
    p.add_argument("--block-capitalized", action=argparse.BooleanOptionalAction)


def _add_fit(p: argparse.ArgumentParser) -> None:
    p.add_argument("--label-k", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--fit-steps", type=int)
    p.add_argument("--fit-lr", type=float)
    p.add_argument("--center", action=argparse.BooleanOptionalAction)


def _add_search(p: argparse.ArgumentParser) -> None:
    p.add_argument("--candidate-k", type=int)
    p.add_argument("--trigger-len", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--candidate-batch", type=int)
    p.add_argument("--eval-batch", type=int)
    p.add_argument("--include-incumbent", action=argparse.BooleanOptionalAction)
    p.add_argument("--position-order",
                   choices=[search_mod.ROUND_ROBIN, search_mod.RANDOM_ORDER])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prompt-search",
        description="Gradient-guided prompt search over masked language models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="generate the synthetic task and fit a toy model")
    _add_shared(p)
    p.add_argument("--n-examples", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-pos", type=int)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--n-neutral", type=int)
    p.add_argument("--sentence-len", type=int)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("select-labels", help="pick label tokens per class")
    _add_shared(p)
    _add_fit(p)
    p.set_defaults(func=cmd_select_labels)

    p = sub.add_parser("search", help="run the trigger search")
    _add_shared(p)
    _add_search(p)
    p.add_argument("--labels", help="label token set JSON")
    p.add_argument("--checkpoint", help="write checkpoints to this file")
    p.add_argument("--resume", help="resume from this checkpoint file")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="evaluate a prompt artifact")
    _add_shared(p)
    p.add_argument("--artifact", required=True, help="prompt artifact JSON")
    p.add_argument("--task", choices=["classification", "facts", "re"])
    p.add_argument("--perturbed", action=argparse.BooleanOptionalAction)
    p.add_argument("--max-per-relation", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="sweep candidate_k x label_k x trigger_len")
    _add_shared(p)
    _add_fit(p)
    _add_search(p)
    p.add_argument("--candidate-k-list", type=_comma_ints)
    p.add_argument("--label-k-list", type=_comma_ints)
    p.add_argument("--trigger-len-list", type=_comma_ints)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("lowdata", help="train-size sweep with repeats")
    _add_shared(p)
    _add_fit(p)
    _add_search(p)
    p.add_argument("--sizes", type=_comma_ints)
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_lowdata)

    p = sub.add_parser("perturb", help="rewrite fact objects and contexts")
    _add_shared(p)
    p.add_argument("--max-per-relation", type=int)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("serve", help="serve an oracle over the wire protocol")
    _add_shared(p)
    p.add_argument("--bind", help="HOST:PORT")
    p.add_argument("--vocab-out", help="also export the vocabulary JSON here")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
