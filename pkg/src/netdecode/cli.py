"""Command-line entry point: generate, train, decode, baseline, bench."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import dataset as ds_mod
from .baselines import ClassifierModel, EndToEndModel, KnnModel
from .bench import (
    ClassifierMethod,
    DecoderMethod,
    EndToEndMethod,
    KnnMethod,
    OracleMethod,
    evaluate,
    report,
)
from .decoder import DecodeConfig, decode, dictionary_build, load_dictionary, save_dictionary
from .errors import DecodeFailure, NetDecodeError
from .network import build_flow_structure, embedded_case, load_network
from .surrogate import Mlp, TrainConfig, load_weights, save_weights, train


def _network(arg):
    """A case path, or ``embedded:<name>`` for a bundled case."""
    if arg.startswith("embedded:"):
        return embedded_case(arg.split(":", 1)[1])
    return load_network(arg)


def _train_config(args):
    return TrainConfig(gamma1=args.gamma1, gamma2=args.gamma2, learning_rate=args.lr, epochs=args.epochs,
                       seed=args.seed, batch_size=args.batch_size, optimizer=args.optimizer,
                       lr_decay=args.lr_decay, normalization=args.normalization,
                       output_init_scale=args.output_init_scale, epsilon_margin=args.epsilon_margin)


def cmd_generate(args):
    net = _network(args.case)
    st = build_flow_structure(net)
    cfg = ds_mod.SamplingConfig(variation=args.variation, sample_count=args.count, seed=args.seed,
                                test_fraction=args.test_fraction)
    data = ds_mod.generate(net, st, cfg)
    ds_mod.save(data, args.out)
    print(json.dumps({"samples": len(data), "train": data.split_index, **data.stats}))
    return 0


def cmd_train(args):
    net = _network(args.case)
    data = ds_mod.load(args.data, net)
    loads, J, mu, active = data.arrays("train")
    hidden = [int(w) for w in args.arch.split(",") if w]
    mlp = Mlp.init([net.n, *hidden, 1], seed=args.seed)
    cfg = _train_config(args)
    mlp, history = train(mlp, loads, J, mu, active, net.cost, cfg)
    save_weights(mlp, args.out, extra={"train_config": cfg.__dict__, "network_hash": net.content_hash()})
    last = history[-1] if history else {}
    print(json.dumps({"epochs": len(history), "final": last.get("train", {}), "holdout": last.get("holdout", {})}))
    if args.dict:
        d = dictionary_build(net, build_flow_structure(net), mu)
        save_dictionary(d, args.dict)
    return 0


def cmd_decode(args):
    net = _network(args.case)
    st = build_flow_structure(net)
    mlp = load_weights(args.model)
    data = ds_mod.load(args.data, net)
    samples = data.test if args.split == "test" else data.samples
    config = DecodeConfig(epsilon=args.epsilon, dictionary_enabled=bool(args.dict))
    dictionary = load_dictionary(args.dict, net, st) if args.dict else None
    failures = 0
    with open(args.out, "w") as fh:
        for i, s in enumerate(samples):
            rec = {"index": i}
            try:
                sol = decode(net, st, s.load, mlp, config, dictionary)
                rec.update(x=sol.x.tolist(), f=sol.f.tolist(), objective=sol.objective,
                           active=np.flatnonzero(sol.active.to_bits()).tolist(),
                           provenance=sol.active.provenance.value, completed=sol.completed,
                           core_time=sol.core_time)
            except DecodeFailure as exc:
                failures += 1
                rec.update(error=type(exc.cause).__name__ if exc.cause else "DecodeFailure", message=str(exc))
            fh.write(json.dumps(rec) + "\n")
    print(json.dumps({"decoded": len(samples) - failures, "failures": failures}))
    return 0


def _fit_baseline(method, net, train_samples, seed, epochs):
    loads, _, _, active = ds_mod.stack_samples(train_samples)
    cfg = TrainConfig(optimizer="adam", learning_rate=1e-3, epochs=epochs, seed=seed)
    st = build_flow_structure(net)
    if method == "knn":
        return KnnMethod(net, st, KnnModel(loads, active))
    if method == "e2e":
        sols = np.array([np.concatenate([s.x, s.f]) for s in train_samples])
        return EndToEndMethod(net, st, EndToEndModel.fit(loads, sols, net.n, config=cfg))
    if method == "clf":
        return ClassifierMethod(net, st, ClassifierModel.fit(loads, active, config=cfg))
    raise NetDecodeError(f"unknown baseline {method!r}")


def cmd_baseline(args):
    net = _network(args.case)
    st = build_flow_structure(net)
    data = ds_mod.load(args.data, net)
    method = _fit_baseline(args.method, net, data.train, args.seed, args.epochs)
    met = evaluate(method, data.test, net, st, variation=data.config.variation.value)
    report([met], args.out, config={"method": args.method, "data": args.data, "seed": args.seed})
    print(json.dumps({"method": met.method, "feasibility_ratio": met.feasibility_ratio}))
    return 0


def cmd_bench(args):
    net = _network(args.case)
    st = build_flow_structure(net)
    data = ds_mod.load(args.data, net)
    train_samples = ds_mod.load(args.train_data, net).samples if args.train_data else data.train
    test = data.test
    variation = data.config.variation.value
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    metrics = []
    for name in methods:
        if name == "oracle":
            method = OracleMethod(net, st)
        elif name == "decoder":
            if not args.model:
                raise NetDecodeError("--model is required for the decoder")
            dictionary = load_dictionary(args.dict, net, st) if args.dict else None
            method = DecoderMethod(net, st, load_weights(args.model),
                                   DecodeConfig(epsilon=args.epsilon, dictionary_enabled=bool(args.dict)),
                                   dictionary)
        else:
            method = _fit_baseline(name, net, train_samples, args.seed, args.epochs)
        metrics.append(evaluate(method, test, net, st, variation=variation))
    report(metrics, args.out, config=vars(args), counters=data.stats)
    failed = []
    for met in metrics:
        print(f"{met.method:8s} feasibility {met.feasibility_ratio:6.2f}%  gap {met.mean_cost_gap:+.4f}  "
              f"gen {met.binding_gen_accuracy:6.2f}%  line {met.binding_line_accuracy:6.2f}%")
        if args.assert_feasibility is not None and met.method == "decoder" \
                and met.feasibility_ratio < args.assert_feasibility:
            failed.append(f"decoder feasibility {met.feasibility_ratio:.2f} < {args.assert_feasibility}")
        if args.assert_gap is not None and met.method == "decoder" \
                and not met.mean_cost_gap <= args.assert_gap:
            failed.append(f"decoder cost gap {met.mean_cost_gap:.4f} > {args.assert_gap}")
    for msg in failed:
        print(f"ASSERT FAILED: {msg}", file=sys.stderr)
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="netdecode", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample loads and label them with the oracle")
    g.add_argument("--case", required=True)
    g.add_argument("--variation", default="low", choices=["low", "med", "medium", "high"])
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit the value-function surrogate")
    t.add_argument("--case", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--arch", default="100,30,20")
    t.add_argument("--gamma1", type=float, default=TrainConfig.gamma1)
    t.add_argument("--gamma2", type=float, default=TrainConfig.gamma2)
    t.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    t.add_argument("--lr-decay", type=float, default=TrainConfig.lr_decay)
    t.add_argument("--optimizer", default=TrainConfig.optimizer, choices=["sgd", "adam"])
    t.add_argument("--normalization", default=TrainConfig.normalization, choices=["per_input", "pooled"])
    t.add_argument("--output-init-scale", type=float, default=TrainConfig.output_init_scale)
    t.add_argument("--epsilon-margin", type=float, default=TrainConfig.epsilon_margin)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dict", help="also build a dictionary from the training duals")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="decode a dataset with a trained surrogate")
    d.add_argument("--case", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--dict")
    d.add_argument("--epsilon", type=float, default=DecodeConfig.epsilon)
    d.add_argument("--split", default="test", choices=["test", "all"])
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    b = sub.add_parser("baseline", help="fit and score one comparison method")
    b.add_argument("--case", required=True)
    b.add_argument("--method", required=True, choices=["knn", "e2e", "clf"])
    b.add_argument("--data", required=True)
    b.add_argument("--epochs", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    r = sub.add_parser("bench", help="score several methods and write a report")
    r.add_argument("--case", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--train-data", help="training set for baselines (default: train split of --data)")
    r.add_argument("--methods", default="decoder,knn,e2e,clf")
    r.add_argument("--model")
    r.add_argument("--dict")
    r.add_argument("--epsilon", type=float, default=DecodeConfig.epsilon)
    r.add_argument("--epochs", type=int, default=50)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--assert-feasibility", type=float, help="minimum decoder feasibility percentage")
    r.add_argument("--assert-gap", type=float, help="maximum decoder mean cost gap (fraction)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NetDecodeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
