"""Command-line entry point: ``icnnvolt <subcommand> ...``.

Every subcommand takes ``--seed``, ``--threads``, ``--config`` and
``--out-dir``. Option values come from the command line first, then the
JSON config file, then built-in defaults. Relative output paths are
placed under ``--out-dir``, and each run leaves a ``*.manifest.json``
next to its main output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import baseline as bl
from . import distributed as ds
from . import icnn, maxaffine
from . import regulate as rg
from . import train as tr
from .errors import IcnnVoltError
from .grid import Dataset, LoadProfileConfig, Network, generate_dataset, make_test_feeder

logger = logging.getLogger("icnnvolt")

DEFAULTS = {
    "kind": "path_13",
    "n": None,
    "samples": 8000,
    "iterations": 20_000,
    "learning_rate": 0.2,
    "batch_size": 64,
    "validation_fraction": 0.2,
    "hidden": None,
    "activation": "relu",
    "qmax": 0.03,
    "step_size": 0.05,
    "grad_tol": 1e-6,
    "max_iter": 5000,
    "delta": 1e-3,
    "rounds": 1000,
    "penalty": 1.0,
    "instance": 0,
    "grid_points": 21,
    "pieces": 4,
    "enum_samples": 100_000,
    "output": 0,
    "n_train": 8000,
    "n_test": 500,
    "n_distributed": 5,
}


def fmt(x):
    """Shortest round-trip text for a float (17 significant digits at most)."""
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_numeric_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))


@dataclass
class RunManifest:
    command: str
    argv: list
    cwd: str
    config: dict
    seed: int
    inputs: dict
    outputs: dict
    version: str = __version__
    timings: dict = field(default_factory=dict)

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, default=_jsonable))

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def rerun_manifest(path):
    """Run the command recorded in a manifest again, from its working directory."""
    m = RunManifest.load(path)
    prev = os.getcwd()
    os.chdir(m.cwd)
    try:
        return main(m.argv)
    finally:
        os.chdir(prev)


class Context:
    """Resolved options, output placement and manifest bookkeeping for one run."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.config = {}
        if args.config:
            self.config = json.loads(Path(args.config).read_text())
        self.out_dir = Path(args.out_dir or self.config.get("out_dir", "."))
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.used = {}
        self.inputs = {}
        self.outputs = {}
        self.timings = {}

    @property
    def seed(self):
        return int(self.get("seed", 0))

    def get(self, name, default=None):
        val = getattr(self.args, name, None)
        if val is None:
            val = self.config.get(name)
        if val is None:
            val = DEFAULTS.get(name, default)
        self.used[name] = val
        return val

    def input(self, name):
        val = self.get(name)
        if val is None:
            raise ValueError(f"--{name.replace('_', '-')} is required")
        self.inputs[name] = str(val)
        return Path(val)

    def output(self, name, default=None):
        val = self.get(name, default)
        if val is None:
            raise ValueError(f"--{name.replace('_', '-')} is required")
        path = Path(val)
        if not path.is_absolute():
            path = self.out_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs[name] = str(path)
        return path

    def profile(self):
        return LoadProfileConfig(**self.config.get("profile", {}))

    def write_manifest(self, path):
        RunManifest(self.args.command, self.argv, os.getcwd(), dict(self.used), self.seed,
                    self.inputs, self.outputs, timings=self.timings).save(path)


def _regulate_config(ctx, lo, hi):
    return rg.RegulateConfig(step_size=float(ctx.get("step_size")), grad_tol=float(ctx.get("grad_tol")),
                             max_iter=int(ctx.get("max_iter")), q_lower=lo, q_upper=hi)


def _box(ctx, q0):
    return rg.reactive_box(q0, qmax=float(ctx.get("qmax")))


def _per_bus(prefix, n):
    return [f"{prefix}_{i}" for i in range(1, n + 1)]


# -- subcommands --------------------------------------------------------------


def cmd_gen_network(ctx):
    n = ctx.get("n")
    net = make_test_feeder(ctx.get("kind"), n=None if n is None else int(n), seed=ctx.seed)
    out = ctx.output("out", "network.json")
    net.save(out)
    print(f"wrote {net.n_buses}-bus network to {out}")
    return out


def cmd_gen_data(ctx):
    net = Network.load(ctx.input("net"))
    profile = ctx.profile()
    if ctx.get("uncontrolled"):
        profile = profile.uncontrolled()
    data = generate_dataset(net, profile, int(ctx.get("samples")), ctx.seed)
    out = ctx.output("out", "data.csv")
    data.to_csv(out)
    print(f"wrote {len(data)} rows ({data.n_rejected} redrawn) to {out}")
    return out


def _train_config(ctx, project=True):
    return tr.TrainConfig(learning_rate=float(ctx.get("learning_rate")),
                          batch_size=int(ctx.get("batch_size")),
                          n_iterations=int(ctx.get("iterations")), seed=ctx.seed,
                          validation_fraction=float(ctx.get("validation_fraction")),
                          project=project)


def _write_loss(path, curve):
    write_csv(path, ["iter", "loss"], ([i, float(v)] for i, v in enumerate(curve)))


def cmd_train(ctx):
    data = Dataset.from_csv(ctx.input("data"))
    if ctx.get("net"):
        net = Network.load(ctx.input("net"))
        if net.n_buses != data.n_buses:
            raise ValueError(f"data has {data.n_buses} buses, network has {net.n_buses}")
    hidden = ctx.get("hidden")
    if isinstance(hidden, str):
        hidden = [int(h) for h in hidden.split(",") if h]
    act = icnn.Activation(ctx.get("activation"))
    cfg = _train_config(ctx, project=not ctx.get("unconstrained"))
    t = time.perf_counter()
    rep = tr.fit_icnn(data, cfg, hidden=hidden, activation=act)
    ctx.timings["train_s"] = time.perf_counter() - t
    out = ctx.output("out", "model.json")
    rep.final_model.save(out)
    if ctx.get("loss_csv"):
        _write_loss(ctx.output("loss_csv"), rep.train_loss_curve)
    print(f"held-out MAE {fmt(rep.val_mae)} p.u. ({rep.val_mae_pct:.4f}%)")
    return out


def _write_regulation(path, results, n, q_key="q_star"):
    header = (["instance"] + _per_bus("q", n) + _per_bus("pred", n) + _per_bus("real", n)
              + ["iterations", "converged", "objective"])
    rows = []
    for k, r in enumerate(results):
        real = r.realized_deviation if r.realized_deviation is not None else np.full(n, np.nan)
        rows.append([k] + [float(v) for v in r.q_star] + [float(v) for v in r.predicted_deviation]
                    + [float(v) for v in real] + [r.iterations, int(r.converged), float(r.objective)])
    write_csv(path, header, rows)


def _realized(net, P, results):
    from .grid import solve_voltages

    Q = np.array([r.q_star for r in results])
    v, _ = solve_voltages(net, P, Q)
    for r, row in zip(results, np.abs(v - net.slack_voltage)):
        r.realized_deviation = row


def cmd_regulate(ctx):
    model = icnn.IcnnModel.load(ctx.input("model"))
    net = Network.load(ctx.input("net"))
    inst = Dataset.from_csv(ctx.input("instances"))
    lo, hi = _box(ctx, inst.q)
    t = time.perf_counter()
    res = rg.regulate_batch(model, inst.p, inst.q, _regulate_config(ctx, lo, hi), net=net)
    ctx.timings["per_instance_s"] = (time.perf_counter() - t) / len(inst)
    out = ctx.output("out", "regulated.csv")
    _write_regulation(out, res, inst.n_buses)
    fr = rg.evaluate_regulation(net, inst.p, np.array([r.q_star for r in res]))
    print(f"violations >3%: {fr[0]:.4f}  >5%: {fr[1]:.4f}")
    return out


def _load_graph(ctx, net):
    g = ctx.get("graph")
    if g is None or g == "tree":
        return ds.CommGraph.from_network(net)
    if g == "ring":
        return ds.CommGraph.ring(net.n_buses)
    ctx.inputs["graph"] = str(g)
    return ds.CommGraph.load(g)


def cmd_distributed(ctx):
    model = icnn.IcnnModel.load(ctx.input("model"))
    net = Network.load(ctx.input("net"))
    inst = Dataset.from_csv(ctx.input("instances"))
    k = int(ctx.get("instance"))
    p, q0 = inst.p[k], inst.q[k]
    lo, hi = _box(ctx, q0)
    cfg = ds.DistributedConfig(penalty=float(ctx.get("penalty")), consensus_tol=float(ctx.get("delta")),
                               max_rounds=int(ctx.get("rounds")),
                               subproblem=_regulate_config(ctx, lo, hi))
    t = time.perf_counter()
    res = ds.run_distributed(model, p, _load_graph(ctx, net), cfg, q0=q0)
    ctx.timings["run_s"] = time.perf_counter() - t
    out = ctx.output("out", "distributed.csv")
    write_csv(out, ["round", "gap", "objective"],
              ([t + 1, g, o] for t, (g, o) in enumerate(zip(res.gap_trace, res.objective_trace))))
    agents_path = out.with_name(out.stem + "_agents.csv")
    ctx.outputs["agents"] = str(agents_path)
    n = len(p)
    write_csv(agents_path, ["agent"] + _per_bus("q", n),
              ([i] + [float(v) for v in row] for i, row in enumerate(res.agent_q)))
    state = "reached" if res.converged else "NOT reached"
    print(f"consensus {state} after {res.rounds} rounds, gap {fmt(res.gap)}")
    return out


def cmd_baseline(ctx):
    action = ctx.args.action
    if action == "linear-fit":
        data = Dataset.from_csv(ctx.input("data"))
        tri, vai = tr.split_indices(len(data), float(ctx.get("validation_fraction")), ctx.seed)
        model = bl.fit_linear(data.subset(tri))
        out = ctx.output("out", "linear.json")
        model.save(out)
        if len(vai):
            mae = tr.mean_absolute_error(model.predict(data.inputs[vai]), data.dv[vai])
            print(f"held-out MAE {fmt(mae)} p.u.")
        return out
    inst = Dataset.from_csv(ctx.input("instances"))
    lo, hi = _box(ctx, inst.q)
    if action == "linear-regulate":
        model = bl.LinearModel.load(ctx.input("model"))
        cfg = bl.linear_regulate_config(q_lower=lo, q_upper=hi)
        res = bl.regulate_linear_batch(model, inst.p, inst.q, cfg)
        if ctx.get("net"):
            _realized(Network.load(ctx.input("net")), inst.p, res)
        out = ctx.output("out", "linear_regulated.csv")
        _write_regulation(out, res, inst.n_buses)
        return out
    net = Network.load(ctx.input("net"))
    n = inst.n_buses
    rows = []
    for k in range(len(inst)):
        q, best = bl.oracle_regulate(net, inst.p[k], lo[k], hi[k], grid_points=int(ctx.get("grid_points")))
        rows.append([k] + [float(v) for v in q] + [best])
    out = ctx.output("out", "oracle.csv")
    write_csv(out, ["instance"] + _per_bus("q", n) + ["objective"], rows)
    return out


def cmd_maxaffine(ctx):
    action = ctx.args.action
    if action == "convert":
        f = maxaffine.MaxAffine.load(ctx.input("input"))
        out = ctx.output("out", "maxaffine_icnn.json")
        maxaffine.icnn_from_max_affine(f).save(out)
        return out
    if action == "enumerate":
        model = icnn.IcnnModel.load(ctx.input("model"))
        if model.out_dim > 1:
            model = model.select_output(int(ctx.get("output")))
        en = maxaffine.enumerate_pieces(model, n_samples=int(ctx.get("enum_samples")), seed=ctx.seed)
        d = en.candidates.dim
        out = ctx.output("out", "pieces.csv")
        rows = []
        for k in range(en.candidates.n_pieces):
            bits = "".join("1" if b else "0" for b in en.patterns[k])
            rows.append([bits, int(en.realized[k]), float(en.candidates.b[k])]
                        + [float(v) for v in en.candidates.A[k]])
        write_csv(out, ["pattern", "realized", "b"] + _per_bus("a", d), rows)
        print(f"{en.candidates.n_pieces} candidate pieces, {int(en.realized.sum())} realized")
        return out
    header, arr = read_numeric_csv(ctx.input("data"))
    if header[-1] != "y":
        raise ValueError("fit data needs columns x_1..x_d, y")
    f = maxaffine.fit_max_affine(arr[:, :-1], arr[:, -1], int(ctx.get("pieces")), seed=ctx.seed)
    out = ctx.output("out", "maxaffine.json")
    f.save(out)
    mse = float(np.mean((f(arr[:, :-1]) - arr[:, -1]) ** 2))
    print(f"training MSE {fmt(mse)}")
    return out


def cmd_eval(ctx):
    if ctx.get("qstar"):
        net = Network.load(ctx.input("net"))
        inst = Dataset.from_csv(ctx.input("instances"))
        header, arr = read_numeric_csv(ctx.input("qstar"))
        cols = [header.index(c) for c in _per_bus("q", inst.n_buses)]
        fr = rg.evaluate_regulation(net, inst.p, arr[:, cols])
        rows = [["viol_3pct", fr[0]], ["viol_5pct", fr[1]]]
    else:
        hp, pred = read_numeric_csv(ctx.input("pred"))
        ht, target = read_numeric_csv(ctx.input("target"))
        if hp != ht or pred.shape != target.shape:
            raise ValueError("prediction and target files must have the same columns and rows")
        mae = tr.mean_absolute_error(pred, target)
        rows = [["mae", mae], ["max_abs_error", float(np.max(np.abs(pred - target), initial=0.0))]]
    for name, val in rows:
        print(f"{name} {fmt(val)}")
    if ctx.get("out"):
        out = ctx.output("out")
        write_csv(out, ["metric", "value"], rows)
        return out
    return None


def _fractions(net, P, Q):
    return rg.evaluate_regulation(net, P, Q)


def cmd_repro(ctx):
    """Desk-scale pipeline ending in a one-row-per-method summary table.

    ``fit_MAE`` is the held-out MAE in percent of nominal voltage and the
    violation columns are fractions of non-slack bus voltages. The
    distributed row covers only the first ``n_distributed`` test instances.
    """
    seed = ctx.seed
    out_dir = ctx.out_dir
    net = make_test_feeder("path_13")
    net.save(ctx.output("network", "network.json"))
    profile = ctx.profile()
    train_data = generate_dataset(net, profile, int(ctx.get("n_train")), seed)
    test = generate_dataset(net, profile.uncontrolled(), int(ctx.get("n_test")), seed + 1_000_003)
    train_data.to_csv(ctx.output("train_csv", "train.csv"))
    test.to_csv(ctx.output("test_csv", "test.csv"))

    timings = {}
    fits = {}
    for name, project in (("icnn", True), ("nn", False)):
        t = time.perf_counter()
        rep = tr.fit_icnn(train_data, _train_config(ctx, project=project))
        timings[f"train_{name}"] = time.perf_counter() - t
        rep.final_model.save(out_dir / f"{name}.json")
        _write_loss(out_dir / f"loss_{name}.csv", rep.train_loss_curve)
        fits[name] = rep
    train_idx, val_idx = fits["icnn"].train_idx, fits["icnn"].val_idx
    lin = bl.fit_linear(train_data.subset(train_idx))
    lin.save(out_dir / "linear.json")
    lin_mae = tr.mean_absolute_error(lin.predict(train_data.inputs[val_idx]), train_data.dv[val_idx])
    lin_pct = 100.0 * lin_mae

    P, Q0 = test.p, test.q
    lo, hi = _box(ctx, Q0)
    n_test = len(test)
    rows = [["uncontrolled", "", *_fractions(net, P, Q0), 0.0]]
    timings["uncontrolled"] = 0.0

    t = time.perf_counter()
    lres = bl.regulate_linear_batch(lin, P, Q0, bl.linear_regulate_config(q_lower=lo, q_upper=hi))
    timings["linear"] = (time.perf_counter() - t) / n_test
    rows.append(["linear", lin_pct, *_fractions(net, P, np.array([r.q_star for r in lres])),
                 timings["linear"]])

    cfg = _regulate_config(ctx, lo, hi)
    for name in ("nn", "icnn"):
        t = time.perf_counter()
        res = rg.regulate_batch(fits[name].final_model, P, Q0, cfg, net=net)
        timings[name] = (time.perf_counter() - t) / n_test
        _write_regulation(out_dir / f"regulated_{name}.csv", res, net.n_buses)
        rows.append([name, fits[name].val_mae_pct, *_fractions(net, P, np.array([r.q_star for r in res])),
                     timings[name]])

    n_dist = min(int(ctx.get("n_distributed")), n_test)
    if n_dist > 0:
        graph = ds.CommGraph.from_network(net)
        qd = []
        trace_rows = []
        t = time.perf_counter()
        for k in range(n_dist):
            dcfg = ds.DistributedConfig(penalty=float(ctx.get("penalty")),
                                        consensus_tol=float(ctx.get("delta")),
                                        max_rounds=int(ctx.get("rounds")),
                                        subproblem=_regulate_config(ctx, lo[k], hi[k]))
            r = ds.run_distributed(fits["icnn"].final_model, P[k], graph, dcfg, q0=Q0[k])
            qd.append(r.q)
            trace_rows += [[k, i + 1, g, o] for i, (g, o) in enumerate(zip(r.gap_trace, r.objective_trace))]
        timings["distributed"] = (time.perf_counter() - t) / n_dist
        write_csv(out_dir / "distributed_trace.csv", ["instance", "round", "gap", "objective"], trace_rows)
        rows.append(["distributed", fits["icnn"].val_mae_pct, *_fractions(net, P[:n_dist], np.array(qd)),
                     timings["distributed"]])

    ctx.timings.update(timings)
    write_csv(out_dir / "timings.csv", ["model", "time_per_instance"],
              ([r[0], float(r[4])] for r in rows))
    if not ctx.get("timing"):
        # wall-clock time would break bit-identical reruns; it lives in timings.csv
        for r in rows:
            r[4] = ""
    out = ctx.output("out", "summary.csv")
    write_csv(out, ["model", "fit_MAE", "viol_3pct", "viol_5pct", "time_per_instance"], rows)
    for r in rows:
        print(",".join(fmt(v) if isinstance(v, float) else str(v) for v in r))
    return out


# -- parser -------------------------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    p.add_argument("--config", default=None, help="JSON file of option defaults")
    p.add_argument("--out-dir", dest="out_dir", default=None, help="directory for relative outputs")


def _regulate_opts(p):
    p.add_argument("--qmax", type=float, help="reactive capability around q0, p.u. (default 0.03)")
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="icnnvolt", description="ICNN surrogate voltage regulation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-network", help="write a feeder as JSON")
    _common(p)
    p.add_argument("--kind", choices=["path_13", "random_tree"])
    p.add_argument("--n", type=int, help="bus count for random_tree")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_network)

    p = sub.add_parser("gen-data", help="sample injections and solve power flow")
    _common(p)
    p.add_argument("--net", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--uncontrolled", action="store_true", default=None,
                   help="omit the reactive excitation (test instances)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit an ICNN (or an unconstrained network)")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--net", help="network JSON; checks the data width when given")
    p.add_argument("--iters", "--iterations", dest="iterations", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch", "--batch-size", dest="batch_size", type=int)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    p.add_argument("--hidden", help="comma-separated hidden widths")
    p.add_argument("--activation", choices=["relu", "softplus"])
    p.add_argument("--unconstrained", action="store_true", default=None,
                   help="skip the nonnegativity projection")
    p.add_argument("--loss-csv", dest="loss_csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("regulate", help="centralized regulation of a batch of instances")
    _common(p)
    _regulate_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_regulate)

    p = sub.add_parser("distributed", help="consensus regulation of one instance")
    _common(p)
    _regulate_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--instance", type=int, help="row of --instances to solve (default 0)")
    p.add_argument("--graph", help="edge-list JSON, or 'tree' / 'ring' (default tree)")
    p.add_argument("--delta", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--penalty", type=float, help="consensus penalty rho; 0 gives plain dual ascent")
    p.add_argument("--out")
    p.set_defaults(func=cmd_distributed)

    p = sub.add_parser("baseline", help="linear surrogate and grid oracle")
    _common(p)
    _regulate_opts(p)
    p.add_argument("action", choices=["linear-fit", "linear-regulate", "oracle"])
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--net")
    p.add_argument("--instances")
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("maxaffine", help="max-affine conversions and fitting")
    _common(p)
    p.add_argument("action", choices=["convert", "enumerate", "fit"])
    p.add_argument("--in", dest="input", help="MaxAffine JSON (convert)")
    p.add_argument("--model", help="one-hidden-layer model JSON (enumerate)")
    p.add_argument("--samples", dest="enum_samples", type=int, help="domain samples (enumerate)")
    p.add_argument("--output", type=int, help="output coordinate of a multi-output model (enumerate, default 0)")
    p.add_argument("--data", help="CSV with columns x_1..x_d, y (fit)")
    p.add_argument("--pieces", type=int, help="number of affine pieces (fit)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_maxaffine)

    p = sub.add_parser("eval", help="MAE between CSVs, or violation fractions of a q table")
    _common(p)
    p.add_argument("--pred")
    p.add_argument("--target")
    p.add_argument("--net")
    p.add_argument("--instances")
    p.add_argument("--qstar", help="CSV with q_1..q_N columns (e.g. regulate output)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("repro", help="run the full desk-scale comparison")
    _common(p)
    _regulate_opts(p)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--n-distributed", dest="n_distributed", type=int)
    p.add_argument("--timing", action="store_true", default=None,
                   help="also put wall-clock times in summary.csv (breaks bit-identical reruns)")
    p.add_argument("--out", help="summary file name (default summary.csv)")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args, argv)
        threads = ctx.get("threads")
        with threadpool_limits(limits=None if threads is None else int(threads)):
            t = time.perf_counter()
            out = args.func(ctx)
            ctx.timings.setdefault("total_s", time.perf_counter() - t)
        if out is not None:
            out = Path(out)
            ctx.write_manifest(out.with_name(out.name + ".manifest.json"))
    except (IcnnVoltError, ValueError, OSError, KeyError) as exc:
        print(f"icnnvolt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
