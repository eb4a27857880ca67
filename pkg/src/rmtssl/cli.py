"""Command-line experiment harness writing CSV tables.

Every output file starts with ``#`` comment lines carrying the command, the
SHA-256 of the effective configuration and the master seed. Nothing time- or
host-dependent is written, so identical inputs give identical bytes.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ClassLayout, estimate_tau, ingest_idx, write_idx, write_manifest
from .errors import ConfigError, NumericError, RmtSslError
from .experiments import idx_source, model_source, run_trials, sweep_alpha, tune_compare
from .gmm import BUILTIN_MODELS, builtin_model, population_stats
from .kernel import degree_vector, parse_kernel, weight_matrix
from .propagation import center, classify, metrics, normalize, solve_closed_form
from .rmt_expansion import residual_decay
from .seeding import trial_seed
from .tuning import beta0_exact, estimate_beta0

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "dataset": {"model": "two_means", "p": 784},
    "layout": {"n": 1024, "labelled_fraction": 1 / 16},
    "kernel": "gaussian{1}",
    "alpha": -1.0,
    "trials": 50,
    "seed": 0,
    "workers": 1,
}


@dataclass
class ExperimentConfig:
    doc: dict
    model: object = None
    idx: dict | None = None
    layout: ClassLayout | None = None
    kernel: object = None
    trials: int = 50
    seed: int = 0
    workers: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def sha256(self):
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()

    def source(self, layout=None):
        layout = layout or self.layout
        if self.model is not None:
            return model_source(self.model, layout)
        return idx_source(self.idx["images"], self.idx["labels"], self.idx["classes"], layout)

    def header(self, command):
        return [f"command={command}", f"config_sha256={self.sha256}", f"seed={self.seed}"]


def _layout_from(doc, K):
    if "n_l" in doc or "n_u" in doc:
        try:
            return ClassLayout(tuple(int(v) for v in doc["n_l"]), tuple(int(v) for v in doc["n_u"]))
        except KeyError as exc:
            raise ConfigError(f"layout needs both n_l and n_u (missing {exc})") from None
    n = int(doc.get("n", 0))
    frac = float(doc.get("labelled_fraction", 1 / 16))
    if "class1_share" in doc:
        if K != 2:
            raise ConfigError("class1_share needs a two-class dataset")
        return ClassLayout.imbalanced(n, frac, float(doc["class1_share"]))
    return ClassLayout.balanced(n, K, frac)


def load_config(path=None, overrides=None):
    """Merge defaults, the JSON file and command-line overrides, then validate."""
    doc = json.loads(json.dumps(DEFAULTS))
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        doc.update(user)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v

    cfg = ExperimentConfig(doc)
    try:
        ds = doc["dataset"]
        if "model" in ds:
            if ds["model"] not in BUILTIN_MODELS:
                raise ConfigError(f"unknown model {ds['model']!r}; choose from {', '.join(BUILTIN_MODELS)}")
            cfg.model = builtin_model(ds["model"], int(ds.get("p", 784)))
            K = cfg.model.K
        elif "idx" in ds:
            idx = dict(ds["idx"])
            for key in ("images", "labels"):
                if not Path(idx[key]).exists():
                    raise ConfigError(f"IDX file {idx[key]} not found")
            idx["classes"] = [int(c) for c in idx["classes"]]
            cfg.idx = idx
            K = len(idx["classes"])
        else:
            raise ConfigError("dataset needs either 'model' or 'idx'")
        cfg.layout = _layout_from(doc["layout"], K)
        cfg.kernel = parse_kernel(str(doc["kernel"]))
        cfg.trials = int(doc["trials"])
        cfg.seed = int(doc["seed"])
        cfg.workers = int(doc.get("workers", 1))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    if cfg.trials < 1:
        raise ConfigError("trials must be at least 1")
    return cfg


def alpha_list(spec, p):
    """Resolve the alpha field: a number, {"beta": b}, {"grid": [...]}, {"beta_grid": [...]} or a list."""
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, list):
        return [float(a) for a in spec]
    if isinstance(spec, dict):
        if "beta" in spec:
            return [-1.0 + float(spec["beta"]) / math.sqrt(p)]
        if "grid" in spec:
            return [float(a) for a in spec["grid"]]
        if "beta_grid" in spec:
            return [-1.0 + float(b) / math.sqrt(p) for b in spec["beta_grid"]]
        if "linspace" in spec:
            lo, hi, num = spec["linspace"]
            return [float(a) for a in np.linspace(lo, hi, int(num))]
    raise ConfigError(f"cannot interpret alpha specification {spec!r}")


def _writer(path, header):
    fh = open(path, "w", newline="")
    for line in header:
        fh.write(f"# {line}\n")
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands


def _simulate_trial(cfg, alphas, seed):
    split = cfg.source()(seed)
    spec = cfg.kernel(estimate_tau(split))
    W = weight_matrix(split, spec)
    d = degree_vector(W)
    out = []
    for a in alphas:
        if a == "algorithm1":
            a = estimate_beta0(split, spec, W=W).alpha
        scores = solve_closed_form(W, d, split.layout, a)
        F_hat = normalize(scores)
        out.append((a, scores.unlabelled, F_hat, split.layout.truth_unlabelled()))
    return out


def cmd_simulate(cfg, out):
    spec = cfg.doc["alpha"]
    alphas = ["algorithm1"] if spec == "algorithm1" else alpha_list(spec, _dim(cfg))
    K = cfg.layout.K
    results = run_trials(lambda s: _simulate_trial(cfg, alphas, s), cfg.trials, cfg.seed, 1)
    header = cfg.header("simulate")
    fh, w = _writer(out / "metrics.csv", header)
    with fh:
        w.writerow(["trial", "alpha", "decision", "accuracy", "average_precision"]
                   + [f"precision_{k + 1}" for k in range(K)] + [f"recall_{k + 1}" for k in range(K)])
        for t, res in enumerate(results):
            for a, F_raw, F_hat, truth in res:
                for name, F in (("normalized", F_hat), ("unnormalized", F_raw)):
                    m = metrics(classify(F), truth, K)
                    w.writerow([t, _fmt(a), name, _fmt(m.accuracy), _fmt(m.average_precision)]
                               + [_fmt(v) for v in m.precision] + [_fmt(v) for v in m.recall])
    nl = cfg.layout.n_labelled
    for i, (a, F_raw, F_hat, truth) in enumerate(results[0]):
        fh, w = _writer(out / f"scores_{i}.csv", header + [f"alpha={a!r}", "trial=0"])
        with fh:
            w.writerow(["node_index", "class"] + [f"centered_{k + 1}" for k in range(K)]
                       + [f"normalized_centered_{k + 1}" for k in range(K)])
            C_raw, C_hat = center(F_raw), center(F_hat)
            for r in range(truth.size):
                w.writerow([nl + r, int(truth[r]) + 1] + [_fmt(v) for v in C_raw[r]] + [_fmt(v) for v in C_hat[r]])
    return EXIT_OK


def _dim(cfg):
    return cfg.model.p if cfg.model is not None else 784


def cmd_sweep_alpha(cfg, out):
    spec = cfg.doc["alpha"]
    if spec == "algorithm1":
        raise ConfigError("sweep-alpha needs a numeric alpha or a grid")
    alphas = alpha_list(spec, _dim(cfg))
    two_class_model = cfg.model if (cfg.model is not None and cfg.model.K == 2) else None
    rows = sweep_alpha(cfg.source(), cfg.kernel, alphas, cfg.trials, cfg.seed,
                       model=two_class_model, layout=cfg.layout, workers=cfg.workers)
    fh, w = _writer(out / "sweep_alpha.csv", cfg.header("sweep-alpha"))
    with fh:
        w.writerow(["alpha", "empirical_accuracy", "stderr", "trials", "theoretical_accuracy"])
        for r in rows:
            w.writerow([_fmt(r.alpha), _fmt(r.empirical), _fmt(r.stderr), r.trials, _fmt(r.theory)])
    return EXIT_OK


def cmd_tune(cfg, out):
    if cfg.layout.K != 2:
        raise ConfigError("tune needs a two-class dataset")
    shares = cfg.doc.get("class1_shares")
    grid_spec = cfg.doc.get("alpha_grid", {"beta_grid": [round(0.25 * b, 2) for b in range(-16, 17)]})
    grid = alpha_list(grid_spec, _dim(cfg))
    layouts = []
    if shares is None:
        layouts.append((None, cfg.layout))
    else:
        lay_doc = cfg.doc["layout"]
        for s in shares:
            layouts.append((float(s), ClassLayout.imbalanced(int(lay_doc["n"]), float(lay_doc.get("labelled_fraction", 1 / 16)), float(s))))
    header = cfg.header("tune")
    fh, w = _writer(out / "tune.csv", header)
    gh, gw = _writer(out / "alpha_grid.csv", header)
    with fh, gh:
        w.writerow(["class1_share", "beta0_exact", "beta_hat", "alpha_hat", "alpha_star",
                    "ap_pagerank", "ap_pagerank_stderr", "ap_alpha_hat", "ap_alpha_hat_stderr",
                    "ap_alpha_star", "ap_alpha_star_stderr", "trials"])
        gw.writerow(["class1_share", "alpha", "mean_avg_precision", "stderr", "trials"])
        for share, lay in layouts:
            if min(lay.n_l) < 1:
                raise ConfigError("every class needs labelled samples")
            b0 = math.nan
            if cfg.model is not None:
                st = population_stats(cfg.model, lay)
                try:
                    b0 = beta0_exact(st, lay, cfg.kernel(st.tau).values(st.tau))
                except RmtSslError:
                    pass
            s = tune_compare(cfg.source(lay), cfg.kernel, grid, cfg.trials, cfg.seed, cfg.workers)
            share_txt = "" if share is None else _fmt(share)
            w.writerow([share_txt, _fmt(b0), _fmt(s.beta_hat), _fmt(s.alpha_hat), _fmt(s.alpha_star),
                        _fmt(s.ap_pagerank[0]), _fmt(s.ap_pagerank[1]), _fmt(s.ap_alpha_hat[0]),
                        _fmt(s.ap_alpha_hat[1]), _fmt(s.ap_alpha_star[0]), _fmt(s.ap_alpha_star[1]),
                        s.ap_pagerank[2]])
            for a, m, se, cnt in zip(s.grid_alphas, s.grid_mean, s.grid_stderr, s.grid_count):
                gw.writerow([share_txt, _fmt(a), _fmt(m), _fmt(se), int(cnt)])
    return EXIT_OK


def cmd_expansion_check(cfg, out):
    if cfg.model is None:
        raise ConfigError("expansion-check needs a builtin model")
    name = cfg.model.name
    n_list = [int(n) for n in cfg.doc.get("n_list", [256, 512, 1024])]
    seeds = [trial_seed(cfg.seed, s) for s in range(int(cfg.doc.get("expansion_seeds", 1)))]
    c0 = float(cfg.doc.get("c0", 784 / 1024))
    kernel = cfg.kernel
    table = residual_decay(lambda p: builtin_model(name, p), kernel, n_list, seeds, c0,
                           float(cfg.doc["layout"].get("labelled_fraction", 1 / 16)))
    table.write_csv(out / "expansion_decay.csv", cfg.header("expansion-check"))
    return EXIT_OK


def cmd_mnist_prepare(cfg, out):
    if cfg.idx is None:
        raise ConfigError("mnist-prepare needs an 'idx' dataset")
    idx = cfg.idx
    split = ingest_idx(idx["images"], idx["labels"], idx["classes"], cfg.layout, trial_seed(cfg.seed, 0))
    pixels = np.rint(split.X * 255.0).astype(np.uint8)
    side = int(math.isqrt(split.p))
    shape = (split.n, side, side) if side * side == split.p else (split.n, split.p)
    write_idx(out / "images.idx", pixels.reshape(shape))
    write_idx(out / "labels.idx", np.asarray(idx["classes"], dtype=np.uint8)[split.truth])
    write_manifest(out / "manifest.json", trial_seed(cfg.seed, 0), split,
                   {"config_sha256": cfg.sha256, "master_seed": cfg.seed, "classes": idx["classes"]})
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep-alpha": cmd_sweep_alpha,
    "tune": cmd_tune,
    "expansion-check": cmd_expansion_check,
    "mnist-prepare": cmd_mnist_prepare,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rmtssl", description="Graph semi-supervised learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--trials", type=int, help="number of trials (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes for independent trials")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "trials": args.trials, "workers": args.workers})
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RmtSslError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
