"""Command-line interface.

Configuration precedence: built-in defaults < ``--config`` JSON < command-line
flags. Every run writes a manifest with the resolved configuration, its hash,
the seed and the backend fingerprint. Standard output is ``key=value`` lines.

Exit codes: 0 success, 1 usage/config/data error, 2 argparse error,
3 flagged (diverged) cells without ``--skip-failures``.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, kernels
from ._io import atomic_write_bytes, atomic_write_text, config_hash, read_json, write_json
from .analysis import (
    aggregate_effects,
    baselined_transfer,
    build_transfer_matrices,
    clusterability_auc,
    crs_matrix,
    matrix_to_records,
    permutation_test,
    read_matrix,
    symmetrize,
    write_matrix,
)
from .analysis.crs import LabelMultiset
from .backends import BackendError, DivergenceError, load_backend
from .perturbation import PerturbationConfig, perturb, write_records
from .remapping import LabeledExampleSet, TokenString, read_set, serialize_set

log = logging.getLogger("perturbkit")

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "backend": {"name": "reference", "trained": True},
    "dataset": {"id": "synthetic"},
    "perturbation": {},
    "trials": 1,
    "evals_per_cell": 1,
    "group_by": None,
    "disjoint": False,
    "jobs": 1,
    "skip_failures": False,
    "analysis": {"symmetrize": False, "exclude_diagonal": True, "reweight": True, "label_factor": None},
    "out": "perturbkit-out",
}


class ConfigError(ValueError):
    pass


class FlaggedCells(RuntimeError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(config: dict | str | Path | None = None, **overrides) -> dict:
    """Defaults, then the config file or dict, then non-None overrides."""
    if isinstance(config, (str, Path)):
        config = read_json(config)
    cfg = _merge(DEFAULTS, config or {})
    for k, v in overrides.items():
        if v is None:
            continue
        if k == "backend":
            v = json.loads(v) if isinstance(v, str) and v.lstrip().startswith("{") else ({"name": v} if isinstance(v, str) else v)
            cfg["backend"] = _merge(cfg["backend"], v)
        else:
            cfg[k] = v
    if cfg["seed"] is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    cfg["seed"] = int(cfg["seed"])
    return cfg


def _emit(**kv) -> None:
    for k, v in kv.items():
        if isinstance(v, float):
            v = repr(v)
        print(f"{k}={v}")


# -- datasets ---------------------------------------------------------------------------


@dataclass
class ResolvedData:
    train: LabeledExampleSet
    evals: dict[str, LabeledExampleSet]
    corpus: list[str] = field(default_factory=list)
    vocab_words: set[str] = field(default_factory=set)
    group_by: str | None = None
    baseline: tuple[str, str] | None = None  # (fg, nonfg) eval names
    extra: dict = field(default_factory=dict)


def _words_of(ds: LabeledExampleSet) -> set[str]:
    out = set()
    for it in ds:
        r = it.remapping
        for ts in (r.context_original, r.region_original, r.context_alternate, r.region_alternate):
            out.update(ts.words)
    return out


def _sentences_of(ds: LabeledExampleSet) -> list[str]:
    out = []
    for it in ds:
        r = it.remapping
        out.append(" ".join(t.surface for t in sorted(r.context_original.tokens + r.region_original.tokens)))
    return out


def resolve_dataset(spec: dict, seed: int) -> ResolvedData:
    kind = spec.get("id", "synthetic")
    if kind == "synthetic":
        from .harness.synthetic import make_grammar

        opts = {k: v for k, v in spec.items() if k in ("words_per_class", "holdout_fraction", "target", "repeats")}
        g = make_grammar(seed=spec.get("seed", 0), **opts)
        return ResolvedData(g.dataset, {"eval": g.dataset}, g.corpus, set(g.vocab))
    if kind == "jsonl":
        train = read_set(spec["train"])
        evals = {name: read_set(p) for name, p in (spec.get("eval") or {}).items()} or {"eval": train}
        words = _words_of(train).union(*(_words_of(e) for e in evals.values()))
        return ResolvedData(train, evals, _sentences_of(train), words, spec.get("group_by"))
    if kind == "fillergap":
        from .harness import fillergap as fg

        items = fg.read_fg_csv(spec["csv"]) if spec.get("csv") else fg.demo_fg_items(spec.get("per_condition", 6), seed)
        train, evals = fg.fg_matrix_sets(items)
        return ResolvedData(train, evals, fg.fg_corpus(items), set(fg.fg_vocab(items)), "condition", ("fg", "nonfg"))
    if kind == "morph-er":
        from .harness import morph

        if spec.get("jsonl"):
            ds = read_set(spec["jsonl"])
        else:
            items = morph.read_bats(spec["deverbal"], "deverbal") + morph.read_bats(spec["comparative"], "comparative")
            pool = Path(spec["sentences"]).read_text(encoding="utf-8").splitlines()
            ds = morph.build_morph_remappings(morph.attach_sentences(items, pool, seed), spec.get("variant", "standard"))
        return ResolvedData(ds, {"eval": ds}, _sentences_of(ds), _words_of(ds))
    if kind == "cwsd20":
        from .harness import wsd

        word = spec.get("word")
        if spec.get("jsonl"):
            ds = read_set(spec["jsonl"])
        else:
            sample = wsd.sample_balanced_wsd(wsd.read_wsd_pools(spec["root"]), spec.get("per_word", 100), seed,
                                             spec.get("target", "glam"))
            if word is None:
                raise ConfigError("cwsd20 matrices are per word: set dataset.word")
            ds = sample.sets[word]
        if word is not None:
            ds = ds.filter(lambda it: it.factors.get("word") == word)
        return ResolvedData(ds, {"eval": ds}, _sentences_of(ds), _words_of(ds))
    raise ConfigError(f"unknown dataset id {kind!r}")


def build_backend(cfg: dict, data: ResolvedData | None):
    spec = copy.deepcopy(cfg["backend"])
    if spec.get("name", "reference") == "reference" and not spec.get("state"):
        spec.setdefault("config", {})
        spec["config"].setdefault("seed", cfg["seed"])
        if data is not None:
            # the untrained variant also takes the corpus so both share one vocabulary
            if not spec.get("corpus"):
                spec["corpus"] = data.corpus
            spec["extra_words"] = sorted(set(spec.get("extra_words", ())) | data.vocab_words)
    return load_backend(spec)


def _perturbation(cfg: dict) -> PerturbationConfig:
    return PerturbationConfig.from_dict({**cfg["perturbation"], "seed": cfg["seed"]})


# -- commands ---------------------------------------------------------------------------


def _experiment_hash(cfg: dict) -> str:
    # output location and worker count do not change results, so they stay out of the hash
    return config_hash({k: v for k, v in cfg.items() if k not in ("out", "jobs")})


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_matrix(config: dict | str | Path, **overrides) -> dict:
    """Build transfer matrices; returns ``{"matrices": {name: csv path}, "manifest": path, ...}``."""
    cfg = resolve_config(config, **overrides)
    out = Path(cfg["out"])
    data = resolve_dataset(cfg["dataset"], cfg["seed"])
    base = build_backend(cfg, data)
    pcfg = _perturbation(cfg)
    group_by = cfg["group_by"] if cfg["group_by"] is not None else data.group_by
    mats, records = build_transfer_matrices(
        base, data.train, data.evals, pcfg,
        trials=cfg["trials"], evals_per_cell=cfg["evals_per_cell"], group_by=group_by,
        disjoint=cfg["disjoint"], jobs=cfg["jobs"], skip_failures=cfg["skip_failures"], return_records=True,
    )
    if data.baseline:
        fgn, nfn = data.baseline
        mats["baselined"] = baselined_transfer(mats[fgn], mats[nfn])
    files = {}
    for name, m in mats.items():
        csv_path, _ = write_matrix(m, out / name)
        files[name] = csv_path
    rec_path = out / "records.csv"
    atomic_write_text(rec_path, write_records(records))
    flagged = next(iter(mats.values())).meta.get("flagged", [])
    manifest = {
        "perturbkit_version": __version__,
        "kernels": kernels.IMPLEMENTATION,
        "config": cfg,
        "config_hash": _experiment_hash(cfg),
        "seed": cfg["seed"],
        "backend_fingerprint": base.fingerprint(),
        "matrices": {k: {"csv": str(p.name), "sha256": _sha(p)} for k, p in files.items()},
        "records": {"csv": rec_path.name, "sha256": _sha(rec_path)},
        "flagged": flagged,
    }
    write_json(out / "manifest.json", manifest)
    result = {"matrices": files, "manifest": out / "manifest.json", "flagged": flagged, "records": rec_path}
    if flagged and not cfg["skip_failures"]:
        raise FlaggedCells(f"{len(flagged)} flagged trials")
    return result


def _labels_for(matrix, label_factor: str | None):
    if not label_factor:
        return None
    return [str(f[label_factor]) for f in matrix.factors]


def cmd_analyze(which: str, paths: list[str], opts: dict) -> dict:
    if which == "auc":
        m = read_matrix(paths[0])
        if opts.get("symmetrize"):
            m = symmetrize(m)
        res = clusterability_auc(
            m, exclude_diagonal=not opts.get("include_diagonal", False), reweight=not opts.get("no_reweight", False),
            labels=_labels_for(m, opts.get("label_factor")), label_map=opts.get("label_map"),
        )
        report = {"analysis": "auc", "matrix": paths[0], **res.to_dict()}
        headline = {"auc": res.auc, "positive_pairs": res.positive_pairs, "negative_pairs": res.negative_pairs}
    elif which == "permtest":
        mats = [read_matrix(p) for p in paths]
        ids = mats[0].item_ids
        if any(m.item_ids != ids for m in mats[1:]):
            raise ConfigError("permtest needs matrices over the same item ids")
        res = permutation_test(mats, opts.get("mode", "column"), opts.get("n_permutations", 10_000), opts.get("seed", 0))
        report = {"analysis": "permtest", "matrices": paths, **res.to_dict()}
        headline = {"p_value": res.p_value, "statistic": res.statistic}
    elif which == "aggregate":
        m = read_matrix(paths[0])
        recs = matrix_to_records(m, symmetrized=opts.get("symmetrize", False))
        if any("train_tok_count" in r.metadata for r in recs[:1]):
            from .harness.morph import add_tokenization_factor

            add_tokenization_factor(recs)
        group_by = opts.get("group_by") or ["relation"]
        table = aggregate_effects(recs, group_by, balanced=not opts.get("unbalanced", False),
                                  n_permutations=opts.get("n_permutations", 0), seed=opts.get("seed", 0),
                                  alternative=opts.get("alternative", "two-sided"))
        report = {"analysis": "aggregate", "matrix": paths[0], **table.to_dict()}
        headline = {"grand_mean": table.grand_mean}
        for f, levels in table.marginals.items():
            for lv, v in levels.items():
                headline[f"mean.{f}.{lv}"] = v
    elif which == "crs":
        from .harness import fillergap as fg

        items = fg.read_fg_csv(paths[0])
        side = opts.get("side", "fg")
        conds = list(dict.fromkeys(it.condition for it in items))
        words = {c: [] for c in conds}
        for it in items:
            if side in ("fg", "both"):
                words[it.condition].append(it.label_fg.split()[0])
            if side in ("nonfg", "both"):
                words[it.condition].append(it.label_nonfg.split()[0])
        sims = crs_matrix([LabelMultiset.from_words(words[c]) for c in conds])
        report = {"analysis": "crs", "source": paths[0], "side": side, "conditions": conds, "values": sims.tolist()}
        off = sims[~np.eye(len(conds), dtype=bool)]
        headline = {"conditions": len(conds), "mean_offdiag": float(off.mean()) if off.size else float("nan")}
    else:
        raise ConfigError(f"unknown analysis {which!r}")
    out = Path(opts.get("out") or Path(paths[0]).with_suffix(f".{which}.json"))
    write_json(out, report)
    return {"report": out, **headline}


def cmd_hyper(config: dict | str | Path, grid: dict | None = None, **overrides) -> dict:
    from .harness.hyper import HyperGrid, hyper_search

    cfg = resolve_config(config, **overrides)
    g = grid or cfg.get("hyper") or {}
    try:
        hg = HyperGrid(g.get("learning_rates", ()), g.get("step_counts", ()))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = resolve_dataset(cfg["dataset"], cfg["seed"])
    base = build_backend(cfg, data)
    an = cfg["analysis"]
    label_factor = an.get("label_factor")
    label_map = None
    if label_factor:
        label_map = {it.class_label: str(it.factors[label_factor]) for it in data.train}
    group_by = cfg["group_by"] if cfg["group_by"] is not None else data.group_by
    res = hyper_search(
        base, data.train, hg, _perturbation(cfg), exclude_diagonal=an["exclude_diagonal"], reweight=an["reweight"],
        label_map=label_map, trials=cfg["trials"], evals_per_cell=cfg["evals_per_cell"], group_by=group_by,
        disjoint=cfg["disjoint"], jobs=cfg["jobs"], skip_failures=cfg["skip_failures"],
    )
    out = Path(cfg["out"])
    write_json(out / "hyper.json", {**res.to_dict(), "config_hash": _experiment_hash(cfg), "seed": cfg["seed"]})
    return {"report": out / "hyper.json", "learning_rate": res.learning_rate, "steps": res.steps, "auc": res.auc,
            "table": res.table}


def cmd_plot(kind: str, matrix_path: str, out: str, spec_kw: dict) -> dict:
    from .plots import PlotSpec, distribution, heatmap, relation_groups

    m = read_matrix(matrix_path)
    spec = PlotSpec(**spec_kw)
    if kind == "heatmap":
        img, side = heatmap(m, spec, out)
        return {"image": img, "legend": side}
    img, medians = distribution(relation_groups(m), spec, out)
    return {"image": img, **{f"median.{k}": v for k, v in medians.items()}}


def cmd_perplexity(config: dict | str | Path, corpus_path: str | None = None, item: str | None = None, **overrides) -> dict:
    cfg = resolve_config(config, **overrides)
    data = resolve_dataset(cfg["dataset"], cfg["seed"])
    base = build_backend(cfg, data)
    if base.mode != "causal":
        raise ConfigError("perplexity needs a causal backend")
    if corpus_path:
        lines = [ln.split() for ln in Path(corpus_path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    else:
        lines = [s.split() for s in data.corpus]
    corpus = [TokenString.from_words(ws) for ws in lines]
    train = data.train.by_id(item) if item else data.train.items[0]
    perturbed = perturb(base, train.remapping, _perturbation(cfg), remapping_id=train.id)
    before, after = base.perplexity(corpus), perturbed.perplexity(corpus)
    report = {"base": before, "perturbed": after, "delta": after - before, "item": train.id,
              "words": sum(len(ws) for ws in lines), "config_hash": _experiment_hash(cfg), "seed": cfg["seed"]}
    out = Path(cfg["out"])
    write_json(out / "perplexity.json", report)
    return {"report": out / "perplexity.json", **{k: report[k] for k in ("base", "perturbed", "delta")}}


def cmd_ingest(dataset: str, args: argparse.Namespace) -> dict:
    out = Path(args.out)
    written = {}
    if dataset == "morph-er":
        from .harness import morph

        items = morph.read_bats(args.deverbal, "deverbal") + morph.read_bats(args.comparative, "comparative")
        pool = Path(args.sentences).read_text(encoding="utf-8").splitlines()
        ds = morph.build_morph_remappings(morph.attach_sentences(items, pool, args.seed or 0), args.variant)
        written["morph-er"] = out / "morph-er.jsonl"
        atomic_write_bytes(written["morph-er"], serialize_set(ds))
    elif dataset == "cwsd20":
        from .harness import wsd

        sample = wsd.sample_balanced_wsd(wsd.read_wsd_pools(args.root), args.per_word, args.seed or 0, args.target)
        merged = LabeledExampleSet("cwsd20", [it for w in sorted(sample.sets) for it in sample.sets[w]])
        written["cwsd20"] = out / "cwsd20.jsonl"
        atomic_write_bytes(written["cwsd20"], serialize_set(merged))
        write_json(out / "cwsd20.sampling.json", {"counts": sample.counts, "deficits": sample.deficits, "total": sample.total})
    elif dataset == "fillergap":
        from .harness import fillergap as fg

        items = fg.read_fg_csv(args.csv) if args.csv else fg.demo_fg_items(args.per_condition, args.seed or 0)
        train, evals = fg.fg_matrix_sets(items)
        for name, ds in (("train", train), ("eval_fg", evals["fg"]), ("eval_nonfg", evals["nonfg"])):
            written[name] = out / f"fillergap.{name}.jsonl"
            atomic_write_bytes(written[name], serialize_set(ds))
    elif dataset == "synthetic":
        from .harness.synthetic import make_grammar

        g = make_grammar(seed=args.seed or 0)
        written["synthetic"] = out / "synthetic.jsonl"
        atomic_write_bytes(written["synthetic"], serialize_set(g.dataset))
        atomic_write_text(out / "synthetic.corpus.txt", "\n".join(g.corpus) + "\n")
    else:
        raise ConfigError(f"unknown dataset {dataset!r}")
    return {k: v for k, v in written.items()}


# -- argument parsing ---------------------------------------------------------------------


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _names(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="parallel row workers")
    p.add_argument("--skip-failures", action="store_true", default=None, help="record diverged trials and continue")
    p.add_argument("--backend", help="backend name or JSON spec merged over the config's backend")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perturbkit", description="Perturbation transfer experiments.")
    ap.add_argument("--version", action="version", version=f"perturbkit {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("matrix", help="build transfer matrices")
    _run_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--evals-per-cell", type=int)

    p = sub.add_parser("analyze", help="analyze matrices")
    p.add_argument("which", choices=["auc", "crs", "permtest", "aggregate"])
    p.add_argument("paths", nargs="+", help="matrix prefixes/CSVs (crs: filler-gap CSV)")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--include-diagonal", action="store_true")
    p.add_argument("--no-reweight", action="store_true")
    p.add_argument("--label-factor", help="item factor to use as class label (auc)")
    p.add_argument("--mode", choices=["column", "full"], default="column")
    p.add_argument("--n-permutations", type=int)
    p.add_argument("--group-by", type=_names)
    p.add_argument("--unbalanced", action="store_true")
    p.add_argument("--alternative", choices=["two-sided", "greater", "less"], default="two-sided")
    p.add_argument("--side", choices=["fg", "nonfg", "both"], default="fg")

    p = sub.add_parser("hyper", help="grid search over learning rate and steps")
    _run_flags(p)
    p.add_argument("--learning-rates", type=_floats)
    p.add_argument("--step-counts", type=_ints)

    p = sub.add_parser("plot", help="render a heatmap or distribution plot")
    p.add_argument("kind", choices=["heatmap", "distribution"])
    p.add_argument("matrix")
    p.add_argument("--out", required=True, help="image path (.svg or .png)")
    p.add_argument("--clip", type=float)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--group-order", type=_names, default=[])
    p.add_argument("--subgroup")
    p.add_argument("--no-medians", action="store_true")
    p.add_argument("--title")

    p = sub.add_parser("perplexity", help="corpus perplexity before and after a perturbation")
    _run_flags(p)
    p.add_argument("--corpus", help="one sentence per line")
    p.add_argument("--item", help="training item id (default: first)")

    p = sub.add_parser("datasets", help="dataset utilities")
    dsub = p.add_subparsers(dest="action", required=True)
    q = dsub.add_parser("ingest", help="convert a benchmark to remapping JSONL")
    q.add_argument("dataset", choices=["morph-er", "cwsd20", "fillergap", "synthetic"])
    q.add_argument("--out", required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--deverbal")
    q.add_argument("--comparative")
    q.add_argument("--sentences")
    q.add_argument("--variant", default="standard")
    q.add_argument("--root")
    q.add_argument("--per-word", type=int, default=100)
    q.add_argument("--target", default="glam")
    q.add_argument("--csv")
    q.add_argument("--per-condition", type=int, default=6)
    return ap


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "jobs": args.jobs,
        "skip_failures": args.skip_failures,
        "backend": args.backend,
        "out": args.out,
    }


def _config(args):
    return read_json(args.config) if args.config else {}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "matrix":
            ov = _overrides(args)
            ov.update(trials=args.trials, evals_per_cell=args.evals_per_cell)
            try:
                res = cmd_matrix(_config(args), **ov)
            except FlaggedCells as exc:
                _emit(status="flagged", error=str(exc))
                return 3
            for name, path in res["matrices"].items():
                _emit(**{f"matrix.{name}": path})
            _emit(records=res["records"], manifest=res["manifest"], flagged=len(res["flagged"]))
        elif args.command == "analyze":
            opts = {k: v for k, v in vars(args).items() if v is not None}
            res = cmd_analyze(args.which, args.paths, opts)
            _emit(**res)
        elif args.command == "hyper":
            grid = None
            if args.learning_rates or args.step_counts:
                cfg = _config(args).get("hyper", {})
                grid = {"learning_rates": args.learning_rates or cfg.get("learning_rates", []),
                        "step_counts": args.step_counts or cfg.get("step_counts", [])}
            res = cmd_hyper(_config(args), grid, **_overrides(args))
            for row in res.pop("table"):
                _emit(**{f"grid.lr={row['learning_rate']!r}.steps={row['steps']}": row["auc"]})
            _emit(**res)
        elif args.command == "plot":
            res = cmd_plot(args.kind, args.matrix, args.out, {
                "clip": args.clip, "color_gamma": args.gamma, "group_order": args.group_order,
                "subgroup": args.subgroup, "annotations": not args.no_medians, "title": args.title,
            })
            _emit(**res)
        elif args.command == "perplexity":
            res = cmd_perplexity(_config(args), args.corpus, args.item, **_overrides(args))
            _emit(**res)
        elif args.command == "datasets":
            _emit(**cmd_ingest(args.dataset, args))
    except DivergenceError as exc:
        _emit(status="flagged", error=str(exc))
        return 3
    except (ConfigError, BackendError, ValueError, KeyError, OSError) as exc:
        _emit(status="error", error=f"{type(exc).__name__}: {exc}")
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
