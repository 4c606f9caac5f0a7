"""Command line: synth, extract, cluster, train, reconstruct, evaluate, pipeline.

Every JSON artifact carries a ``provenance`` block with the tool version, the
seed and the config hash, and every file is written atomically.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, experiments as E
from .config import load_config
from .evaluation import build_report, clustering_accuracy
from .gnn import ChebNetModel
from .imageio import (DatasetManifest, GroundTruthTree, ManifestEntry, atomic_write_text,
                      export_dot, load_image, read_manifest, save_image, write_manifest)
from .clustering import cluster_images
from .phylogeny import PhyloForest, PhyloTree
from .sensornoise import dump_residual, enhanced_residual

log = logging.getLogger("ndphylo")


class UsageError(Exception):
    pass


def _key(set_id, node_id):
    return f"{set_id}:{node_id}"


def _provenance(args, cfg):
    return {"tool": "ndphylo", "version": __version__, "seed": args.seed,
            "config_hash": cfg.digest()}


def _dump(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_bytes(path, data):
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _out(args, *parts):
    os.makedirs(os.path.join(args.out, *parts[:-1]), exist_ok=True)
    return os.path.join(args.out, *parts)


def _load_sets(manifest_path, need_truth=False):
    """Images grouped by set, in manifest order, with their truths when present."""
    man = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    groups = {}
    for e in man.entries:
        path = e.path if os.path.isabs(e.path) else os.path.join(base, e.path)
        groups.setdefault(e.set_id, []).append((e.node_id, load_image(path)))
    if need_truth:
        missing = [s for s in groups if man.truth_for(s) is None]
        if missing:
            raise UsageError(f"manifest {manifest_path} has no 'ground_truth' record for "
                             f"set(s) {', '.join(missing[:5])}")
    return man, groups


def _split(man, groups, name):
    splits = (man.meta or {}).get("splits")
    if not splits or name not in splits:
        return list(groups)
    return [s for s in splits[name] if s in groups]


def _synthetic_sets(man, groups, set_ids):
    out = []
    for s in set_ids:
        nodes = [n for n, _ in groups[s]]
        imgs = [im for _, im in groups[s]]
        gt = man.truth_for(s)
        index = {n: i for i, n in enumerate(nodes)}
        local = GroundTruthTree(s, range(len(nodes)),
                                [(index[p], index[c]) for p, c in gt.immediate_edges])
        out.append(E.SyntheticSet(s, s.split("-")[-1], 0, imgs, local))
    return out


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    rng = np.random.default_rng(args.seed)
    sets = E.make_corpus(cfg.n_sources, cfg.configs, cfg.cls, rng, cfg.side, cfg.amplitude,
                         sensor_seed=args.seed * 100003)
    train, val, test = E.split_by_source(sets, cfg.test_fraction, cfg.val_fraction)
    entries, truths = [], []
    for st in sets:
        for i, im in enumerate(st.images):
            rel = os.path.join("images", f"{st.set_id}_{i}.png")
            save_image(im, _out(args, "images", f"{st.set_id}_{i}.png"))
            entries.append(ManifestEntry(rel, st.set_id, i))
        truths.append(GroundTruthTree(st.set_id, st.truth.nodes, st.truth.immediate_edges))
    meta = {"provenance": _provenance(args, cfg), "config": cfg.to_dict(),
            "splits": {"train": [s.set_id for s in train], "val": [s.set_id for s in val],
                       "test": [s.set_id for s in test]}}
    path = _out(args, "manifest.jsonl")
    write_manifest(DatasetManifest(entries, truths, meta), path)
    log.info("wrote %d images in %d sets to %s", len(entries), len(sets), path)
    return path


def cmd_extract(args, cfg):
    _, groups = _load_sets(args.manifest)
    index = {}
    for s, members in groups.items():
        for node, im in members:
            name = f"{s}_{node}.prnu"
            _write_bytes(_out(args, "residuals", name), dump_residual(enhanced_residual(im, **cfg.noise_kw)))
            index[_key(s, node)] = os.path.join("residuals", name)
    _dump(_out(args, "residuals.json"), {"provenance": _provenance(args, cfg), "files": index})


def cmd_cluster(args, cfg):
    _, groups = _load_sets(args.manifest)
    keys = [_key(s, n) for s, m in groups.items() for n, _ in m]
    images = [im for m in groups.values() for _, im in m]
    ca = cluster_images(images, eta=cfg.eta, rng=np.random.default_rng(args.seed),
                        mode=cfg.bandwidth, convention=cfg.spectrum,
                        normalized=cfg.distance == "normalized", **cfg.noise_kw)
    truth = [k.rsplit(":", 1)[0] for k in keys]
    score = clustering_accuracy(ca, truth)
    _dump(_out(args, "clusters.json"), {
        "provenance": _provenance(args, cfg), "k": ca.k,
        "labels": {k: int(v) for k, v in zip(keys, ca.labels)},
        "accuracy_vs_sets": score.accuracy,
    })


def cmd_train(args, cfg):
    man, groups = _load_sets(args.manifest, need_truth=True)
    train = _synthetic_sets(man, groups, _split(man, groups, "train"))
    has_splits = "splits" in (man.meta or {})
    val = _synthetic_sets(man, groups, _split(man, groups, "val")) if has_splits else []
    model, hist = E.train_depth_model(train, val, cfg, seed=args.seed)
    model.meta = {**model.meta, "provenance": _provenance(args, cfg)}
    path = _out(args, "model.json")
    atomic_write_text(path, model.to_json() + "\n")
    _dump(_out(args, "history.json"), {"provenance": _provenance(args, cfg), "history": hist})
    return path


def _tree_record(tree, set_id=None):
    rec = tree.to_record()
    if set_id is not None:
        rec["set_id"] = set_id
    return rec


def _forest_dot(trees, name):
    return export_dot(PhyloForest(None, trees), name)


def cmd_reconstruct(args, cfg):
    man, groups = _load_sets(args.manifest)
    with open(args.model, encoding="utf-8") as fh:
        model = ChebNetModel.from_json(fh.read())
    set_ids = _split(man, groups, "test")
    trees, records = [], []
    if args.mode == "ipt":
        for s in set_ids:
            nodes = [n for n, _ in groups[s]]
            st = E.SyntheticSet(s, "", 0, [im for _, im in groups[s]], None)
            t = E.reconstruct_sets(model, [st], cfg)[0]
            keyed = _rekey(t, [_key(s, n) for n in nodes])
            trees.append(keyed)
            records.append(_tree_record(keyed, s))
        assignment = None
    else:
        keys = [_key(s, n) for s in set_ids for n, _ in groups[s]]
        images = [im for s in set_ids for _, im in groups[s]]
        forest = E.reconstruct_forest(model, images, cfg, seed=args.seed)
        for t in forest.trees:
            keyed = _rekey(t, [keys[i] for i in t.nodes])
            trees.append(keyed)
            records.append(_tree_record(keyed))
        assignment = {k: int(v) for k, v in zip(keys, forest.assignment.labels)}
    _dump(_out(args, "forest.json"), {"provenance": _provenance(args, cfg), "mode": args.mode,
                                      "assignment": assignment, "trees": records})
    dot = _forest_dot(trees, "ipf")
    prov = _provenance(args, cfg)
    atomic_write_text(_out(args, "forest.dot"),
                      f"// ndphylo {prov['version']} seed={prov['seed']} config={prov['config_hash']}\n" + dot)


def _rekey(tree, keys):
    """Replace the tree's node ids, in order, by string keys."""
    m = dict(zip(tree.nodes, keys))
    return PhyloTree(
        nodes=[m[n] for n in tree.nodes], root=m[tree.root],
        parent={m[c]: m[p] for c, p in tree.parent.items()},
        depth={m[n]: d for n, d in tree.depth.items()},
        immediate_edges=sorted((m[p], m[c]) for p, c in tree.immediate_edges),
        ancestral_edges=sorted((m[p], m[c]) for p, c in tree.ancestral_edges),
        diagnostics={k: ([m[x] for x in v] if k == "ranked_roots" else v)
                     for k, v in tree.diagnostics.items() if k != "depth_overrides"},
    )


def _tree_from_record(rec):
    return PhyloTree(rec["nodes"], rec["root"], {c: p for c, p in rec["parent"]},
                     {n: d for n, d in rec["depth"]}, [tuple(e) for e in rec["immediate_edges"]],
                     [tuple(e) for e in rec["ancestral_edges"]], rec.get("diagnostics", {}))


def cmd_evaluate(args, cfg):
    man, groups = _load_sets(args.manifest, need_truth=True)
    with open(args.forest, encoding="utf-8") as fh:
        forest = json.load(fh)
    trees = [_tree_from_record(r) for r in forest["trees"]]
    by_nodes = {frozenset(t.nodes): t for t in trees}
    recons, truths, groups_of = [], [], []
    scored_sets = sorted({k.rsplit(":", 1)[0] for t in trees for k in t.nodes})
    for s in scored_sets:
        gt = man.truth_for(s)
        keyed = GroundTruthTree(s, [_key(s, n) for n in gt.nodes],
                                [(_key(s, p), _key(s, c)) for p, c in gt.immediate_edges])
        t = by_nodes.get(frozenset(keyed.nodes))
        if t is None:
            continue  # the forest split this set differently; counted in the clustering score
        recons.append(t)
        truths.append(keyed)
        groups_of.append(s.split("-")[-1])
    cluster_scores = None
    if forest.get("assignment"):
        keys = sorted(forest["assignment"])
        cluster_scores = [clustering_accuracy([forest["assignment"][k] for k in keys],
                                              [k.rsplit(":", 1)[0] for k in keys])]
    if not recons:
        raise UsageError("no reconstructed tree matches a ground-truth set")
    ranks = sorted({1, 2, cfg.rank})
    report = build_report(recons, truths, groups=groups_of, ranks=ranks,
                          cluster_scores=cluster_scores,
                          meta={"provenance": _provenance(args, cfg),
                                "sets_scored": len(recons), "sets_total": len(scored_sets)})
    atomic_write_text(_out(args, "report.json"), report.to_json())
    atomic_write_text(_out(args, "report.txt"), report.to_table())
    sys.stdout.write(report.to_table())
    return report


def cmd_pipeline(args, cfg):
    args.manifest = cmd_synth(args, cfg)
    args.model = cmd_train(args, cfg)
    cmd_reconstruct(args, cfg)
    args.forest = os.path.join(args.out, "forest.json")
    return cmd_evaluate(args, cfg)


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic corpus and its manifest"),
    "extract": (cmd_extract, "write the residual cache for a manifest"),
    "cluster": (cmd_cluster, "cluster all images of a manifest into trees"),
    "train": (cmd_train, "train the depth network on the manifest's training split"),
    "reconstruct": (cmd_reconstruct, "reconstruct trees for the manifest's test split"),
    "evaluate": (cmd_evaluate, "score a forest against the manifest ground truth"),
    "pipeline": (cmd_pipeline, "synth, train, reconstruct and evaluate in one go"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="TOML file with experiment settings")
    common.add_argument("--eta", type=float, help="eigenvalue threshold for the cluster count")
    common.add_argument("--rank", type=int, help="report root accuracy up to this rank")
    common.add_argument("--class", dest="cls", choices=("photometric", "geometric", "mixed"))
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="ndphylo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ndphylo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name in ("extract", "cluster", "train", "reconstruct", "evaluate"):
            sp.add_argument("--manifest", required=True)
        if name == "reconstruct":
            sp.add_argument("--model", required=True)
        if name in ("reconstruct", "pipeline"):
            sp.add_argument("--mode", choices=("ipt", "ipf"), default="ipt",
                            help="reconstruct each known set, or cluster the pooled images first")
        if name == "evaluate":
            sp.add_argument("--forest", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, eta=args.eta, rank=args.rank, cls=args.cls)
        os.makedirs(args.out, exist_ok=True)
        log.info("%s seed=%d config=%s", args.command, args.seed, cfg.digest())
        COMMANDS[args.command][0](args, cfg)
    except (UsageError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ndphylo {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
