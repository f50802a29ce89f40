"""Command-line pipeline: graph in, images, trained classifier and
attributions out.

Subcommand grammar: ``g2i <subcommand> [--config PATH] [--seed N] [flags...]``.
The config file is flat ``key=value`` UTF-8 text (``#`` comments); CLI flags
override file values. All randomness derives from one root seed via a fixed
per-stage derivation.
"""

from __future__ import annotations

import argparse
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attribution, cnn, community, imaging, metrics, transport  # noqa: F401
from .errors import G2IError
from .graph import generate_sbm, load_graph, split_dataset, write_graph


def stage_seed(root, name):
    """Stable per-stage seed derived from the root seed and stage name."""
    return (root ^ zlib.crc32(name.encode("utf-8"))) & 0xFFFFFFFF


@dataclass
class PipelineConfig:
    edges: str = ""
    features: str = ""
    labels: str = ""
    out: str = ""
    modalities: dict = field(default_factory=dict)   # name -> feature CSV path
    seed: int = 0
    p_override: int | None = None
    epsilon: float = 0.0
    restarts: int = 20
    ratios: tuple = (0.70, 0.15, 0.15)
    learning_rate: float = 3e-4
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 20
    n_hvf: int = 1000
    n_permutations: int = 64
    # synth parameters
    blocks: tuple = (60, 60, 60, 60)
    p_in: float = 0.3
    p_out: float = 0.02
    k: int = 64
    signal: float = 1.5


def parse_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise G2IError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def build_config(args):
    raw = parse_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = PipelineConfig()
    simple = {
        "edges": str, "features": str, "labels": str, "out": str,
        "seed": int, "epsilon": float, "restarts": int,
        "learning_rate": float, "momentum": float, "batch_size": int,
        "max_epochs": int, "n_hvf": int, "n_permutations": int,
        "p_in": float, "p_out": float, "k": int, "signal": float,
    }
    for key, conv in simple.items():
        if key in raw:
            setattr(cfg, key, conv(raw[key]))
    if "p" in raw:
        cfg.p_override = int(raw["p"])
    if "blocks" in raw:
        cfg.blocks = tuple(int(b) for b in raw["blocks"].split(","))
    if "ratios" in raw:
        cfg.ratios = tuple(float(r) for r in raw["ratios"].split(","))
    for key, value in raw.items():
        if key.startswith("modality."):
            cfg.modalities[key.split(".", 1)[1]] = value
    # CLI flags override file values
    for attr in ("edges", "features", "labels", "out", "seed", "epsilon", "restarts",
                 "learning_rate", "momentum", "batch_size", "max_epochs", "n_hvf",
                 "n_permutations", "p_in", "p_out", "k", "signal"):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, attr, val)
    if getattr(args, "p", None) is not None:
        cfg.p_override = args.p
    if getattr(args, "blocks", None):
        cfg.blocks = tuple(int(b) for b in args.blocks.split(","))
    if getattr(args, "modality", None):
        for entry in args.modality:
            name, _, path = entry.partition("=")
            if not path:
                raise G2IError(f"--modality expects name=path, got {entry!r}")
            cfg.modalities[name] = path
    return cfg


# --- artifact paths ---

def _paths(cfg):
    out = Path(cfg.out)
    return {
        "edges": out / "edges.tsv",
        "features": out / "features.csv",
        "labels": out / "labels.csv",
        "communities": out / "communities.csv",
        "centroids": out / "centroids.g2t",
        "s_layout": out / "structural_layout.csv",
        "images": out / "images.g2t",
        "checkpoint": out / "checkpoint.g2t",
        "report": out / "report.csv",
        "eval": out / "eval.csv",
        "importance": out / "importance.csv",
        "dendrogram": out / "class_dendrogram.nwk",
        "metrics": out / "metrics.csv",
        "debug_image": out / "image0.csv",
    }


def _f_layout_path(cfg, name):
    return Path(cfg.out) / f"feature_layout_{name}.csv"


def _require_out(cfg):
    if not cfg.out:
        raise G2IError("--out DIR is required for this command")
    Path(cfg.out).mkdir(parents=True, exist_ok=True)


def _load_ingested(cfg):
    p = _paths(cfg)
    labels = p["labels"] if p["labels"].exists() else None
    return load_graph(p["edges"], p["features"], labels)


def _modality_list(cfg, graph):
    """(name, feature matrix, feature names) per modality; primary first."""
    mods = [("features", graph.features, list(graph.feature_names))]
    for name in sorted(cfg.modalities):
        ids, F, fnames = _read_feature_csv(cfg.modalities[name], graph.node_ids)
        mods.append((name, F, fnames))
    return mods


def _read_feature_csv(path, node_ids):
    from .graph import _read_features

    ids, F, names = _read_features(path)
    index = {nid: i for i, nid in enumerate(ids)}
    rows = np.array([index[nid] for nid in node_ids])
    return ids, F[rows], names


# --- stages ---

def stage_synth(cfg):
    _require_out(cfg)
    graph = generate_sbm(cfg.blocks, cfg.p_in, cfg.p_out, cfg.k, cfg.signal,
                         stage_seed(cfg.seed, "synth"))
    p = _paths(cfg)
    write_graph(graph, p["edges"], p["features"], p["labels"])
    return graph


def stage_ingest(cfg):
    _require_out(cfg)
    graph = load_graph(cfg.edges, cfg.features, cfg.labels or None)
    p = _paths(cfg)
    write_graph(graph, p["edges"], p["features"], p["labels"] if graph.labels is not None else None)
    return graph


def stage_cluster(cfg):
    graph = _load_ingested(cfg)
    P = cfg.p_override or community.community_count(graph.k)
    model = community.fit_communities(graph, P, stage_seed(cfg.seed, "cluster"))
    p = _paths(cfg)
    community.write_communities(model, graph, p["communities"])
    imaging.write_named_tensors([("centroids", -1, model.centroids)], (), p["centroids"])
    return model


def _load_model(cfg, graph):
    p = _paths(cfg)
    assignment = community.read_assignment(p["communities"], graph.node_ids)
    entries, _ = imaging.read_named_tensors(p["centroids"])
    centroids = entries[0][2].astype(np.float64)
    return community.CommunityModel(
        P=centroids.shape[0], centroids=centroids, assignment=assignment,
        inertia_history=(), seed=stage_seed(cfg.seed, "cluster"),
    )


def stage_layout(cfg):
    graph = _load_ingested(cfg)
    model = _load_model(cfg, graph)
    assoc = community.association_matrix(model)
    seed = stage_seed(cfg.seed, "layout")
    s_layout = imaging.build_structural_layout(assoc, seed, cfg.epsilon, cfg.restarts)
    p = _paths(cfg)
    imaging.write_layout(s_layout.layout, [f"community{i}" for i in range(model.P)], p["s_layout"])
    mods = _modality_list(cfg, graph)
    side = max(imaging._ceil_sqrt(F.shape[1]) for _, F, _ in mods)
    for i, (name, F, fnames) in enumerate(mods):
        fl = imaging.build_feature_layout(F, stage_seed(cfg.seed, f"layout.{name}"),
                                          cfg.epsilon, cfg.restarts, grid_side=side)
        imaging.write_layout(fl.layout, fnames, _f_layout_path(cfg, name))
    return s_layout


def _load_layouts(cfg, graph, model):
    p = _paths(cfg)
    assoc = community.association_matrix(model)
    P_s = imaging._ceil_sqrt(model.P)
    s_raw, _ = imaging.read_layout(p["s_layout"], P_s)
    s_layout = imaging.StructuralLayout(layout=s_raw, grid_side=P_s, association=assoc)
    mods = _modality_list(cfg, graph)
    side = max(imaging._ceil_sqrt(F.shape[1]) for _, F, _ in mods)
    f_layouts = []
    for name, F, fnames in mods:
        raw, _ = imaging.read_layout(_f_layout_path(cfg, name), side)
        f_layouts.append(imaging.FeatureLayout(assoc=imaging.feature_association(F),
                                               layout=raw, grid_side=side))
    return s_layout, f_layouts, mods


def stage_render(cfg):
    graph = _load_ingested(cfg)
    model = _load_model(cfg, graph)
    s_layout, f_layouts, mods = _load_layouts(cfg, graph, model)
    image_set = imaging.render_all(
        graph, model, s_layout, f_layouts,
        modalities=[F for _, F, _ in mods],
        channel_names=["structure"] + [name for name, _, _ in mods],
        provenance={"seed": cfg.seed},
    )
    p = _paths(cfg)
    imaging.write_tensor(image_set, p["images"])
    _dump_debug_image(image_set, p["debug_image"])
    return image_set


def _dump_debug_image(image_set, path):
    img = image_set.images[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# node {img.node_id}\n")
        for ch, cname in enumerate(img.channel_names):
            fh.write(f"# channel {cname}\n")
            for row in img.tensor[:, :, ch]:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _cnn_config(cfg, image_set):
    shape = image_set.shape
    classes = int(np.asarray(image_set.labels).max()) + 1
    return cnn.ConvNetConfig(
        input_side=shape[0], input_channels=shape[2], classes=classes,
        learning_rate=cfg.learning_rate, momentum=cfg.momentum,
        batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
        seed=stage_seed(cfg.seed, "train"),
    )


def _split_for(cfg, image_set):
    return split_dataset(image_set.labels, cfg.ratios, stage_seed(cfg.seed, "split"))


def stage_train(cfg):
    p = _paths(cfg)
    image_set = imaging.read_tensor(p["images"])
    if image_set.labels is None:
        raise G2IError("training requires labeled images")
    split = _split_for(cfg, image_set)
    config = _cnn_config(cfg, image_set)
    params, report = cnn.train(image_set, split, config)
    cnn.save_checkpoint(params, p["checkpoint"])
    cnn.write_report(report, p["report"])
    return params, report


def stage_eval(cfg):
    p = _paths(cfg)
    image_set = imaging.read_tensor(p["images"])
    split = _split_for(cfg, image_set)
    config = _cnn_config(cfg, image_set)
    params = cnn.load_checkpoint(p["checkpoint"], config)
    result = cnn.evaluate(params, image_set, split.test)
    with open(p["eval"], "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for key in ("accuracy", "macro_precision", "macro_recall", "macro_f1"):
            fh.write(f"{key},{result[key]!r}\n")
    return result


def stage_explain(cfg):
    p = _paths(cfg)
    graph = _load_ingested(cfg)
    model = _load_model(cfg, graph)
    s_layout, f_layouts, mods = _load_layouts(cfg, graph, model)
    image_set = imaging.read_tensor(p["images"])
    split = _split_for(cfg, image_set)
    config = _cnn_config(cfg, image_set)
    params = cnn.load_checkpoint(p["checkpoint"], config)
    predict = lambda batch: cnn.predict_proba(params, batch)

    feature_sets = [attribution.select_hvf(F, cfg.n_hvf) for _, F, _ in mods]
    players = attribution.hvf_players(f_layouts, feature_sets)
    shap_cfg = attribution.ShapConfig(
        n_hvf=cfg.n_hvf, n_permutations=cfg.n_permutations,
        background=tuple(range(len(image_set.images))),
        seed=stage_seed(cfg.seed, "explain"),
    )
    class_names = graph.class_names or tuple(
        f"class{i}" for i in range(config.classes)
    )
    attr = attribution.class_global_importance(
        predict, image_set, split.test, config.classes, players, shap_cfg
    )
    table = attribution.map_to_features(
        attr, f_layouts, [fnames for _, _, fnames in mods], class_names,
        modality_names=[name for name, _, _ in mods],
    )
    table.to_csv(p["importance"])

    # class-level dendrogram over raw SHAP profiles
    profiles = np.array([
        [r["raw"] for r in table.rows if r["class"] == cname] for cname in class_names
    ])
    if len(class_names) >= 2:
        dend = attribution.cluster_profiles(profiles, labels=list(class_names))
        with open(p["dendrogram"], "w", encoding="utf-8") as fh:
            fh.write(attribution.dendrogram_to_newick(dend) + "\n")
    return table


def stage_metrics(cfg):
    p = _paths(cfg)
    image_set = imaging.read_tensor(p["images"])
    if image_set.labels is None:
        raise G2IError("metrics require labeled images")
    embedding = np.stack([img.tensor.reshape(-1) for img in image_set.images]).astype(np.float64)
    scores = metrics.score_embedding(embedding, image_set.labels,
                                     seed=stage_seed(cfg.seed, "metrics"))
    metrics.write_scores({"g2i": scores}, p["metrics"])
    return scores


RUN_ORDER = [
    ("ingest", stage_ingest),
    ("cluster", stage_cluster),
    ("layout", stage_layout),
    ("render", stage_render),
    ("train", stage_train),
    ("eval", stage_eval),
    ("explain", stage_explain),
    ("metrics", stage_metrics),
]


def cmd_run(cfg):
    _require_out(cfg)
    for name, fn in RUN_ORDER:
        _run_stage(name, fn, cfg)
    return 0


def _run_stage(name, fn, cfg):
    try:
        return fn(cfg)
    except (G2IError, OSError) as exc:
        print(f"error in stage {name}: {exc}", file=sys.stderr)
        raise SystemExit(1) from exc


STAGES = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "cluster": stage_cluster,
    "layout": stage_layout,
    "render": stage_render,
    "train": stage_train,
    "eval": stage_eval,
    "explain": stage_explain,
    "metrics": stage_metrics,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="g2i", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*STAGES, "run"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--edges")
        sp.add_argument("--features")
        sp.add_argument("--labels")
        sp.add_argument("--modality", action="append",
                        help="name=path, repeatable for extra feature files")
        sp.add_argument("--p", type=int, help="community count override")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--restarts", type=int)
        sp.add_argument("--learning-rate", dest="learning_rate", type=float)
        sp.add_argument("--momentum", type=float)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--max-epochs", dest="max_epochs", type=int)
        sp.add_argument("--n-hvf", dest="n_hvf", type=int)
        sp.add_argument("--n-permutations", dest="n_permutations", type=int)
        sp.add_argument("--blocks", help="comma-separated block sizes (synth)")
        sp.add_argument("--p-in", dest="p_in", type=float)
        sp.add_argument("--p-out", dest="p_out", type=float)
        sp.add_argument("--k", type=int, help="feature count (synth)")
        sp.add_argument("--signal", type=float, help="planted signal strength (synth)")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (G2IError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "run":
        try:
            return cmd_run(cfg)
        except SystemExit as exc:
            return exc.code
    _require_out(cfg)
    try:
        _run_stage(args.command, STAGES[args.command], cfg)
    except SystemExit as exc:
        return exc.code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
