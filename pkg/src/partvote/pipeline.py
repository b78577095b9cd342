"""End-to-end orchestration: dataset preparation, training, evaluation with
perturbation variants, ablation grid, and metrics export.
"""

from __future__ import annotations

import logging
import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import (EVAL_VARIANTS, LabeledObject, augment_normal_noise,
                   augment_occlusion, inject_background,
                   perturb_eval_variant, synth_dataset)
from .geometry import load_cloud
from .network import PartVoteNet, PreparedObject
from .partgraph import GrowConfig, build_part_graph

log = logging.getLogger(__name__)

# Published transfer results at full training scale are directional context
# only; nothing in this repository asserts them.
PROVENANCE_NOTE = (
    "NOTE: reference accuracies reported for full-scale artificial-to-real "
    "transfer benchmarks (e.g. 52.7 / 47.2 / 41.7 on the real-scan test set "
    "without background for the clean / T25 / T50_RS variants) require "
    "ModelNet-scale training and are NOT asserted or reproduced by this "
    "desk-scale test suite."
)


@dataclass
class MetricsReport:
    variant: str
    confusion: np.ndarray            # (C, C), rows = true class
    num_skipped: int
    wall_clock: float
    config_text: str
    class_names: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("empty evaluation: no objects were scored")
        return float(np.trace(self.confusion)) / self.total

    @property
    def class_accuracy(self) -> float:
        counts = self.confusion.sum(axis=1)
        present = counts > 0
        if not present.any():
            raise ValueError("empty evaluation: no objects were scored")
        recalls = np.diag(self.confusion)[present] / counts[present]
        return float(recalls.mean())

    def format_table(self) -> str:
        names = self.class_names or [str(i) for i in range(len(self.confusion))]
        width = max(8, max(len(n) for n in names) + 1)
        lines = [
            f"variant: {self.variant}",
            f"objects scored: {self.total}   skipped: {self.num_skipped}",
            f"accuracy: {self.accuracy:.4f}",
            f"class-mean accuracy: {self.class_accuracy:.4f}",
            f"wall-clock: {self.wall_clock:.1f}s",
            "",
            " " * width + "".join(f"{n:>{width}}" for n in names) + "  (predicted)",
        ]
        for i, name in enumerate(names):
            row = "".join(f"{int(v):>{width}}" for v in self.confusion[i])
            lines.append(f"{name:<{width}}" + row)
        lines.append("")
        lines.append(PROVENANCE_NOTE)
        return "\n".join(lines)

    def machine_lines(self) -> str:
        rows = [
            ("accuracy", self.variant, f"{self.accuracy:.6f}"),
            ("class_accuracy", self.variant, f"{self.class_accuracy:.6f}"),
            ("objects", self.variant, str(self.total)),
            ("skipped", self.variant, str(self.num_skipped)),
        ]
        return "\n".join("\t".join(r) for r in rows) + "\n"

    def write(self, path_prefix: str):
        """Human table to <prefix>.txt, machine lines to <prefix>.tsv.

        Both embed the exact configuration that produced them.
        """
        with open(path_prefix + ".txt", "w") as fh:
            fh.write(self.format_table() + "\n\n# configuration\n" + self.config_text)
        with open(path_prefix + ".tsv", "w") as fh:
            fh.write(self.machine_lines())
            for line in self.config_text.splitlines():
                fh.write(f"# {line}\n")


def grow_config(config: RunConfig) -> GrowConfig:
    return GrowConfig(
        angle_threshold=config.angle_threshold,
        max_parts=config.max_parts,
        points_per_part=config.points_per_part,
        knn=config.knn,
        real_data_multiplier=config.real_data_multiplier,
    )


def build_object_graph(obj: LabeledObject, config: RunConfig, rng: np.random.Generator):
    return build_part_graph(
        obj.cloud, grow_config(config), rng,
        use_spatial_fallback=config.use_spatial_fallback,
        cone_half_angle=config.cone_half_angle,
        hemisphere_margin=config.hemisphere_margin,
        real_data=config.real_data,
    )


def prepare_object(net: PartVoteNet, obj: LabeledObject, config: RunConfig,
                   rng: np.random.Generator) -> PreparedObject | None:
    """Part graph plus network-ready tensors; None when the object degenerates."""
    graph = build_object_graph(obj, config, rng)
    if len(graph.parts) < 2:
        log.warning("object %s produced %d parts; skipped", obj.object_id, len(graph.parts))
        return None
    return net.prepare(graph, obj.cloud.bounding_radius, obj.label, obj.object_id,
                       object_points=obj.object_points)


def _object_rng(seed, *tags):
    # crc32 keeps the derived seeds stable across processes (str hash is salted)
    return np.random.default_rng([seed, *(zlib.crc32(str(t).encode()) for t in tags)])


def make_datasets(config: RunConfig):
    """Synthetic train/test corpora, or a class-per-subdirectory file tree."""
    if config.data_dir:
        return load_directory(config.data_dir)
    classes = config.class_list
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    rng_train = np.random.default_rng([config.seed, 101])
    rng_test = np.random.default_rng([config.seed, 202])
    scale_range = (config.scale_min, config.scale_max)
    train = synth_dataset(classes, config.n_train_per_class, config.n_points,
                          config.shape_noise, rng_train, scale_range, split="train")
    test = synth_dataset(classes, config.n_test_per_class, config.n_points,
                         config.shape_noise, rng_test, scale_range, split="test")
    return train, test, classes


def load_directory(root):
    """<root>/[train|test]/<class>/<file>.{off,ply,xyz,xyzn}; a tree without
    the split level puts everything in train."""
    splits = {}
    entries = sorted(os.listdir(root))
    if "train" in entries or "test" in entries:
        for split in ("train", "test"):
            path = os.path.join(root, split)
            if os.path.isdir(path):
                splits[split] = path
    else:
        splits["train"] = root
    class_names = sorted({
        d for p in splits.values() for d in os.listdir(p)
        if os.path.isdir(os.path.join(p, d))
    })
    if len(class_names) < 2:
        raise ValueError(f"need at least 2 class subdirectories under {root}")
    out = {"train": [], "test": []}
    for split, base in splits.items():
        for label, cname in enumerate(class_names):
            cdir = os.path.join(base, cname)
            if not os.path.isdir(cdir):
                continue
            for fname in sorted(os.listdir(cdir)):
                if os.path.splitext(fname)[1].lower() not in (".off", ".ply", ".xyz", ".xyzn"):
                    continue
                cloud = load_cloud(os.path.join(cdir, fname))
                out[split].append(LabeledObject(cloud, label, split=split,
                                                object_id=f"{split}/{cname}/{fname}"))
    return out["train"], out["test"], class_names


@dataclass
class TrainResult:
    net: PartVoteNet
    checkpoint_path: str
    report: MetricsReport
    loss_history: list[float]
    class_names: list[str]


def _augmented(obj: LabeledObject, config: RunConfig, rng) -> LabeledObject:
    cloud = obj.cloud
    has_background = obj.has_background
    object_points = obj.object_points
    if config.augment_normal_noise > 0:
        cloud = augment_normal_noise(cloud, config.augment_normal_noise, rng)
    if config.augment_occlusion:
        cloud = augment_occlusion(cloud, rng)
    if config.augment_background:
        object_points = len(cloud)
        cloud = inject_background(cloud, rng)
        has_background = True
    return LabeledObject(cloud, obj.label, obj.split, has_background,
                         obj.object_id, object_points)


def train(config: RunConfig, train_objects=None, class_names=None) -> TrainResult:
    """Full training loop; deterministic under a fixed seed.

    Gradients are accumulated over ``batch_objects`` objects per optimizer
    step. Part graphs are re-grown each epoch (a cheap, strong augmentation
    against segmentation sensitivity) unless ``resegment`` is off and no
    other augmentation forces it.
    """
    if train_objects is None:
        train_objects, _, class_names = make_datasets(config)
    if class_names is None:
        class_names = config.class_list
    num_classes = max(o.label for o in train_objects) + 1
    net = PartVoteNet(config, num_classes, np.random.default_rng([config.seed, 7]))

    augmenting = (config.augment_occlusion or config.augment_normal_noise > 0
                  or config.augment_background)
    fresh_each_epoch = augmenting or config.resegment
    cached = None
    if not fresh_each_epoch:
        cached = [prepare_object(net, o, config, _object_rng(config.seed, "graph", o.object_id))
                  for o in train_objects]

    os.makedirs(config.out_dir, exist_ok=True)
    checkpoint_path = os.path.join(config.out_dir, "checkpoint.npz")
    t0 = time.time()
    history = []
    epoch_rng = np.random.default_rng([config.seed, 11])
    for epoch in range(config.epochs):
        if fresh_each_epoch:
            preps = []
            for o in train_objects:
                rng = _object_rng(config.seed, "aug", epoch, o.object_id)
                preps.append(prepare_object(net, _augmented(o, config, rng), config, rng))
        else:
            preps = cached
        order = epoch_rng.permutation(len(preps))
        losses = []
        pending = 0
        net.store.zero_grad()
        for oi in order:
            prep = preps[oi]
            if prep is None:
                continue
            loss, _ = net.loss(prep, training=True)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite loss on object {prep.object_id!r} "
                                   f"(epoch {epoch})")
            loss.backward()
            losses.append(value)
            pending += 1
            if pending >= config.batch_objects:
                net.store.adam_step(lr=config.lr)
                net.store.zero_grad()
                pending = 0
        if pending:
            net.store.adam_step(lr=config.lr)
            net.store.zero_grad()
        history.append(float(np.mean(losses)))
        net.store.save(checkpoint_path, extra_text={"config": config.to_text(),
                                                    "classes": ",".join(class_names),
                                                    "epoch": str(epoch)})
    report = evaluate(net, train_objects, "none", config, class_names=class_names)
    report.wall_clock = time.time() - t0
    return TrainResult(net, checkpoint_path, report, history, class_names)


def load_checkpoint(path, config: RunConfig | None = None):
    """Rebuild a network from a checkpoint's embedded config and weights."""
    with np.load(path, allow_pickle=False) as zf:
        config_text = str(zf["text/config"])
        class_names = str(zf["text/classes"]).split(",")
    cfg = config if config is not None else RunConfig.from_text(config_text)
    net = PartVoteNet(cfg, len(class_names), np.random.default_rng(0))
    net.store.load_state(path)
    return net, class_names


def evaluate(net: PartVoteNet, objects, variant: str, config: RunConfig,
             class_names=None) -> MetricsReport:
    """Per-variant accuracy, class-mean accuracy and confusion matrix."""
    if variant not in EVAL_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if not objects:
        raise ValueError("empty evaluation set")
    labels = {o.label for o in objects}
    if max(labels) >= net.num_classes:
        raise ValueError(f"label {max(labels)} outside the checkpoint's "
                         f"{net.num_classes} classes")
    t0 = time.time()
    confusion = np.zeros((net.num_classes, net.num_classes), dtype=np.int64)
    skipped = 0
    for obj in objects:
        rng = _object_rng(config.seed, "eval", variant, obj.object_id)
        perturbed = perturb_eval_variant(obj, variant, rng)
        if perturbed is None:
            skipped += 1
            continue
        # graph randomness keyed by the object only, so an unperturbed object
        # segments exactly as it did during training
        graph_rng = _object_rng(config.seed, "graph", obj.object_id)
        prep = prepare_object(net, perturbed, config, graph_rng)
        if prep is None:
            skipped += 1
            continue
        confusion[obj.label, net.predict(prep)] += 1
    return MetricsReport(
        variant=variant,
        confusion=confusion,
        num_skipped=skipped,
        wall_clock=time.time() - t0,
        config_text=config.to_text(),
        class_names=list(class_names or []),
    )


ABLATION_GRID = (("skpconv", "votemaxpool"), ("skpconv", "maxpool"),
                 ("kpconv", "votemaxpool"), ("kpconv", "maxpool"))


def ablate(config: RunConfig, seeds=(0, 1, 2)) -> dict:
    """Train every (layer, pooling) combination and evaluate clean and
    cluttered variants; returns mean accuracies over the seeds."""
    results = {}
    for layer, pooling in ABLATION_GRID:
        clean, cluttered = [], []
        for seed in seeds:
            cfg = RunConfig(**{**config.__dict__, "layer": layer,
                               "pooling": pooling, "seed": seed})
            train_objects, test_objects, class_names = make_datasets(cfg)
            result = train(cfg, train_objects, class_names)
            clean.append(evaluate(result.net, test_objects, "none", cfg, class_names).accuracy)
            cluttered.append(evaluate(result.net, test_objects, "background", cfg,
                                      class_names).accuracy)
        results[(layer, pooling)] = {
            "clean": float(np.mean(clean)),
            "background": float(np.mean(cluttered)),
        }
    return results


def format_ablation(results: dict) -> str:
    lines = [f"{'layer':<10}{'pooling':<14}{'clean':>8}{'backg.':>8}"]
    for (layer, pooling), accs in results.items():
        lines.append(f"{layer:<10}{pooling:<14}{accs['clean']:>8.3f}{accs['background']:>8.3f}")
    return "\n".join(lines)
