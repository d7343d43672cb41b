"""Experiment orchestration: a content-addressed job graph over the stages
features -> remove -> encode -> ceiling -> normalize -> stats -> report.

Every node's key hashes its operation id, the bytes of its input files, and
the config slice it reads; a node re-executes only when the key changed or an
output is missing, so a clean re-run touches nothing and corrupting a cached
file re-executes exactly the consumers downstream of it.  All artifacts are
files; the report stage recomposes purely from persisted intermediates.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import ceiling as ceiling_mod
from . import encoding as encoding_mod
from . import residual as residual_mod
from . import stats as stats_mod
from . import stimulus_features as sf
from . import synth as synth_mod
from .data_model import (ConfigError, ExperimentConfig, ValidationError, atomic_write_bytes,
                         derive_seed, dump_json, load_annotation, load_atlas,
                         load_feature_matrix, load_response_matrix, save_feature_matrix,
                         save_npy, subset_story_offsets, validate_experiment)
from .temporal import align_to_tr, zscore_split


def _tr_grid_of(rm) -> tuple[list[int], float]:
    lengths = np.diff(np.append(rm.story_offsets, rm.n_trs))
    return [int(x) for x in lengths], rm.tr_seconds


class PipelineError(Exception):
    def __init__(self, node_id: str, cause: BaseException):
        super().__init__(f"node {node_id!r} failed: {cause}")
        self.node_id = node_id
        self.cause = cause


@dataclass(eq=False)
class Node:
    node_id: str
    op: str
    inputs: list[Path]
    outputs: list[Path]
    config_slice: dict
    fn: Callable[[], None]
    deps: list[str] = field(default_factory=list)


@dataclass
class RunResult:
    executed: list[str]
    skipped: list[str]

    @property
    def n_executed(self) -> int:
        return len(self.executed)


class JobGraph:
    """Acyclic node collection with content-hash freshness tracking."""

    def __init__(self, base_dir: Path, cache_dir: Path):
        self.base_dir = Path(base_dir)
        self.cache_dir = Path(cache_dir)
        self.nodes: dict[str, Node] = {}

    def add(self, node: Node) -> Node:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node {node.node_id!r}")
        for dep in node.deps:
            if dep not in self.nodes:
                raise ValueError(f"node {node.node_id!r} depends on unknown {dep!r}")
        self.nodes[node.node_id] = node
        return node

    def topo_order(self, targets: list[str]) -> list[str]:
        order: list[str] = []
        seen: dict[str, int] = {}  # 0 visiting, 1 done

        def visit(nid: str):
            state = seen.get(nid)
            if state == 1:
                return
            if state == 0:
                raise ValueError(f"dependency cycle through {nid!r}")
            seen[nid] = 0
            for dep in self.nodes[nid].deps:
                visit(dep)
            seen[nid] = 1
            order.append(nid)

        for t in targets:
            visit(t)
        return order

    # -- freshness ----------------------------------------------------------

    def _manifest_path(self) -> Path:
        return self.cache_dir / "manifest.json"

    def load_manifest(self) -> dict:
        path = self._manifest_path()
        if not path.exists():
            return {}
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except json.JSONDecodeError:
            return {}

    def save_manifest(self, manifest: dict) -> None:
        dump_json(manifest, self._manifest_path())

    def _relpath(self, path: Path) -> str:
        try:
            return str(Path(path).resolve().relative_to(self.base_dir.resolve()))
        except ValueError:
            return str(path)

    def node_key(self, node: Node) -> str:
        payload = {
            "op": node.op,
            "config": node.config_slice,
            "inputs": {self._relpath(p): _file_hash(p) for p in sorted(node.inputs)},
        }
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def is_fresh(self, node: Node, manifest: dict) -> bool:
        entry = manifest.get(node.node_id)
        if entry is None or entry.get("key") != self.node_key(node):
            return False
        return all(Path(p).exists() for p in node.outputs)

    def execute(self, node_ids: list[str], workers: int = 1) -> RunResult:
        """Run the given nodes (already topologically ordered); dependencies
        outside the list are assumed satisfied by an earlier call."""
        manifest = self.load_manifest()
        executed: list[str] = []
        skipped: list[str] = []
        lock = threading.Lock()
        done: set[str] = set()
        in_run = set(node_ids)

        def run_node(nid: str):
            node = self.nodes[nid]
            if self.is_fresh(node, manifest):
                with lock:
                    skipped.append(nid)
                    done.add(nid)
                return
            try:
                node.fn()
            except BaseException as exc:
                raise PipelineError(nid, exc) from exc
            entry = {"key": self.node_key(node),
                     "outputs": sorted(self._relpath(p) for p in node.outputs)}
            with lock:
                manifest[node.node_id] = entry
                self.save_manifest(manifest)
                executed.append(nid)
                done.add(nid)

        if workers <= 1:
            for nid in node_ids:
                run_node(nid)
        else:
            pending = set(node_ids)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                while pending:
                    ready = [nid for nid in node_ids
                             if nid in pending and all(d in done or d not in in_run
                                                       for d in self.nodes[nid].deps)]
                    if not ready:
                        raise RuntimeError("no ready nodes; dependency deadlock")
                    futures = {pool.submit(run_node, nid): nid for nid in ready}
                    for fut in futures:
                        fut.result()
                    pending -= set(ready)
        return RunResult(executed=executed, skipped=skipped)


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except FileNotFoundError:
        return "missing"
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

SUBCOMMANDS = ("features", "remove", "encode", "ceiling", "normalize", "stats",
               "report", "synth", "all")


@dataclass
class _Paths:
    features: Path
    responses: Path
    out: Path

    @property
    def encoding(self) -> Path:
        return self.out / "encoding"

    @property
    def ceiling(self) -> Path:
        return self.out / "ceiling"

    @property
    def normalized(self) -> Path:
        return self.out / "normalized"

    @property
    def stats(self) -> Path:
        return self.out / "stats"

    @property
    def report(self) -> Path:
        return self.out / "report"

    @property
    def removal(self) -> Path:
        return self.out / "removal"


def _paths(config: ExperimentConfig) -> _Paths:
    return _Paths(features=config.resolve(config.features_dir),
                  responses=config.resolve(config.responses_dir),
                  out=config.resolve(config.out_dir))


def _feature_files(paths: _Paths, name: str) -> list[Path]:
    files = [paths.features / f"{name}.npy", paths.features / f"{name}.meta.json"]
    onsets = paths.features / f"{name}.onsets.npy"
    if onsets.exists():
        files.append(onsets)
    return files


def _response_files(paths: _Paths, subject: str, modality: str) -> list[Path]:
    stem = f"{subject}_{modality}"
    return [paths.responses / f"{stem}.npy", paths.responses / f"{stem}.meta.json"]


def _parse_synth(config: ExperimentConfig) -> synth_mod.SynthSpec:
    try:
        return synth_mod.SynthSpec(**config.synth)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synth block: {exc}") from exc


def _subjects_by_modality(config: ExperimentConfig, paths: _Paths) -> dict[str, list[str]]:
    """Discover `<subject>_<modality>.npy` response files; for synth configs the
    layout is known without touching the filesystem."""
    if config.synth is not None:
        spec = _parse_synth(config)
        return {spec.modality: [f"s{i + 1:02d}" for i in range(spec.n_subjects)]}
    found: dict[str, list[str]] = {}
    for side in sorted(paths.responses.glob("*.meta.json")):
        with open(side, encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("kind") == "response" and meta["modality"] in config.modalities:
            found.setdefault(meta["modality"], []).append(meta["subject_id"])
    return {m: sorted(set(s)) for m, s in sorted(found.items())}


def _group_name(group: list[str]) -> str:
    return "+".join(group)


def build_graph(config: ExperimentConfig) -> JobGraph:
    paths = _paths(config)
    cache_dir = paths.out / "cache"
    graph = JobGraph(base_dir=config.base_dir, cache_dir=cache_dir)
    ridge_slice = {"lambda_grid": config.lambda_grid, "rng_seed": config.rng_seed,
                   "ridge": {"n_boots": config.ridge.n_boots, "chunk_len": config.ridge.chunk_len,
                             "holdout_frac": config.ridge.holdout_frac}}
    removal_slice = {**ridge_slice,
                     "removal_lambda_grid": config.removal_lambda_grid or config.lambda_grid}

    feature_stage_ids: list[str] = []

    if config.synth is not None:
        spec = _parse_synth(config)
        outputs = [paths.out / "ground_truth.json"]
        for name in ("w", "lowlevel"):
            outputs += [paths.features / f"{name}.npy", paths.features / f"{name}.meta.json"]
        for i in range(spec.n_subjects):
            outputs += _response_files(paths, f"s{i + 1:02d}", spec.modality)
        graph.add(Node(
            node_id="synth", op="synth", inputs=[], outputs=outputs,
            config_slice={"synth": config.synth},
            fn=lambda: synth_mod.write_synth(spec, paths.features, paths.responses,
                                             paths.out / "ground_truth.json")))
        feature_stage_ids.append("synth")

    feature_stage_ids += _add_feature_nodes(graph, config, paths)

    modal_subjects = _subjects_by_modality(config, paths)
    if not modal_subjects and config.synth is None:
        raise ConfigError("no response matrices found and no synth block configured")

    removals: list[tuple[str, list[str]]] = []  # (representation, group)
    for rep in config.representations:
        for group in config.remove:
            removals.append((rep, group))

    for rep, group in removals:
        grp = _group_name(group)
        resid_name = f"{rep}_minus_{grp}"
        inputs = _feature_files(paths, rep)
        for feat in group:
            inputs += _feature_files(paths, feat)
        any_mod = next(iter(modal_subjects))
        split_ref = _response_files(paths, modal_subjects[any_mod][0], any_mod)
        graph.add(Node(
            node_id=f"remove/{rep}/{grp}", op="remove",
            inputs=inputs + split_ref,
            outputs=[paths.features / f"{resid_name}.npy",
                     paths.features / f"{resid_name}.meta.json",
                     paths.removal / f"{resid_name}.json"],
            config_slice=removal_slice,
            fn=_removal_fn(config, paths, rep, group),
            deps=list(feature_stage_ids)))

    encode_targets = list(config.representations) + \
        [f"{rep}_minus_{_group_name(group)}" for rep, group in removals]

    encode_ids: dict[tuple[str, str, str], str] = {}
    for modality, subjects in modal_subjects.items():
        for subject in subjects:
            for x_name in encode_targets:
                nid = f"encode/{x_name}/{subject}/{modality}"
                deps = list(feature_stage_ids)
                if "_minus_" in x_name:
                    rep, grp = x_name.split("_minus_", 1)
                    deps.append(f"remove/{rep}/{grp}")
                stem = f"{x_name}__{subject}_{modality}"
                graph.add(Node(
                    node_id=nid, op="encode",
                    inputs=_feature_files(paths, x_name) + _response_files(paths, subject, modality),
                    outputs=[paths.encoding / f"{stem}.r.npy", paths.encoding / f"{stem}.pred.npy",
                             paths.encoding / f"{stem}.meta.json"],
                    config_slice={**ridge_slice, "n_delays": config.n_delays},
                    fn=_encode_fn(config, paths, x_name, subject, modality),
                    deps=deps))
                encode_ids[(x_name, subject, modality)] = nid

    ceiling_ids: dict[str, str] = {}
    for modality, subjects in modal_subjects.items():
        inputs = []
        for subject in subjects:
            inputs += _response_files(paths, subject, modality)
        outputs = []
        sizes = config.ceiling.subset_sizes or list(range(2, len(subjects) + 1))
        for subject in subjects:
            stem = f"{subject}_{modality}.ceiling"
            outputs += [paths.ceiling / f"{stem}.npy", paths.ceiling / f"{stem}.meta.json"]
            outputs += [paths.ceiling / f"{stem}.size{s}.npy" for s in sizes]
        graph.add(Node(
            node_id=f"ceiling/{modality}", op="ceiling", inputs=inputs, outputs=outputs,
            config_slice={**ridge_slice,
                          "ceiling": {"subset_sizes": config.ceiling.subset_sizes,
                                      "pca_cap": config.ceiling.pca_cap,
                                      "n_boots": config.ceiling.n_boots}},
            fn=_ceiling_fn(config, paths, modality, subjects),
            deps=list(feature_stage_ids)))
        ceiling_ids[modality] = f"ceiling/{modality}"

    atlas_inputs = []
    if config.atlas_csv:
        atlas_inputs = [config.resolve(config.atlas_csv), config.resolve(config.atlas_groups)]

    normalize_ids: dict[tuple[str, str, str], str] = {}
    for modality, subjects in modal_subjects.items():
        for subject in subjects:
            for x_name in encode_targets:
                stem = f"{x_name}__{subject}_{modality}"
                nid = f"normalize/{x_name}/{subject}/{modality}"
                graph.add(Node(
                    node_id=nid, op="normalize",
                    inputs=[paths.encoding / f"{stem}.r.npy",
                            paths.ceiling / f"{subject}_{modality}.ceiling.npy"] + atlas_inputs,
                    outputs=[paths.normalized / f"{stem}.norm.npy",
                             paths.normalized / f"{stem}.meta.json"],
                    config_slice={"ceiling_threshold": config.ceiling_threshold},
                    fn=_normalize_fn(config, paths, x_name, subject, modality),
                    deps=[encode_ids[(x_name, subject, modality)], ceiling_ids[modality]]))
                normalize_ids[(x_name, subject, modality)] = nid

    stats_ids: dict[tuple[str, str], str] = {}
    for modality, subjects in modal_subjects.items():
        for x_name in encode_targets:
            nid = f"stats/{x_name}/{modality}"
            inputs = []
            deps = []
            for subject in subjects:
                stem = f"{x_name}__{subject}_{modality}"
                inputs += [paths.encoding / f"{stem}.pred.npy",
                           paths.normalized / f"{stem}.meta.json",
                           paths.ceiling / f"{subject}_{modality}.ceiling.npy"]
                inputs += _response_files(paths, subject, modality)
                deps += [encode_ids[(x_name, subject, modality)],
                         normalize_ids[(x_name, subject, modality)]]
            deps.append(ceiling_ids[modality])
            graph.add(Node(
                node_id=nid, op="stats", inputs=inputs,
                outputs=[paths.stats / f"{x_name}__{modality}.json"],
                config_slice={"block_len": config.block_len,
                              "n_permutations": config.n_permutations,
                              "ceiling_threshold": config.ceiling_threshold,
                              "rng_seed": config.rng_seed},
                fn=_stats_fn(config, paths, x_name, modality, subjects),
                deps=sorted(set(deps))))
            stats_ids[(x_name, modality)] = nid

    report_inputs: list[Path] = []
    report_deps: list[str] = []
    for modality, subjects in modal_subjects.items():
        for x_name in encode_targets:
            report_inputs.append(paths.stats / f"{x_name}__{modality}.json")
            report_deps.append(stats_ids[(x_name, modality)])
            for subject in subjects:
                stem = f"{x_name}__{subject}_{modality}"
                report_inputs += [paths.encoding / f"{stem}.r.npy",
                                  paths.normalized / f"{stem}.meta.json"]
                report_deps += [encode_ids[(x_name, subject, modality)],
                                normalize_ids[(x_name, subject, modality)]]
    report_outputs = [paths.report / "roi_alignment.csv", paths.report / "before_after.csv",
                      paths.report / "summary.json"]
    for modality, subjects in modal_subjects.items():
        for rep, group in removals:
            for subject in subjects:
                report_outputs.append(
                    paths.report /
                    f"percent_decrease__{rep}_minus_{_group_name(group)}__{subject}_{modality}.npy")
    graph.add(Node(
        node_id="report", op="report", inputs=sorted(set(report_inputs)),
        outputs=report_outputs,
        config_slice={"representations": config.representations,
                      "remove": config.remove, "ceiling_threshold": config.ceiling_threshold},
        fn=_report_fn(config, paths, modal_subjects, removals),
        deps=sorted(set(report_deps))))

    return graph


# ---------------------------------------------------------------------------
# Node bodies
# ---------------------------------------------------------------------------

def _load_split_reference(paths: _Paths, modal_subjects: dict[str, list[str]]):
    modality = next(iter(modal_subjects))
    subject = modal_subjects[modality][0]
    return load_response_matrix(paths.responses / f"{subject}_{modality}.npy")


def _removal_fn(config: ExperimentConfig, paths: _Paths, rep: str, group: list[str]):
    def fn():
        ref = _load_split_reference(paths, _subjects_by_modality(config, paths))
        lengths, tr_s = _tr_grid_of(ref)
        W = align_to_tr(load_feature_matrix(paths.features / f"{rep}.npy"), lengths, tr_s)
        parts = [align_to_tr(load_feature_matrix(paths.features / f"{feat}.npy"), lengths, tr_s)
                 for feat in group]
        grp = _group_name(group)
        L = parts[0] if len(parts) == 1 else residual_mod.concat_features(parts, grp)
        if len(parts) == 1 and L.name != grp:
            L = L.with_values(L.values, name=grp)
        seed = derive_seed(config.rng_seed, "remove", rep, grp)
        grid = config.removal_lambda_grid or config.lambda_grid
        resid, record = residual_mod.remove_feature(
            L, W, grid, ref.train_mask, seed=seed,
            n_boots=config.ridge.n_boots, chunk_len=config.ridge.chunk_len,
            holdout_frac=config.ridge.holdout_frac)
        save_feature_matrix(resid, paths.features)
        dump_json({
            "feature_name": record.feature_name,
            "representation_name": record.representation_name,
            "residual_name": record.residual_name,
            "variance_explained": [float(x) for x in record.variance_explained],
            "lambda_per_target": [float(x) for x in record.model.lambda_per_target],
        }, paths.removal / f"{record.residual_name}.json")

    return fn


def _encode_fn(config: ExperimentConfig, paths: _Paths, x_name: str, subject: str, modality: str):
    def fn():
        Y = load_response_matrix(paths.responses / f"{subject}_{modality}.npy")
        lengths, tr_s = _tr_grid_of(Y)
        X = align_to_tr(load_feature_matrix(paths.features / f"{x_name}.npy"), lengths, tr_s)
        result = encoding_mod.fit_encoding(X, Y, config)
        stem = f"{x_name}__{subject}_{modality}"
        result.model = None  # weights can be huge; the report never needs them
        encoding_mod.save_encoding_result(result, paths.encoding, stem)

    return fn


def _ceiling_fn(config: ExperimentConfig, paths: _Paths, modality: str, subjects: list[str]):
    def fn():
        responses = [load_response_matrix(paths.responses / f"{s}_{modality}.npy")
                     for s in subjects]
        maps = ceiling_mod.cross_subject_ceiling(responses, config)
        for cm in maps.values():
            ceiling_mod.save_ceiling_map(cm, paths.ceiling)

    return fn


def _normalize_fn(config: ExperimentConfig, paths: _Paths, x_name: str, subject: str, modality: str):
    def fn():
        stem = f"{x_name}__{subject}_{modality}"
        result = encoding_mod.load_encoding_result(paths.encoding, stem)
        cm = ceiling_mod.load_ceiling_map(paths.ceiling, f"{subject}_{modality}.ceiling")
        atlas = None
        if config.atlas_csv:
            atlas = load_atlas(config.resolve(config.atlas_csv),
                               config.resolve(config.atlas_groups))
        report = stats_mod.normalize_alignment(result, cm, threshold=config.ceiling_threshold,
                                               atlas=atlas)
        save_npy(report.normalized, paths.normalized / f"{stem}.norm.npy")
        dump_json({
            "subject_id": report.subject_id,
            "modality": report.modality,
            "feature_name": report.feature_name,
            "threshold": config.ceiling_threshold,
            "n_masked": int(report.mask.sum()),
            "subject_mean": report.subject_mean,
            "mean_raw_r_masked": float(report.raw_r[report.mask].mean()),
            "roi_means": {g: {"mean": agg.mean, "count": agg.count}
                          for g, agg in sorted(report.roi_means.items())},
        }, paths.normalized / f"{stem}.meta.json")

    return fn


def _stats_fn(config: ExperimentConfig, paths: _Paths, x_name: str, modality: str,
              subjects: list[str]):
    def fn():
        per_subject = {}
        subject_means = []
        for subject in subjects:
            stem = f"{x_name}__{subject}_{modality}"
            pred = np.load(paths.encoding / f"{stem}.pred.npy")
            rm = load_response_matrix(paths.responses / f"{subject}_{modality}.npy")
            actual = zscore_split(rm.values, rm.train_mask).values[rm.test_mask]
            cm = ceiling_mod.load_ceiling_map(paths.ceiling, f"{subject}_{modality}.ceiling")
            mask = cm.ceiling >= config.ceiling_threshold
            test_offsets = subset_story_offsets(rm.story_offsets, rm.n_trs, rm.test_mask)
            perm = stats_mod.block_permutation_test(
                pred, actual, block_len=config.block_len, n_perm=config.n_permutations,
                seed=derive_seed(config.rng_seed, "stats", x_name, subject, modality),
                story_offsets=test_offsets, voxel_mask=mask)
            with open(paths.normalized / f"{stem}.meta.json", encoding="utf-8") as fh:
                norm_meta = json.load(fh)
            subject_means.append(norm_meta["subject_mean"])
            per_subject[subject] = {"p_permutation": perm.p_value, "observed": perm.observed}
        wilcoxon = stats_mod.wilcoxon_signed_rank([(m, 0.0) for m in subject_means])
        dump_json({
            "feature_name": x_name,
            "modality": modality,
            "subjects": per_subject,
            "subject_means_normalized": subject_means,
            "mean_normalized": float(np.mean(subject_means)),
            "wilcoxon_vs_chance_p": wilcoxon.p_value,
        }, paths.stats / f"{x_name}__{modality}.json")

    return fn


def _report_fn(config: ExperimentConfig, paths: _Paths,
               modal_subjects: dict[str, list[str]], removals: list[tuple[str, list[str]]]):
    def fn():
        paths.report.mkdir(parents=True, exist_ok=True)
        roi_rows = []
        summary: dict = {"alignment": {}, "removals": {}}
        norm_meta: dict[tuple[str, str, str], dict] = {}
        stats_docs: dict[tuple[str, str], dict] = {}
        encode_targets = list(config.representations) + \
            [f"{rep}_minus_{_group_name(group)}" for rep, group in removals]

        for modality, subjects in sorted(modal_subjects.items()):
            for x_name in encode_targets:
                with open(paths.stats / f"{x_name}__{modality}.json", encoding="utf-8") as fh:
                    stats_docs[(x_name, modality)] = json.load(fh)
                for subject in subjects:
                    stem = f"{x_name}__{subject}_{modality}"
                    with open(paths.normalized / f"{stem}.meta.json", encoding="utf-8") as fh:
                        norm_meta[(x_name, subject, modality)] = json.load(fh)

        # Per-ROI table: across-subject mean/sem of per-subject group means.
        for modality, subjects in sorted(modal_subjects.items()):
            for x_name in encode_targets:
                metas = [norm_meta[(x_name, s, modality)] for s in subjects]
                groups = ["ALL"] + sorted(metas[0].get("roi_means", {}))
                for group in groups:
                    if group == "ALL":
                        vals = [m["subject_mean"] for m in metas]
                    else:
                        vals = [m["roi_means"][group]["mean"] for m in metas]
                    vals_arr = np.asarray(vals, dtype=float)
                    ok = np.isfinite(vals_arr)
                    mean = float(vals_arr[ok].mean()) if ok.any() else float("nan")
                    sem = float(vals_arr[ok].std(ddof=1) / np.sqrt(ok.sum())) \
                        if ok.sum() > 1 else float("nan")
                    wp = stats_mod.wilcoxon_signed_rank(
                        [(v, 0.0) for v in vals_arr[ok]]).p_value if ok.sum() >= 2 else float("nan")
                    roi_rows.append((x_name, modality, group, mean, sem, int(ok.sum()), wp))

        _write_csv(paths.report / "roi_alignment.csv",
                   ["feature", "modality", "group", "mean_normalized", "sem", "n_subjects",
                    "p_wilcoxon_vs_chance"], roi_rows)

        # Before/after contrasts per removal.
        ba_rows = []
        for modality, subjects in sorted(modal_subjects.items()):
            for rep, group in removals:
                grp = _group_name(group)
                resid = f"{rep}_minus_{grp}"
                before_norm, after_norm, shares = [], [], []
                for subject in subjects:
                    mb = norm_meta[(rep, subject, modality)]
                    ma = norm_meta[(resid, subject, modality)]
                    before_norm.append(mb["subject_mean"])
                    after_norm.append(ma["subject_mean"])
                    rb, ra = mb["mean_raw_r_masked"], ma["mean_raw_r_masked"]
                    shares.append(1.0 - (ra / rb) ** 2 if rb > 0.01 else float("nan"))
                    before = encoding_mod.load_encoding_result(
                        paths.encoding, f"{rep}__{subject}_{modality}")
                    after = encoding_mod.load_encoding_result(
                        paths.encoding, f"{resid}__{subject}_{modality}")
                    pct, _ = encoding_mod.percent_decrease(before, after)
                    save_npy(pct, paths.report /
                             f"percent_decrease__{resid}__{subject}_{modality}.npy")
                pairs = list(zip(before_norm, after_norm))
                w_ba = stats_mod.wilcoxon_signed_rank(pairs)
                after_chance = stats_docs[(resid, modality)]["wilcoxon_vs_chance_p"]
                shares_arr = np.asarray(shares, dtype=float)
                share_mean = float(np.nanmean(shares_arr)) if np.isfinite(shares_arr).any() \
                    else float("nan")
                ba_rows.append((rep, grp, modality, float(np.mean(before_norm)),
                                float(np.mean(after_norm)), share_mean, w_ba.p_value,
                                after_chance))
                summary["removals"].setdefault(rep, {}).setdefault(grp, {})[modality] = {
                    "mean_normalized_before": float(np.mean(before_norm)),
                    "mean_normalized_after": float(np.mean(after_norm)),
                    "explained_share_per_subject": [float(s) for s in shares],
                    "explained_share": share_mean,
                    "p_wilcoxon_before_vs_after": w_ba.p_value,
                    "p_wilcoxon_after_vs_chance": after_chance,
                }
        _write_csv(paths.report / "before_after.csv",
                   ["representation", "removal", "modality", "mean_normalized_before",
                    "mean_normalized_after", "explained_share", "p_wilcoxon_before_vs_after",
                    "p_wilcoxon_after_vs_chance"], ba_rows)

        for (x_name, modality), doc in sorted(stats_docs.items()):
            summary["alignment"].setdefault(x_name, {})[modality] = {
                "mean_normalized": doc["mean_normalized"],
                "wilcoxon_vs_chance_p": doc["wilcoxon_vs_chance_p"],
                "subjects": doc["subjects"],
            }
        dump_json(summary, paths.report / "summary.json")

    return fn


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(x) for x in row))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _csv_cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# Feature-computation nodes (annotation/audio inputs)
# ---------------------------------------------------------------------------

def _add_feature_nodes(graph: JobGraph, config: ExperimentConfig, paths: _Paths) -> list[str]:
    stimuli = config.stimuli
    if not stimuli:
        return []
    families = stimuli.get("families") or []
    stories = stimuli.get("stories") or []
    node_ids = []
    deps = ["synth"] if "synth" in graph.nodes else []

    def grid_from_responses() -> sf.TrGrid:
        modal = _subjects_by_modality(config, paths)
        ref = _load_split_reference(paths, modal)
        lengths = np.diff(np.append(ref.story_offsets, ref.n_trs))
        return sf.TrGrid(n_trs_per_story=tuple(int(x) for x in lengths),
                         tr_seconds=ref.tr_seconds)

    def make_node(family: str, inputs: list[Path], out_names: list[str], fn):
        nid = f"features/{family}"
        outputs = []
        for name in out_names:
            outputs += [paths.features / f"{name}.npy", paths.features / f"{name}.meta.json"]
        graph.add(Node(node_id=nid, op=f"features/{family}", inputs=inputs, outputs=outputs,
                       config_slice={"stimuli": {k: v for k, v in stimuli.items()
                                                 if k in ("stories", "inventory")}},
                       fn=fn, deps=deps))
        node_ids.append(nid)

    if "textual" in families:
        words_dir = config.resolve(stimuli["words_dir"])
        inputs = [words_dir / f"{s}.tsv" for s in stories]

        def fn_textual():
            grid = grid_from_responses()
            anns = [load_annotation(words_dir / f"{s}.tsv", "word") for s in stories]
            fm = sf.textual_features(anns, grid)
            for i, name in enumerate(("letters", "words", "word_length_std")):
                save_feature_matrix(fm.with_values(fm.values[:, [i]], name=name), paths.features)

        make_node("textual", inputs, ["letters", "words", "word_length_std"], fn_textual)

    if "phonemes" in families:
        phones_dir = config.resolve(stimuli["phones_dir"])
        inputs = [phones_dir / f"{s}.tsv" for s in stories]
        inv_path = stimuli.get("inventory")
        if inv_path:
            inputs.append(config.resolve(inv_path))

        def fn_phonemes():
            grid = grid_from_responses()
            anns = [load_annotation(phones_dir / f"{s}.tsv", "phoneme") for s in stories]
            inv = sf.load_inventory(config.resolve(inv_path)) if inv_path \
                else sf.inventory_from_annotations(anns)
            for fm in sf.phoneme_features(anns, inv, grid).values():
                save_feature_matrix(fm, paths.features)

        make_node("phonemes", inputs, ["num_phonemes", "monophone", "diphone", "articulation"],
                  fn_phonemes)

    if "audio" in families:
        audio_dir = config.resolve(stimuli["audio_dir"])
        inputs = [audio_dir / f"{s}.wav" for s in stories]

        def fn_audio():
            grid = grid_from_responses()
            audio_parts = []
            rate = None
            for s_i, story in enumerate(stories):
                wav, r = sf.read_wav(audio_dir / f"{story}.wav")
                rate = rate or r
                if r != rate:
                    raise ValidationError("all story WAVs must share one sample rate")
                want = int(round(grid.n_trs_per_story[s_i] * grid.tr_seconds * rate))
                wav = np.pad(wav, (0, max(0, want - wav.size)))[:want]
                audio_parts.append(wav)
            audio = np.concatenate(audio_parts)
            for fm in sf.audio_dsp(audio, rate, grid).values():
                save_feature_matrix(fm, paths.features)

        make_node("audio", inputs, ["fbank", "mel", "mfcc", "powspec"], fn_audio)

    if "phonological" in families:
        frames_path = config.resolve(stimuli["phonological_frames"])
        inputs = [frames_path, frames_path.with_name(
            frames_path.name.replace(".npy", ".meta.json"))]

        def fn_phono():
            grid = grid_from_responses()
            frames = sf.ingest_precomputed("phonological_frames", frames_path)
            fm, _ = sf.phonological_functionals(frames, grid)
            save_feature_matrix(fm, paths.features)

        make_node("phonological", inputs, ["phonological"], fn_phono)

    if "precomputed" in families:
        table = stimuli.get("precomputed", {})
        inputs = []
        for name, rel in sorted(table.items()):
            p = config.resolve(rel)
            inputs += [p, p.with_name(p.name.replace(".npy", ".meta.json"))]

        def fn_pre():
            for name, rel in sorted(table.items()):
                fm = sf.ingest_precomputed(name, config.resolve(rel))
                save_feature_matrix(fm, paths.features)

        make_node("precomputed", inputs, sorted(table), fn_pre)

    return node_ids


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_TARGET_STAGES = {
    "synth": ("synth",),
    "features": ("synth", "features"),
    "remove": ("synth", "features", "remove"),
    "encode": ("synth", "features", "remove", "encode"),
    "ceiling": ("synth", "features", "ceiling"),
    "normalize": ("synth", "features", "remove", "encode", "ceiling", "normalize"),
    "stats": ("synth", "features", "remove", "encode", "ceiling", "normalize", "stats"),
    "report": ("synth", "features", "remove", "encode", "ceiling", "normalize", "stats", "report"),
    "all": ("synth", "features", "remove", "encode", "ceiling", "normalize", "stats", "report"),
}


def run(config: ExperimentConfig, subcommand: str, workers: int | None = None) -> RunResult:
    """Execute the sub-graph for one subcommand; only stale nodes recompute."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    graph = build_graph(config)
    stages = _TARGET_STAGES[subcommand]
    targets = [nid for nid, node in graph.nodes.items() if node.op.split("/")[0] in stages]
    if not targets:
        raise ConfigError(f"nothing to do for {subcommand!r} with this config")
    order = graph.topo_order(targets)

    workers = workers if workers is not None else config.workers
    # Run the data-producing prefix first, then validate cross-matrix alignment
    # before any model fitting touches the data.
    prefix = [nid for nid in order if graph.nodes[nid].op.split("/")[0] in ("synth", "features")]
    rest = [nid for nid in order if nid not in prefix]
    result_a = graph.execute(prefix, workers=workers) if prefix else RunResult([], [])
    if rest:
        report = validate_experiment(config)
        if not report.ok:
            raise ValidationError("experiment validation failed:\n  " +
                                  "\n  ".join(report.mismatches))
        result_b = graph.execute(rest, workers=workers)
    else:
        result_b = RunResult([], [])
    return RunResult(executed=result_a.executed + result_b.executed,
                     skipped=result_a.skipped + result_b.skipped)
