"""Command-line entry points for offline evaluation and dataset operations.

Exit codes: 0 success, 1 runtime failure (transport, I/O on outputs),
2 input or validation failure. All randomness is derived from --seed, so
any run against the mock scorer is byte-for-byte reproducible.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from prefrank import dataset as ds
from prefrank.crops import FilterConfig, filter_boxes, crop_regions, parse_detection_file
from prefrank.gateway import (
    GatewayConfig,
    HttpScorer,
    MockScorer,
    ProtocolError,
    TransportError,
    UnscorableRegionError,
    evaluate_candidates,
    image_digest,
)
from prefrank.jsonl import dumps_record, read_jsonl, write_jsonl
from prefrank.ranking import RankVector, evaluation_report
from prefrank.rewards import (
    GroupRollout,
    RewardConfig,
    group_advantages,
    rank_reward,
)

EXIT_RUNTIME = 1
EXIT_INPUT = 2


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_jsonl(path: str) -> list[dict]:
    try:
        return read_jsonl(path)
    except (OSError, ValueError) as exc:
        _fail(EXIT_INPUT, str(exc))


def _load_reward_config(path: str | None) -> RewardConfig:
    if path is None:
        return RewardConfig()
    try:
        return RewardConfig.load(path)
    except (OSError, ValueError, TypeError) as exc:
        _fail(EXIT_INPUT, f"bad reward config: {exc}")


def _emit(records: list[dict], output: str | None) -> None:
    try:
        if output is None:
            for record in records:
                click.echo(dumps_record(record))
        else:
            write_jsonl(output, records)
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"cannot write output: {exc}")


def _emit_json(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    try:
        if output is None:
            click.echo(text)
        else:
            Path(output).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"cannot write output: {exc}")


def _ranks_by_group(path: str, field: str = "ranks") -> dict[str, RankVector]:
    out: dict[str, RankVector] = {}
    for record in _read_jsonl(path):
        try:
            gid = record["group_id"]
            out[gid] = RankVector(record[field])
        except (KeyError, TypeError) as exc:
            _fail(EXIT_INPUT, f"{path}: records need group_id and {field}: {exc}")
        except ValueError as exc:
            _fail(EXIT_INPUT, f"{path}: {exc}")
    return out


@click.group()
def cli() -> None:
    """Preference-ranking reward and evaluation tools."""


@cli.command("eval-metrics")
@click.argument("pred", type=click.Path(exists=True, dir_okay=False))
@click.argument("gt", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.option(
    "--per-annotator",
    "annotations_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSONL with per-annotator rankings: {group_id, annotations: [[...], ...]}.",
)
@click.option("--mode", type=click.Choice(["raw", "leave_one_out"]), default="raw")
def cmd_eval_metrics(pred, gt, output, annotations_path, mode):
    """Agreement, Recall@1 and Filter@1 of predicted vs reference rankings."""
    pred_ranks = _ranks_by_group(pred)
    gt_ranks = _ranks_by_group(gt)
    if set(pred_ranks) != set(gt_ranks):
        only_pred = sorted(set(pred_ranks) - set(gt_ranks))[:3]
        only_gt = sorted(set(gt_ranks) - set(pred_ranks))[:3]
        _fail(
            EXIT_INPUT,
            f"group ids do not align (pred-only: {only_pred}, gt-only: {only_gt})",
        )
    order = sorted(pred_ranks)
    annotations = None
    if annotations_path is not None:
        per_group = {}
        for record in _read_jsonl(annotations_path):
            try:
                per_group[record["group_id"]] = [RankVector(r) for r in record["annotations"]]
            except (KeyError, TypeError, ValueError) as exc:
                _fail(EXIT_INPUT, f"{annotations_path}: {exc}")
        if set(per_group) != set(pred_ranks):
            _fail(EXIT_INPUT, "annotation group ids do not align with predictions")
        annotations = [per_group[g] for g in order]
    try:
        report = evaluation_report(
            [pred_ranks[g] for g in order],
            [gt_ranks[g] for g in order],
            annotations=annotations,
            mode=mode,
        )
    except ValueError as exc:
        _fail(EXIT_INPUT, str(exc))
    _emit_json(report, output)


def _mock_scorer(seed: int, jitter: float, scores_path: str | None) -> MockScorer:
    scores: dict[str, float] = {}
    if scores_path is not None:
        try:
            table = json.loads(Path(scores_path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            _fail(EXIT_INPUT, f"bad mock scores file: {exc}")
        for key, value in table.items():
            # Keys are image paths, or precomputed content digests.
            if len(key) == 64 and all(c in "0123456789abcdef" for c in key):
                scores[key] = float(value)
            elif Path(key).is_file():
                scores[image_digest(key)] = float(value)
            else:
                _fail(EXIT_INPUT, f"mock score key is neither a digest nor a file: {key}")
    return MockScorer(scores=scores, jitter_sigma=jitter, seed=seed)


def _crops_for_manifest(detections_path: str | None, config: FilterConfig):
    """Map image path -> filtered CropSet from a detections JSONL file."""
    crops: dict[str, object] = {}
    if detections_path is None:
        return crops
    for record in _read_jsonl(detections_path):
        try:
            image, width, height, detections = parse_detection_file(record)
        except (KeyError, TypeError, ValueError) as exc:
            _fail(EXIT_INPUT, f"{detections_path}: {exc}")
        crops[image] = filter_boxes(detections, width, height, config)
    return crops


@cli.command("score")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.option("--k", type=int, default=None, help="Rollouts per request (default from config).")
@click.option("--mode", type=click.Choice(["think", "no_think"]), default="think")
@click.option("--mock", is_flag=True, help="Use the deterministic in-process scorer.")
@click.option("--mock-scores", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--jitter", type=float, default=0.0, help="Mock scorer jitter sigma.")
@click.option("--endpoint", default=None, help="Scorer URL (overrides env).")
@click.option("--no-crops", is_flag=True, help="Score the full frame only.")
@click.option("--detections", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--dump-requests", type=click.Path(dir_okay=False), default=None)
@click.option("--image-root", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def cmd_score(
    manifest, output, k, mode, mock, mock_scores, jitter, endpoint,
    no_crops, detections, dump_requests, image_root, seed, config_path,
):
    """Fused quality scores for every candidate in a group manifest."""
    reward_cfg = _load_reward_config(config_path)
    k = k if k is not None else reward_cfg.k_rollouts
    try:
        gateway_cfg = GatewayConfig.from_env(
            mode=mode, **({"endpoint": endpoint} if endpoint else {})
        )
    except ValueError as exc:
        _fail(EXIT_INPUT, str(exc))
    if mock_scores and not mock:
        _fail(EXIT_INPUT, "--mock-scores requires --mock")
    scorer = _mock_scorer(seed, jitter, mock_scores) if mock else HttpScorer(gateway_cfg)

    crops_by_path = {} if no_crops else _crops_for_manifest(detections, FilterConfig())
    results = []
    request_sink: list | None = [] if dump_requests else None
    for record in _read_jsonl(manifest):
        try:
            group = ds.group_from_record(record)
        except ds.ValidationError as exc:
            _fail(EXIT_INPUT, str(exc))
        crops_by_candidate = {
            c.candidate_id: crops_by_path[c.ref]
            for c in group.candidates
            if c.ref in crops_by_path
        }
        try:
            evaluation = evaluate_candidates(
                group,
                k,
                scorer,
                gateway_cfg,
                crops_by_candidate=crops_by_candidate,
                image_root=image_root,
                request_sink=request_sink,
            )
        except TransportError as exc:
            _fail(EXIT_RUNTIME, str(exc))
        except UnscorableRegionError as exc:
            _fail(EXIT_RUNTIME, f"group {group.group_id}: {exc}")
        except (ProtocolError, OSError, ValueError) as exc:
            _fail(EXIT_INPUT, f"group {group.group_id}: {exc}")
        results.append(
            {
                "group_id": group.group_id,
                "k": evaluation.k,
                "candidates": [
                    {
                        "id": c.candidate_id,
                        "fused": c.fused_scores(evaluation.k),
                        "regions": {
                            name: list(scores)
                            for name, scores in zip(c.region_names, c.region_scores)
                        },
                        "dropped": c.dropped_rollouts,
                    }
                    for c in evaluation.candidates
                ],
            }
        )
    _emit(results, output)
    if dump_requests:
        try:
            write_jsonl(dump_requests, request_sink)
        except OSError as exc:
            _fail(EXIT_RUNTIME, f"cannot write request dump: {exc}")


@cli.command("rank-reward")
@click.argument("scores", type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def cmd_rank_reward(scores, labels, output, gamma, config_path):
    """Preference-fidelity rewards per (candidate, rollout).

    SCORES holds {"group_id", "scores": [[rollout scores] per candidate]};
    the labels file holds finalized rankings {"group_id", "ranks": [...]}.
    """
    cfg = _load_reward_config(config_path)
    gamma = gamma if gamma is not None else cfg.gamma
    labels_by_group = _ranks_by_group(labels)
    results = []
    for record in _read_jsonl(scores):
        gid = record.get("group_id")
        if gid is None or "scores" not in record:
            _fail(EXIT_INPUT, f"{scores}: records need group_id and scores")
        if gid not in labels_by_group:
            _fail(EXIT_INPUT, f"no labels for group {gid!r}")
        try:
            group = GroupRollout.from_scores(
                record["scores"], ranks=labels_by_group[gid], gamma=gamma
            )
            rewards = [
                [rank_reward(k, i, group) for k in range(group.k)]
                for i in range(group.size)
            ]
        except (TypeError, ValueError) as exc:
            _fail(EXIT_INPUT, f"group {gid}: {exc}")
        results.append({"group_id": gid, "rewards": rewards})
    _emit(results, output)


@cli.command("advantages")
@click.argument("rewards", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.option("--clip", type=float, default=None)
@click.option("--eps", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def cmd_advantages(rewards, output, clip, eps, config_path):
    """Group-normalized advantages for {"group_id", "rewards": [...]} records."""
    cfg = _load_reward_config(config_path)
    clip = clip if clip is not None else cfg.clip_max
    eps = eps if eps is not None else cfg.eps
    results = []
    for record in _read_jsonl(rewards):
        gid = record.get("group_id")
        values = record.get("rewards")
        if gid is None or not isinstance(values, list):
            _fail(EXIT_INPUT, f"{rewards}: records need group_id and a rewards list")
        try:
            advantages = group_advantages(values, clip_max=clip, eps=eps)
        except (TypeError, ValueError) as exc:
            _fail(EXIT_INPUT, f"group {gid}: {exc}")
        results.append({"group_id": gid, "advantages": advantages})
    _emit(results, output)


@cli.command("crops")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("detections", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.option("--emit-crops", type=click.Path(file_okay=False), default=None)
@click.option("--k-max", type=int, default=None)
@click.option("--tau", type=float, default=None, help="Confidence threshold.")
def cmd_crops(image, detections, output, emit_crops, k_max, tau):
    """Filter detections down to scoring crops for one image."""
    try:
        data = json.loads(Path(detections).read_text(encoding="utf-8"))
        _, width, height, parsed = parse_detection_file(data)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        _fail(EXIT_INPUT, f"bad detections file: {exc}")
    overrides = {}
    if k_max is not None:
        overrides["k_max"] = k_max
    if tau is not None:
        overrides["tau_box"] = tau
    try:
        config = FilterConfig(**overrides)
        crop_set = filter_boxes(parsed, width, height, config)
    except ValueError as exc:
        _fail(EXIT_INPUT, str(exc))
    payload = {
        "image": image,
        "global_area": crop_set.global_area,
        "crops": [{"box": list(c.box), "area": c.area} for c in crop_set.crops],
    }
    if emit_crops:
        out_dir = Path(emit_crops)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            regions = crop_regions(image, [c.box for c in crop_set.crops])
            for n, region in enumerate(regions):
                region.save(out_dir / f"crop{n}.png")
        except (OSError, ValueError) as exc:
            _fail(EXIT_RUNTIME, f"cannot write crops: {exc}")
        payload["crop_files"] = [str(out_dir / f"crop{n}.png") for n in range(len(crop_set.crops))]
    _emit_json(payload, output)


@cli.command("dataset-ingest")
@click.argument("store_root", type=click.Path(file_okay=False))
@click.argument("records", type=click.Path(exists=True, dir_okay=False))
@click.option("--image-root", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--seed", type=int, default=0)
def cmd_dataset_ingest(store_root, records, image_root, seed):
    """Ingest group records (one JSON object per line) into a dataset store."""
    try:
        store = ds.DatasetStore(store_root, seed=seed, image_root=image_root)
        ids = store.import_dataset(records)
    except ds.DatasetError as exc:
        _fail(EXIT_INPUT, str(exc))
    except OSError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    click.echo(f"ingested {len(ids)} groups")


@cli.command("dataset-export")
@click.argument("store_root", type=click.Path(exists=True, file_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0)
def cmd_dataset_export(store_root, out, seed):
    """Export all finalized groups as canonical JSONL."""
    try:
        store = ds.DatasetStore(store_root, seed=seed)
        count = store.export_dataset(out)
    except ds.StateError as exc:
        _fail(EXIT_INPUT, str(exc))
    except ds.DatasetError as exc:
        _fail(EXIT_INPUT, str(exc))
    except OSError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    click.echo(f"exported {count} groups")


@cli.command("serve")
@click.argument("store_root", type=click.Path(file_okay=False))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8800)
@click.option("--image-root", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--seed", type=int, default=0)
def cmd_serve(store_root, host, port, image_root, seed):
    """Run the annotation REST service."""
    import uvicorn

    from prefrank.service import create_app

    store = ds.DatasetStore(store_root, seed=seed, image_root=image_root)
    uvicorn.run(create_app(store), host=host, port=port)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
