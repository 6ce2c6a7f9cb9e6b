"""Scorer-agnostic request gateway.

Candidate reconstructions are scored by an external model server speaking
one wire format:

    POST {endpoint}/score
    {"kind": "mllm" | "lpips" | "deqa",
     "prompt": str?, "prefill": str?,
     "images": [{"role": "lr" | "hr" | "ref", "data": <base64 PNG>}, ...],
     "rollouts": int, "decode": object}
    -> {"outputs": [str, ...]}        # exactly `rollouts` strings

The gateway builds requests (full frame plus one per filtered crop, with
the LR counterpart region attached), fans them out with a bounded worker
pool, gates mllm outputs through `format_reward`, and fuses the per-region
scores by pixel area into one distribution per candidate. A deterministic
in-process mock scorer stands in for the server in tests and offline runs.
"""

from __future__ import annotations

import base64
import hashlib
import io
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx
from PIL import Image

from prefrank.crops import Crop, CropSet, crop_regions, fuse_scores, map_box_to_lr
from prefrank.ranking import AnnotationGroup, RankVector, preference_matrix
from prefrank.rewards import (
    GAMMA_DEFAULT,
    FormatVerdict,
    GroupRollout,
    ScoreDistribution,
    format_reward,
)

__all__ = [
    "EVALUATION_PROMPT",
    "NO_THINK_PREFILL",
    "ENV_SCORER_URL",
    "ENV_SCORER_TIMEOUT_MS",
    "GatewayConfig",
    "TransportError",
    "ProtocolError",
    "UnscorableRegionError",
    "ScorerResponse",
    "CandidateEvaluation",
    "GroupEvaluation",
    "MockScorer",
    "HttpScorer",
    "build_prompt",
    "encode_image",
    "image_digest",
    "request_scores",
    "parse_scalar_output",
    "evaluate_candidate",
    "evaluate_candidates",
    "evaluate_group",
]

ENV_SCORER_URL = "PREFRANK_SCORER_URL"
ENV_SCORER_TIMEOUT_MS = "PREFRANK_SCORER_TIMEOUT_MS"

# Instruction prompt for reference-conditioned quality scoring. The LR
# reference is always the first image slot, the HR reconstruction the second.
EVALUATION_PROMPT = (
    "You are a highly discerning expert in image quality assessment.\n"
    "Your task is to evaluate a super-resolution (SR) output by comparing it with the "
    "original low-resolution reference.\n"
    "You will be given two images: the first (LR) shows the original scene, and the second "
    "(HR) is the super-resolution result.\n"
    "Assume the HR image may contain problematic regions.\n"
    "Carefully inspect both images and identify any areas in the HR image that look "
    "unnatural or distorted (e.g., distorted regions or warped lines, unrealistic textures, "
    "unreasonable objects) or semantically inconsistent with the LR image (e.g., missing, "
    "added, or altered objects, inconsistent texture).\n"
    "For each problematic region, state its approximate location in the HR image (e.g., "
    "'top left', 'center lower') and briefly explain why it appears incorrect.\n"
    "After inspection, assign an overall quality score from 1.00 to 5.00, with two decimal "
    "places (e.g., 1.31, 2.77, 4.53).\n"
    "First output your reasoning in <thinking>...</thinking> tags (a brief summary of "
    "observed defects and semantic issues).\n"
    "Then output only one numeric score in <answer>...</answer> tags (no extra text)."
)

# Prefill that skips the reasoning phase: the scorer continues directly with
# the numeric score and closing tag. The string must match exactly.
NO_THINK_PREFILL = "<thinking>...</thinking><answer>"


class TransportError(RuntimeError):
    """Scorer endpoint unreachable after the configured retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


class ProtocolError(RuntimeError):
    """Scorer responded, but not with the agreed payload shape."""


class UnscorableRegionError(RuntimeError):
    """Every rollout for one region failed the format gate."""

    def __init__(self, candidate: str, region: str):
        super().__init__(f"candidate {candidate!r}: all rollouts malformed for region {region!r}")
        self.candidate = candidate
        self.region = region


@dataclass(frozen=True)
class GatewayConfig:
    """Connection and fan-out settings.

    `endpoint` and `timeout_ms` can come from the PREFRANK_SCORER_URL and
    PREFRANK_SCORER_TIMEOUT_MS environment variables; retries counts the
    additional attempts after the first.
    """

    endpoint: str = "http://127.0.0.1:8801"
    timeout_ms: int = 30_000
    retries: int = 2
    in_flight: int = 4
    mode: str = "think"
    decode: dict = field(default_factory=dict)
    crop_prompt: str | None = None

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")
        if self.in_flight < 1:
            raise ValueError("in_flight must be at least 1")
        if self.mode not in ("think", "no_think"):
            raise ValueError(f"mode must be 'think' or 'no_think', got {self.mode!r}")

    @classmethod
    def from_env(cls, env: dict | None = None, **overrides) -> "GatewayConfig":
        import os

        source = os.environ if env is None else env
        kwargs = dict(overrides)
        if ENV_SCORER_URL in source and "endpoint" not in kwargs:
            kwargs["endpoint"] = source[ENV_SCORER_URL]
        if ENV_SCORER_TIMEOUT_MS in source and "timeout_ms" not in kwargs:
            kwargs["timeout_ms"] = int(source[ENV_SCORER_TIMEOUT_MS])
        return cls(**kwargs)


def build_prompt(mode: str = "think", kind: str = "mllm") -> dict:
    """Request template for one LR/HR comparison: evaluation prompt, ordered
    image slots (LR first, HR second), and the no-think prefill when asked."""
    if mode not in ("think", "no_think"):
        raise ValueError(f"mode must be 'think' or 'no_think', got {mode!r}")
    payload = {
        "kind": kind,
        "prompt": EVALUATION_PROMPT,
        "images": [{"role": "lr"}, {"role": "hr"}],
    }
    if mode == "no_think":
        payload["prefill"] = NO_THINK_PREFILL
    return payload


def encode_image(image: Image.Image | bytes | str | Path) -> bytes:
    """PNG bytes for an image given as PIL image, raw bytes, or path."""
    if isinstance(image, bytes):
        return image
    if isinstance(image, (str, Path)):
        return Path(image).read_bytes()
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def image_digest(image: Image.Image | bytes | str | Path) -> str:
    """Stable content digest used by the mock scorer's score table."""
    return hashlib.sha256(encode_image(image)).hexdigest()


@dataclass(frozen=True)
class ScorerResponse:
    """One rollout's full output text and its format verdict. In no-think
    mode the prefill is part of the text, so the verdict sees the complete
    tagged output the model effectively produced."""

    raw_text: str
    verdict: FormatVerdict


class Scorer(Protocol):
    def send(self, payload: dict) -> list[str]: ...


class MockScorer:
    """Deterministic stand-in for the scorer server.

    mllm requests: the base score for an image is looked up by the HR
    slot's content digest (falling back to `default_score`), optionally
    perturbed by seeded Gaussian jitter derived from (seed, digest, rollout
    index) so results do not depend on call order. Scores are clamped to
    [1, 5] and emitted as well-formed tagged text at two decimals.

    lpips / deqa requests: the same lookup against dedicated tables,
    emitted as a bare number.
    """

    def __init__(
        self,
        scores: dict[str, float] | None = None,
        default_score: float = 3.0,
        jitter_sigma: float = 0.0,
        seed: int = 0,
        lpips: dict[str, float] | None = None,
        default_lpips: float = 0.2,
        deqa: dict[str, float] | None = None,
        default_deqa: float = 3.0,
    ):
        self.scores = dict(scores or {})
        self.default_score = default_score
        self.jitter_sigma = jitter_sigma
        self.seed = seed
        self.lpips = dict(lpips or {})
        self.default_lpips = default_lpips
        self.deqa = dict(deqa or {})
        self.default_deqa = default_deqa
        self.requests: list[dict] = []

    def _hr_digest(self, payload: dict) -> str:
        for slot in payload.get("images", []):
            if slot.get("role") == "hr":
                return hashlib.sha256(base64.b64decode(slot["data"])).hexdigest()
        raise ProtocolError("request carries no hr image slot")

    def _rollout_score(self, digest: str, rollout: int) -> float:
        base = self.scores.get(digest, self.default_score)
        if self.jitter_sigma > 0.0:
            material = f"{self.seed}|{digest}|{rollout}".encode()
            rng = random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))
            base += rng.gauss(0.0, self.jitter_sigma)
        return min(max(base, 1.0), 5.0)

    def send(self, payload: dict) -> list[str]:
        self.requests.append(payload)
        kind = payload.get("kind", "mllm")
        rollouts = int(payload.get("rollouts", 1))
        digest = self._hr_digest(payload)
        outputs: list[str] = []
        for r in range(rollouts):
            if kind == "mllm":
                score = self._rollout_score(digest, r)
                if payload.get("prefill"):
                    outputs.append(f"{score:.2f}</answer>")
                else:
                    outputs.append(
                        f"<thinking>mock inspection of {digest[:8]}</thinking>"
                        f"<answer>{score:.2f}</answer>"
                    )
            elif kind == "lpips":
                outputs.append(f"{self.lpips.get(digest, self.default_lpips):.6f}")
            elif kind == "deqa":
                outputs.append(f"{self.deqa.get(digest, self.default_deqa):.6f}")
            else:
                raise ProtocolError(f"unknown scorer kind {kind!r}")
        return outputs


class HttpScorer:
    """HTTP transport for the scorer wire format with bounded retries.

    Connection failures, timeouts and 5xx responses are retried up to
    `config.retries` extra attempts with a short linear backoff; anything
    else is surfaced immediately.
    """

    def __init__(self, config: GatewayConfig, client: httpx.Client | None = None):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout_ms / 1000.0)

    def send(self, payload: dict) -> list[str]:
        url = self.config.endpoint.rstrip("/") + "/score"
        attempts = self.config.retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                response = self._client.post(url, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    time.sleep(0.05 * (attempt + 1))
                continue
            if response.status_code >= 500:
                last_error = ProtocolError(f"server error {response.status_code}")
                if attempt + 1 < attempts:
                    time.sleep(0.05 * (attempt + 1))
                continue
            if response.status_code != 200:
                raise ProtocolError(f"scorer returned HTTP {response.status_code}")
            try:
                body = response.json()
            except ValueError as exc:
                raise ProtocolError(f"scorer response is not JSON: {exc}") from exc
            outputs = body.get("outputs") if isinstance(body, dict) else None
            if not isinstance(outputs, list):
                raise ProtocolError("scorer response lacks an 'outputs' list")
            return outputs
        raise TransportError(f"scorer at {url} unreachable: {last_error}", attempts)

    def close(self) -> None:
        self._client.close()


def _wire_payload(
    lr_png: bytes,
    hr_png: bytes,
    rollouts: int,
    mode: str,
    kind: str = "mllm",
    prompt: str | None = None,
    decode: dict | None = None,
) -> dict:
    payload = build_prompt(mode, kind=kind)
    if prompt is not None:
        payload["prompt"] = prompt
    payload["images"] = [
        {"role": "lr", "data": base64.b64encode(lr_png).decode("ascii")},
        {"role": "hr", "data": base64.b64encode(hr_png).decode("ascii")},
    ]
    payload["rollouts"] = int(rollouts)
    payload["decode"] = dict(decode or {})
    return payload


def request_scores(payload: dict, scorer: Scorer) -> list[ScorerResponse]:
    """Send one wire payload and gate each returned rollout.

    The response must carry exactly `rollouts` strings. In no-think mode
    the prefill is prepended before the format gate runs, since the model
    output continues from it.
    """
    rollouts = int(payload.get("rollouts", 1))
    outputs = scorer.send(payload)
    if len(outputs) != rollouts:
        raise ProtocolError(f"expected {rollouts} outputs, got {len(outputs)}")
    if any(not isinstance(o, str) for o in outputs):
        raise ProtocolError("scorer outputs must be strings")
    prefill = payload.get("prefill", "")
    responses = []
    for out in outputs:
        full = prefill + out if prefill else out
        responses.append(ScorerResponse(raw_text=full, verdict=format_reward(full)))
    return responses


def parse_scalar_output(text: str) -> float:
    """Numeric-only parse for lpips/deqa outputs."""
    try:
        value = float(text.strip())
    except ValueError as exc:
        raise ProtocolError(f"expected a bare number, got {text!r}") from exc
    if not math.isfinite(value):
        raise ProtocolError(f"expected a finite number, got {text!r}")
    return value


@dataclass(frozen=True)
class CandidateEvaluation:
    """Scored regions for one candidate.

    `region_scores` holds the per-region valid rollout scores aligned by
    rollout index ('global' first, then 'crop0', 'crop1', ...); `fused` is
    the area-weighted fusion per rollout. `dropped_rollouts` records how
    many malformed rollouts each region lost before alignment.
    """

    candidate_id: str
    crops: CropSet
    region_names: tuple[str, ...]
    region_scores: tuple[tuple[float, ...], ...]
    dropped_rollouts: dict[str, int]

    @property
    def k(self) -> int:
        return len(self.region_scores[0])

    @property
    def global_scores(self) -> ScoreDistribution:
        return ScoreDistribution(self.region_scores[0])

    @property
    def crop_scores(self) -> tuple[ScoreDistribution, ...]:
        return tuple(ScoreDistribution(s) for s in self.region_scores[1:])

    def fused_scores(self, k: int | None = None) -> list[float]:
        """Fused score per rollout; rollout r fuses rollout r of every region."""
        k = self.k if k is None else k
        out = []
        for r in range(k):
            scored = tuple(
                Crop(box=c.box, area=c.area, score=self.region_scores[1 + n][r])
                for n, c in enumerate(self.crops.crops)
            )
            out.append(fuse_scores(self.region_scores[0][r], self.crops.global_area, scored))
        return out

    @property
    def fused(self) -> ScoreDistribution:
        return ScoreDistribution(self.fused_scores())


@dataclass(frozen=True)
class GroupEvaluation:
    """All candidate evaluations for one group, aligned to a shared K."""

    group_id: str
    candidates: tuple[CandidateEvaluation, ...]

    @property
    def k(self) -> int:
        return min(c.k for c in self.candidates)

    def to_rollout(
        self,
        ranks: RankVector | None = None,
        gamma: float = GAMMA_DEFAULT,
    ) -> GroupRollout:
        """Assemble the reward-engine view: per-candidate fused
        distributions truncated to the shared K, plus labels when a
        finalized ranking is available."""
        k = self.k
        dists = tuple(ScoreDistribution(c.fused_scores(k)) for c in self.candidates)
        labels = preference_matrix(ranks) if ranks is not None else None
        return GroupRollout(distributions=dists, labels=labels, gamma=gamma)


def _load_image(image: Image.Image | str | Path) -> Image.Image:
    if isinstance(image, Image.Image):
        return image
    return Image.open(image)


def evaluate_candidate(
    lr: Image.Image | str | Path,
    hr: Image.Image | str | Path,
    crops: CropSet | None,
    k: int,
    scorer: Scorer,
    config: GatewayConfig | None = None,
    candidate_id: str = "candidate",
    request_sink: list | None = None,
) -> CandidateEvaluation:
    """Score one candidate: one full-frame request plus one per crop, each
    asking for `k` rollouts.

    Each crop request pairs the HR region with its LR counterpart (the HR
    box mapped down by the integer upscale factor). Malformed rollouts are
    dropped per region and recorded; a region whose rollouts all fail the
    gate raises UnscorableRegionError. Regions are finally aligned to the
    smallest surviving rollout count so fused scores stay rollout-aligned.
    """
    cfg = config or GatewayConfig()
    if k < 1:
        raise ValueError("k must be at least 1")
    lr_img = _load_image(lr)
    hr_img = _load_image(hr)
    crop_set = crops or CropSet(global_area=float(hr_img.width * hr_img.height))
    scale = hr_img.width / lr_img.width
    if scale <= 0:
        raise ValueError("HR image must not be smaller than LR")

    # Encode from the original reference: for paths this forwards the file
    # bytes untouched, keeping content digests stable across load/re-encode.
    lr_png = encode_image(lr)
    hr_png = encode_image(hr)
    payloads = [
        _wire_payload(lr_png, hr_png, k, cfg.mode, prompt=None, decode=cfg.decode)
    ]
    region_names = ["global"]
    hr_boxes = [c.box for c in crop_set.crops]
    if hr_boxes:
        hr_regions = crop_regions(hr_img, hr_boxes)
        lr_boxes = [map_box_to_lr(b, scale, lr_img.width, lr_img.height) for b in hr_boxes]
        lr_regions = crop_regions(lr_img, lr_boxes)
        for n, (lr_r, hr_r) in enumerate(zip(lr_regions, hr_regions)):
            payloads.append(
                _wire_payload(
                    encode_image(lr_r),
                    encode_image(hr_r),
                    k,
                    cfg.mode,
                    prompt=cfg.crop_prompt,
                    decode=cfg.decode,
                )
            )
            region_names.append(f"crop{n}")
    if request_sink is not None:
        request_sink.extend(payloads)

    if len(payloads) > 1 and cfg.in_flight > 1:
        with ThreadPoolExecutor(max_workers=cfg.in_flight) as pool:
            all_responses = list(pool.map(lambda p: request_scores(p, scorer), payloads))
    else:
        all_responses = [request_scores(p, scorer) for p in payloads]

    valid_scores: list[list[float]] = []
    dropped: dict[str, int] = {}
    for name, responses in zip(region_names, all_responses):
        scores = [r.verdict.parsed_score for r in responses if r.verdict.reward == 1.0]
        lost = len(responses) - len(scores)
        if lost:
            dropped[name] = lost
        if not scores:
            raise UnscorableRegionError(candidate_id, name)
        valid_scores.append(scores)

    k_eff = min(len(s) for s in valid_scores)
    aligned = tuple(tuple(s[:k_eff]) for s in valid_scores)
    return CandidateEvaluation(
        candidate_id=candidate_id,
        crops=crop_set,
        region_names=tuple(region_names),
        region_scores=aligned,
        dropped_rollouts=dropped,
    )


def evaluate_candidates(
    group: AnnotationGroup,
    k: int,
    scorer: Scorer,
    config: GatewayConfig | None = None,
    crops_by_candidate: dict[str, CropSet] | None = None,
    image_root: str | Path | None = None,
    request_sink: list | None = None,
) -> GroupEvaluation:
    """Score every candidate of a group against its LR reference."""
    root = Path(image_root) if image_root is not None else None

    def resolve(ref: str) -> Path:
        path = Path(ref)
        return root / path if root is not None and not path.is_absolute() else path

    evals = []
    for cand in group.candidates:
        crop_set = (crops_by_candidate or {}).get(cand.candidate_id)
        evals.append(
            evaluate_candidate(
                resolve(group.lr_ref),
                resolve(cand.ref),
                crop_set,
                k,
                scorer,
                config,
                candidate_id=cand.candidate_id,
                request_sink=request_sink,
            )
        )
    return GroupEvaluation(group_id=group.group_id, candidates=tuple(evals))


def evaluate_group(
    group: AnnotationGroup,
    k: int,
    scorer: Scorer,
    config: GatewayConfig | None = None,
    gamma: float = GAMMA_DEFAULT,
    crops_by_candidate: dict[str, CropSet] | None = None,
    image_root: str | Path | None = None,
) -> GroupRollout:
    """Score a group and assemble the reward-engine rollout view. Labels
    are derived from the group's finalized ranking when it has one;
    without annotations the rollout carries distributions only."""
    evaluation = evaluate_candidates(
        group, k, scorer, config, crops_by_candidate, image_root
    )
    ranks: RankVector | None
    try:
        ranks = group.final_ranks()
    except ValueError:
        ranks = None
    return evaluation.to_rollout(ranks=ranks, gamma=gamma)
