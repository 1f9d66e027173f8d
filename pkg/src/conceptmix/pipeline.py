"""Two-phase multi-concept sampling: content-aware sampling, then region fusion.

Per seed:

1. draw ``z_T`` and refine it with the resampling rounds;
2. guided sampling with the base model and the all-objects condition from
   ``T`` down to ``t_con + 1``;
3. extract region masks from the Tweedie estimate at ``t_con + 1``;
4. take the last content step to ``t_con`` and fuse concept models region by
   region down to a clean sample.

A seed whose masks cannot be extracted is recorded as ``extraction-failed``
and receives no fusion steps.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import PipelineConfig
from .errors import ExtractionFailed
from .fusion import ConceptBinding, MixSpace, fused_denoised, run_fusion_phase
from .imageio import atomic_write, encode_pnm, quantize
from .metrics import SUMMARY_COLUMNS, MetricScene, SampleMetrics, format_rows, sample_metrics, score, summarize
from .resample import resample_loop
from .sampler import GuidanceConfig, GuidanceMode, SamplerState, guided_denoised, guided_step, initial_state
from .segmentation import RegionMaskSet, Segmenter, extract_masks, intermediate_image

STATUS_OK = "ok"
STATUS_FAILED = "extraction-failed"

TOGGLES = ("no_resample", "no_content_phase", "cfg_instead_of_cfgpp", "mix_in_noise_space")


@dataclass
class Counters:
    resample_calls: int = 0
    resample_rounds: int = 0
    content_steps: int = 0
    mask_extractions: int = 0
    fusion_steps: int = 0

    def __iadd__(self, other: Counters) -> Counters:
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)
        return self


@dataclass
class SeedResult:
    seed: int
    status: str
    image: np.ndarray | None = None
    masks: RegionMaskSet | None = None
    failure: str | None = None
    metrics: SampleMetrics | None = None
    intermediate: np.ndarray | None = None
    content_z: np.ndarray | None = None
    trajectory: list[tuple[int, np.ndarray]] = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def as_dict(self) -> dict:
        out = {"seed": self.seed, "status": self.status, "failure": self.failure}
        out["masks"] = self.masks.as_dict() if self.masks is not None else None
        out["metrics"] = asdict(self.metrics) if self.metrics is not None else None
        return out


@dataclass
class RunReport:
    config_hash: str
    results: list[SeedResult]
    counters: Counters
    summary: dict[str, float]
    variant: str = "default"

    @property
    def succeeded(self) -> int:
        return sum(r.ok for r in self.results)

    def as_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "variant": self.variant,
            "num_seeds": len(self.results),
            "succeeded": self.succeeded,
            "summary": self.summary,
            "counters": asdict(self.counters),
            "seeds": [r.as_dict() for r in self.results],
        }


def _bindings(config: PipelineConfig, masks: RegionMaskSet) -> list[ConceptBinding]:
    out = [
        ConceptBinding(b.concept_id, config.models[b.model_id], b.condition, masks.mask_for(b.tag), b.tag)
        for b in config.bindings
    ]
    bg = config.background
    out.append(ConceptBinding(0, config.models[bg.model_id], bg.condition, masks.background, "background"))
    return out


def run_seed(
    config: PipelineConfig,
    seed: int,
    segmenter: Segmenter | None = None,
    keep_trajectory: bool = False,
) -> SeedResult:
    """Sample one seed end to end."""
    schedule, base = config.schedule, config.base
    guidance = config.guidance
    c_mul = config.content_condition
    counters = Counters()
    trajectory: list[tuple[int, np.ndarray]] = []

    state = initial_state(schedule, config.grid_shape, seed)
    if config.resample.num_rounds > 0:
        rng = np.random.default_rng([seed, 1]) if config.resample.fresh_noise else None
        state = replace(state, z=resample_loop(state.z, base, config.resample, schedule, rng))
        counters.resample_calls += 1
        counters.resample_rounds += config.resample.num_rounds

    mask_t = config.t_con + 1 if config.content_phase else schedule.num_steps
    while state.t > mask_t:
        if keep_trajectory:
            trajectory.append((state.t, guided_denoised(base, base, state.z, state.t, c_mul, guidance.scale, schedule)))
        state = guided_step(state, base, base, c_mul, guidance, schedule)
        counters.content_steps += 1

    seg = config.segmentation
    image = intermediate_image(state.z, state.t, base, c_mul, guidance, schedule, seg.extra_steps)
    counters.mask_extractions += 1
    try:
        masks = extract_masks(image, seg.signatures, seg.tau, seg.min_area, segmenter)
    except ExtractionFailed as exc:
        return SeedResult(seed, STATUS_FAILED, failure=str(exc), intermediate=image,
                          trajectory=trajectory, counters=counters)

    if config.content_phase:
        if keep_trajectory:
            trajectory.append((state.t, guided_denoised(base, base, state.z, state.t, c_mul, guidance.scale, schedule)))
        state = guided_step(state, base, base, c_mul, guidance, schedule)
        counters.content_steps += 1
    content_z = state.z

    bindings = _bindings(config, masks)
    scale = config.scale_for_fusion
    mode = GuidanceMode.CFG if guidance.mode is GuidanceMode.CFG else GuidanceMode.CFG_PP

    def on_step(s: SamplerState) -> None:
        counters.fusion_steps += 1
        if keep_trajectory:
            trajectory.append((s.t, fused_denoised(s.z, s.t, bindings, base, scale, schedule)[0]))

    state = run_fusion_phase(state, bindings, base, scale, schedule, config.mix_space, mode, on_step)
    scene = MetricScene.from_config(config)
    return SeedResult(
        seed,
        STATUS_OK,
        image=state.z,
        masks=masks,
        metrics=sample_metrics(quantize(state.z), scene),
        intermediate=image,
        content_z=content_z,
        trajectory=trajectory,
        counters=counters,
    )


def _run_one(args):
    config, seed, keep = args
    return run_seed(config, seed, keep_trajectory=keep)


def worker_count() -> int:
    """Worker processes from ``CONCEPTMIX_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CONCEPTMIX_WORKERS", "1")))
    except ValueError:
        return 1


def run(
    config: PipelineConfig,
    seeds: Iterable[int] | None = None,
    segmenter: Segmenter | None = None,
    workers: int | None = None,
    keep_trajectory: bool | None = None,
    variant: str = "default",
) -> RunReport:
    """Run every seed and aggregate; results are ordered by seed."""
    seeds = sorted(config.seeds if seeds is None else seeds)
    keep = config.dump_trajectory if keep_trajectory is None else keep_trajectory
    workers = worker_count() if workers is None else workers
    if workers > 1 and segmenter is None and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [(config, s, keep) for s in seeds], chunksize=4))
    else:
        results = [run_seed(config, s, segmenter, keep) for s in seeds]
    results.sort(key=lambda r: r.seed)
    counters = Counters()
    for r in results:
        counters += r.counters
    summary = summarize([r.metrics for r in results])
    return RunReport(config.config_hash(), results, counters, summary, variant)


def apply_toggle(config: PipelineConfig, toggle: str) -> PipelineConfig:
    """Config for one ablation arm.

    Replacing CFG++ with CFG also drops resampling, which is not defined for
    extrapolating guidance.
    """
    if toggle == "no_resample":
        return replace(config, resample=replace(config.resample, num_rounds=0))
    if toggle == "no_content_phase":
        return replace(config, content_phase=False)
    if toggle == "cfg_instead_of_cfgpp":
        return replace(
            config,
            guidance=GuidanceConfig(GuidanceMode.CFG, config.cfg_scale),
            fusion_scale=config.cfg_scale,
            resample=replace(config.resample, num_rounds=0),
        )
    if toggle == "mix_in_noise_space":
        return replace(config, mix_space=MixSpace.NOISE)
    raise ValueError(f"unknown ablation toggle {toggle!r}; expected one of {', '.join(TOGGLES)}")


@dataclass
class AblationReport:
    reports: dict[str, RunReport]

    def table(self) -> list[dict]:
        rows = []
        for arm, rep in self.reports.items():
            rows.append({"arm": arm, **rep.summary, "score": score(rep.summary)})
        order = sorted(rows, key=lambda r: -r["score"])
        for rank, row in enumerate(order, 1):
            row["rank"] = rank
        return rows

    def default_first(self) -> bool:
        """Default arm strictly ahead of every toggle on coverage x fidelity."""
        rows = {r["arm"]: r["score"] for r in self.table()}
        best = rows.pop("default")
        return all(best > v for v in rows.values())


def ablate(
    config: PipelineConfig,
    toggles: Sequence[str] = TOGGLES,
    seeds: Iterable[int] | None = None,
    workers: int | None = None,
) -> AblationReport:
    """Default run plus one run per toggle over the same seeds."""
    for t in toggles:
        if t not in TOGGLES:
            raise ValueError(f"unknown ablation toggle {t!r}; expected one of {', '.join(TOGGLES)}")
    seeds = list(config.seeds if seeds is None else seeds)
    reports = {"default": run(config, seeds, workers=workers, keep_trajectory=False)}
    for t in toggles:
        reports[t] = run(apply_toggle(config, t), seeds, workers=workers, keep_trajectory=False, variant=t)
    return AblationReport(reports)


def _row(result: SeedResult) -> dict:
    row = {"seed": result.seed, "status": result.status}
    if result.metrics is not None:
        row.update(asdict(result.metrics))
    return row


def persist(
    report: RunReport,
    config: PipelineConfig,
    out_dir: str | os.PathLike,
    dump_masks: bool | None = None,
    dump_trajectory: bool | None = None,
) -> list[Path]:
    """Write images, masks, snapshots, ``report.json`` and ``metrics.csv``.

    Every seed gets one PPM: the final sample, or for an extraction failure the
    Tweedie estimate the extraction was run on (suffix ``.failed.ppm``).

    File contents depend only on the report, so two runs of the same config
    and seeds produce byte-identical trees. Returns the written paths.
    """
    out = Path(out_dir)
    dump_masks = config.dump_masks if dump_masks is None else dump_masks
    dump_trajectory = config.dump_trajectory if dump_trajectory is None else dump_trajectory
    written: list[Path] = []

    def put(path: Path, data: bytes) -> None:
        atomic_write(path, data)
        written.append(path)

    for r in report.results:
        stem = f"seed_{r.seed:05d}"
        if r.image is not None:
            put(out / "images" / f"{stem}.ppm", encode_pnm(r.image))
        elif r.intermediate is not None:
            # no fused sample exists; keep the estimate the extraction saw
            put(out / "images" / f"{stem}.failed.ppm", encode_pnm(r.intermediate))
        if dump_masks and r.masks is not None:
            for tag, mask in zip(r.masks.tags, r.masks.masks):
                put(out / "masks" / f"{stem}_{tag}.pgm", encode_pnm(mask.astype(np.uint8) * 255))
            put(out / "masks" / f"{stem}_background.pgm", encode_pnm(r.masks.background.astype(np.uint8) * 255))
        if dump_trajectory:
            for t, x0 in r.trajectory:
                put(out / "trajectory" / stem / f"t{t:03d}.ppm", encode_pnm(x0))
            if r.intermediate is not None:
                put(out / "trajectory" / stem / "extraction.ppm", encode_pnm(r.intermediate))

    doc = report.as_dict()
    put(out / "report.json", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    put(out / "metrics.csv", format_rows(_row(r) for r in report.results).encode())
    return written


def ablation_rows(ablation: AblationReport) -> str:
    """Side-by-side summary table as CSV text."""
    cols = ("arm", "rank", "score", *SUMMARY_COLUMNS)
    lines = [",".join(cols)]
    for row in ablation.table():
        lines.append(",".join(str(row[c]) if not isinstance(row[c], float) else repr(round(row[c], 12)) for c in cols))
    return "\n".join(lines) + "\n"


def sweep_scale(
    config: PipelineConfig,
    scales: Sequence[float],
    seeds: Iterable[int] | None = None,
    workers: int | None = None,
) -> dict[float, dict[str, float]]:
    """Summary per CFG++ scale, applied to content sampling, resampling and fusion alike."""
    seeds = list(config.seeds if seeds is None else seeds)
    out = {}
    for lam in scales:
        cfg = replace(
            config,
            guidance=GuidanceConfig(config.guidance.mode, float(lam)),
            fusion_scale=None,
            resample=replace(config.resample, scale=float(lam)),
        )
        out[float(lam)] = run(cfg, seeds, workers=workers, keep_trajectory=False).summary
    return out
