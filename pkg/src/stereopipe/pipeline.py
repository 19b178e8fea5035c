"""Stage orchestration, configuration files, evaluation and the throughput bench.

Stage order: rectify -> census -> matching cost -> aggregation -> extraction
-> uniqueness -> consistency -> texture -> speckle -> gap -> noise.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from stereopipe import costpost, disppost, sgm
from stereopipe.census import census_transform
from stereopipe.costpost import PostConfig
from stereopipe.disppost import FilterConfig
from stereopipe.imagecore import DisparityMap, GrayImage
from stereopipe.rectify import RectificationMap, decode_map, rectify_pair
from stereopipe.sgm import PROFILES, MatchConfig

POST_STAGES = ("uniqueness", "consistency", "texture", "speckle", "gap", "noise")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class Stages:
    rectify: bool = False
    uniqueness: bool = True
    consistency: bool = True
    texture: bool = True
    speckle: bool = True
    gap: bool = True
    noise: bool = True

    def without_post(self) -> "Stages":
        return replace(self, **{name: False for name in POST_STAGES})


@dataclass(frozen=True)
class PipelineConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    post: PostConfig = field(default_factory=PostConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    stages: Stages = field(default_factory=Stages)
    rectification_map: Union[str, Path, RectificationMap, None] = None
    profile: str = "pro"
    threads: int = 1

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}, expected one of {sorted(PROFILES)}")
        if self.match.parallelism != PROFILES[self.profile]:
            raise ValueError(
                f"profile {self.profile!r} fixes p={PROFILES[self.profile]}, "
                f"got p={self.match.parallelism}"
            )
        if self.stages.rectify and self.rectification_map is None:
            raise ValueError("rectification enabled but no map given")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def load_map(self) -> RectificationMap:
        if isinstance(self.rectification_map, RectificationMap):
            return self.rectification_map
        return decode_map(Path(self.rectification_map).read_bytes())


def for_range(disparity_range: int, profile: str = "pro", **kwargs) -> PipelineConfig:
    """Config searching ``disparity_range`` disparities from 0 with the profile's p."""
    p = PROFILES[profile]
    if disparity_range % p:
        raise ValueError(f"range {disparity_range} is not a multiple of p={p}")
    match = MatchConfig(iterations=disparity_range // p, parallelism=p)
    return PipelineConfig(match=match, profile=profile, **kwargs)


def run_pipeline(left: GrayImage, right: GrayImage, cfg: PipelineConfig) -> DisparityMap:
    if left.shape != right.shape:
        raise StageError("input", ValueError(f"image sizes differ: {left.shape} vs {right.shape}"))
    st, th = cfg.stages, cfg.threads

    def run(name, fn, *args):
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    if st.rectify:
        rmap = run("rectify", cfg.load_map)
        left, right = run("rectify", rectify_pair, left, right, rmap, th)
    cl = run("census", census_transform, left)
    cr = run("census", census_transform, right)
    raw = run("matching_cost", sgm.matching_cost, cl, cr, cfg.match, th)
    vol = run("aggregate", sgm.aggregate, raw, cfg.match, th)
    del raw
    disp = run("extract", costpost.extract_disparity, vol, cfg.match, th)
    if st.uniqueness:
        q, excl = cfg.post.uniqueness_factor, cfg.post.exclude_neighbors
        disp = run("uniqueness", costpost.uniqueness_check, vol, disp, q, excl, th)
    if st.consistency:
        t_c = cfg.post.consistency_threshold
        disp = run("consistency", costpost.consistency_check, vol, disp, cfg.match, t_c, th)
    del vol
    if st.texture:
        disp = run("texture", disppost.texture_filter, disp, left, cfg.filter)
    if st.speckle:
        disp = run("speckle", disppost.speckle_filter, disp, cfg.filter)
    if st.gap:
        disp = run("gap", disppost.gap_interpolation, disp, cfg.filter, th)
    if st.noise:
        disp = run("noise", disppost.noise_filter, disp, cfg.filter, th)
    return disp


# -- configuration files ------------------------------------------------------

_MATCH_KEYS = {"P1": "p1", "P2": "p2", "o_d": "disparity_offset", "n_i": "iterations"}
_POST_KEYS = {"q": "uniqueness_factor", "t_c": "consistency_threshold",
              "uniqueness_exclude_neighbors": "exclude_neighbors"}
_FILTER_KEYS = {
    "t_t": "texture_threshold",
    "texture_window": "texture_window",
    "w_s": "speckle_window",
    "speckle_max_diff": "speckle_max_diff",
    "l_max": "max_gap",
    "gap_similarity": "gap_similarity",
    "median_min_valid": "median_min_valid",
}
_BOOL = {"1": True, "on": True, "true": True, "yes": True,
         "0": False, "off": False, "false": False, "no": False}


def _convert(key: str, value: str, kind):
    if kind is bool:
        try:
            return _BOOL[value.lower()]
        except KeyError:
            raise ValueError(f"{key}: expected on/off, got {value!r}") from None
    if key == "t_c" and value.lower() in ("off", "none", "inf"):
        return None
    try:
        return kind(value)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {value!r}") from None


def parse_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        values[key.strip()] = value.strip()
    return values


def build_config(values: dict[str, str], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Apply flat key/value settings on top of ``base`` (defaults if omitted)."""
    base = base or PipelineConfig()
    match = {f.name: getattr(base.match, f.name) for f in fields(MatchConfig)}
    post = {f.name: getattr(base.post, f.name) for f in fields(PostConfig)}
    filt = {f.name: getattr(base.filter, f.name) for f in fields(FilterConfig)}
    stages = {f.name: getattr(base.stages, f.name) for f in fields(Stages)}
    top = {"profile": base.profile, "threads": base.threads,
           "rectification_map": base.rectification_map}

    types = {"p1": int, "p2": int, "disparity_offset": int, "iterations": int,
             "uniqueness_factor": float, "consistency_threshold": int, "exclude_neighbors": bool,
             "texture_threshold": int, "texture_window": int, "speckle_window": int,
             "speckle_max_diff": float, "max_gap": int, "gap_similarity": float,
             "median_min_valid": int}
    for key, value in values.items():
        if key in _MATCH_KEYS:
            name = _MATCH_KEYS[key]
            match[name] = _convert(key, value, types[name])
        elif key in _POST_KEYS:
            name = _POST_KEYS[key]
            post[name] = _convert(key, value, types[name])
        elif key in _FILTER_KEYS:
            name = _FILTER_KEYS[key]
            filt[name] = _convert(key, value, types[name])
        elif key in stages:
            stages[key] = _convert(key, value, bool)
        elif key == "profile":
            top["profile"] = value
        elif key == "threads":
            top["threads"] = _convert(key, value, int)
        elif key == "map":
            top["rectification_map"] = value or None
        else:
            raise ValueError(f"unknown config key {key!r}")
    if top["profile"] not in PROFILES:
        raise ValueError(f"unknown profile {top['profile']!r}")
    match["parallelism"] = PROFILES[top["profile"]]
    return PipelineConfig(
        match=MatchConfig(**match),
        post=PostConfig(**post),
        filter=FilterConfig(**filt),
        stages=Stages(**stages),
        **top,
    )


def load_config(path: Union[str, Path], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    return build_config(parse_config(Path(path).read_text()), base)


# -- evaluation ---------------------------------------------------------------

BAD_THRESHOLDS = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class Metrics:
    """``density`` is the valid fraction of the whole map.

    Error figures cover pixels valid in both maps and not masked; they are
    ``None`` when no such pixel exists.
    """

    density: float
    evaluated: int
    bad: dict[float, Optional[float]]
    mae: Optional[float]


def evaluate(
    disp: DisparityMap, truth: DisparityMap, mask: Optional[np.ndarray] = None
) -> Metrics:
    """Compare against ground truth; ``mask`` marks pixels to exclude (e.g. occlusions)."""
    if disp.shape != truth.shape:
        raise ValueError(f"disparity {disp.shape} and truth {truth.shape} differ in size")
    if mask is not None and np.shape(mask) != disp.shape:
        raise ValueError(f"mask {np.shape(mask)} and disparity {disp.shape} differ in size")
    density = float(disp.valid.mean())
    sel = disp.valid & truth.valid
    if mask is not None:
        sel &= ~np.asarray(mask, dtype=bool)
    n = int(sel.sum())
    if n == 0:
        return Metrics(density, 0, {t: None for t in BAD_THRESHOLDS}, None)
    err = np.abs(disp.data[sel].astype(np.float64) - truth.data[sel].astype(np.float64)) / 16
    bad = {t: float((err > t).mean()) for t in BAD_THRESHOLDS}
    return Metrics(density, n, bad, float(err.mean()))


# -- throughput ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchReport:
    width: int
    height: int
    iterations: int
    parallelism: int
    frames: int
    wall_time: float
    frame_rate: float
    output_disparities_per_s: float
    disparity_evals_per_s: float

    @classmethod
    def from_rate(cls, width, height, iterations, parallelism, frames, wall_time, frame_rate=None):
        """Derive the per-second figures from a frame rate (measured or hypothetical)."""
        fps = frames / wall_time if frame_rate is None else float(frame_rate)
        outputs = width * height * fps
        return cls(
            width=width,
            height=height,
            iterations=iterations,
            parallelism=parallelism,
            frames=frames,
            wall_time=wall_time,
            frame_rate=fps,
            output_disparities_per_s=outputs,
            disparity_evals_per_s=outputs * (iterations * parallelism),
        )

    def identity_holds(self) -> bool:
        return self.disparity_evals_per_s == self.output_disparities_per_s * (
            self.iterations * self.parallelism
        )

    def key_values(self) -> list[str]:
        return [
            f"width={self.width}",
            f"height={self.height}",
            f"n_i={self.iterations}",
            f"p={self.parallelism}",
            f"frames={self.frames}",
            f"wall_time={self.wall_time!r}",
            f"frame_rate={self.frame_rate!r}",
            f"output_disparities_per_s={self.output_disparities_per_s!r}",
            f"disparity_evals_per_s={self.disparity_evals_per_s!r}",
        ]

    def table(self) -> str:
        rows = [
            ("resolution", f"{self.width} x {self.height}"),
            ("disparity range", f"{self.iterations * self.parallelism} (n_i={self.iterations}, p={self.parallelism})"),
            ("frames", str(self.frames)),
            ("wall time", f"{self.wall_time:.3f} s"),
            ("frame rate", f"{self.frame_rate:.2f} fps"),
            ("output disparities", f"{self.output_disparities_per_s / 1e6:.2f} M/s"),
            ("disparity evaluations", f"{self.disparity_evals_per_s / 1e9:.3f} G/s"),
        ]
        kw = max(len(k) for k, _ in rows)
        vw = max(len(v) for _, v in rows)
        rule = f"+-{'-' * kw}-+-{'-' * vw}-+"
        lines = [rule] + [f"| {k:<{kw}} | {v:>{vw}} |" for k, v in rows] + [rule]
        lines.append("(software timing of the processing stages only; file IO excluded)")
        return "\n".join(lines)


def benchmark(
    pairs: Iterable[tuple[GrayImage, GrayImage]],
    cfg: PipelineConfig,
    repetitions: int = 1,
    warmup: bool = True,
) -> BenchReport:
    """Time the full pipeline over ``pairs`` repeated ``repetitions`` times.

    One untimed warm-up frame absorbs JIT compilation unless ``warmup`` is off.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    pairs: Sequence = list(pairs)
    if not pairs:
        raise ValueError("benchmark needs at least one image pair")
    if warmup:
        run_pipeline(*pairs[0], cfg)
    t0 = time.perf_counter()
    for _ in range(repetitions):
        for left, right in pairs:
            run_pipeline(left, right, cfg)
    wall = time.perf_counter() - t0
    h, w = pairs[0][0].shape
    return BenchReport.from_rate(
        w, h, cfg.match.iterations, cfg.match.parallelism, len(pairs) * repetitions, wall
    )
