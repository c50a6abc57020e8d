"""Pipeline configuration and the key-value text config format.

Config files are plain text: one ``key = value`` per line, '#' comments,
blank lines ignored. Unknown keys are rejected so typos fail loudly.
"""

from dataclasses import dataclass, fields, replace

from .coarse import CoarseConfig
from .consistency import SamplingConfig
from .fine import FineConfig

__all__ = ["PipelineConfig", "load_config", "save_config", "parse_config_text"]


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float = 0.35
    dim: int = 64
    seed: int = 0
    # coarse stage
    n_blocks: int = 2
    n_heads: int = 4
    sigma_c: float = 0.7
    residual_scale: float = 0.1
    degree_threshold: float = 0.3
    salient_count: int = 48
    k_seeds: int = 4
    neighborhood_size: int = 12
    max_coarse_corrs: int = 150
    # fine stage
    r_k: float = 0.8
    sigma_d: float = 0.3
    r_d: float = 0.5
    r_p: float = 0.15
    r_n: float = 0.2
    r_f: float = 0.3
    k_patch: int = 32
    k_p: int = 16
    k_s: int = 4
    k_d: int = 6
    d_e: int = 64
    n_embed_layers: int = 3
    confidence_bypass: bool = True
    # robustness path and harness
    use_ransac: bool = True
    ransac_iterations: int = 1000
    ransac_threshold: float = 0.29
    use_icp: bool = True
    # re-run with the careful profile when alignment fitness ends up below
    # this value; 0 disables escalation
    escalate_fitness: float = 0.72
    # also escalate when the tight-to-loose fitness ratio drops below this
    # value, which flags poses that slid along planar structure; 0 disables
    escalate_ratio: float = 0.68
    icp_iterations: int = 25
    icp_corr_dist: float = 1.0
    icp_tight_dist: float = 0.12
    include_timings: bool = False
    workers: int = 1

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(
            degree_threshold=self.degree_threshold,
            salient_count=self.salient_count,
            k_seeds=self.k_seeds,
            neighborhood_size=self.neighborhood_size,
        )

    def coarse(self) -> CoarseConfig:
        return CoarseConfig(
            n_blocks=self.n_blocks,
            dim=self.dim,
            n_heads=self.n_heads,
            sigma_c=self.sigma_c,
            residual_scale=self.residual_scale,
            sampling=self.sampling(),
        )

    def fine(self) -> FineConfig:
        return FineConfig(
            r_k=self.r_k,
            sigma_d=self.sigma_d,
            r_d=self.r_d,
            r_p=self.r_p,
            r_n=self.r_n,
            r_f=self.r_f,
            k_patch=self.k_patch,
            k_p=self.k_p,
            k_s=self.k_s,
            k_d=self.k_d,
            d_e=self.d_e,
            n_embed_layers=self.n_embed_layers,
            confidence_bypass=self.confidence_bypass,
        )


def _parse_value(text, target_type):
    text = text.strip()
    if target_type is bool:
        lowered = text.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"invalid boolean '{text}'")
    return target_type(text)


def parse_config_text(text, base=None) -> PipelineConfig:
    base = base or PipelineConfig()
    field_types = {f.name: f.type for f in fields(PipelineConfig)}
    type_map = {"float": float, "int": int, "bool": bool, "str": str}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in field_types:
            raise ValueError(f"line {lineno}: unknown config key '{key}'")
        ftype = field_types[key]
        ftype = type_map.get(ftype, ftype) if isinstance(ftype, str) else ftype
        try:
            updates[key] = _parse_value(value, ftype)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return replace(base, **updates)


def load_config(path, base=None) -> PipelineConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base=base)


def save_config(path, cfg: PipelineConfig):
    with open(path, "w") as fh:
        for f in fields(PipelineConfig):
            fh.write(f"{f.name} = {getattr(cfg, f.name)}\n")
