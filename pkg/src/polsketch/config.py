"""Pipeline configuration: one flat, human-editable key = value surface.

Defaults follow the reference operating point: 3 detector scales with 18
orientations, 9 aggregation neighbors, a 30-degree straightness threshold,
a 0.92 aggregation mass ratio, and width-3 structural blocks. The text form
round-trips losslessly so a written config re-parses to an equal object.
"""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass
class PipelineConfig:
    input: str = ""
    input_format: str = "container"  # or "t3"
    truth: str = ""
    output_dir: str = "out"
    seed: int = 0

    scales: tuple = (2.0, 3.0, 4.0)
    orientations: int = 18

    clg_mode: str = "auto"  # or "fixed"
    clg_value: float = 0.0

    k_neighbors: int = 9
    theta0_deg: float = 30.0
    mass_ratio: float = 0.92
    side_fraction: float = 0.8
    wedge_deg: float = 10.0
    structural_width: int = 3

    ms_spatial: float = 7.0
    ms_range: float = 6.5
    ms_min_region: int = 20

    n_regions: int = 30
    class_zones: int = 8
    wishart_max_iter: int = 10
    wishart_min_change: float = 0.001

    use_region_map: bool = True
    ignore_label: int = -1  # truth label excluded from accuracy; -1 disables

    def validate(self) -> None:
        if self.input_format not in ("container", "t3"):
            raise ValueError(f"bad input_format {self.input_format!r}")
        if self.clg_mode not in ("auto", "fixed"):
            raise ValueError(f"bad clg_mode {self.clg_mode!r}")
        if len(self.scales) < 1 or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")
        if self.orientations < 2:
            raise ValueError("need at least 2 orientations")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0.0 < self.mass_ratio <= 1.0:
            raise ValueError("mass_ratio must lie in (0, 1]")
        if self.structural_width not in (3, 5):
            raise ValueError("structural_width must be 3 or 5")
        if self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")
        if self.class_zones not in (8, 9):
            raise ValueError("class_zones must be 8 or 9")

    def to_text(self) -> str:
        out = ["# polsketch pipeline configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        kwargs = {}
        spec = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in spec:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(val, getattr(cls, key))
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _parse_value(val: str, default):
    if isinstance(default, bool):
        if val.lower() in ("true", "1", "yes"):
            return True
        if val.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean {val!r}")
    if isinstance(default, tuple):
        if not val:
            return ()
        return tuple(float(x) for x in val.split(","))
    if isinstance(default, int):
        return int(val)
    if isinstance(default, float):
        return float(val)
    return val


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return PipelineConfig.from_text(fh.read())
