"""Run configuration: JSON document, validation and content hash."""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .dns import SCHEMES
from .errors import ValidationError

PROBLEMS = ("taylor_green", "walled_vortex", "lid_cavity", "custom")


@dataclass
class RunConfig:
    problem: str = "walled_vortex"
    problem_params: dict = field(default_factory=dict)
    nx: int = 8
    ny: int = 8
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    nu: float = 0.01
    dt: float = 0.01
    T: float = 0.5
    scheme: str = "bdf2"
    r: int = 6
    R: int = 3
    nu_t: float = 0.0
    stride: int = 1
    warmup: int = 0
    spinup: bool = False  # start the DNS from the steady state of the t=0 forcing
    rom_dt: Optional[float] = None  # defaults to dt * stride
    study_dts: list = field(default_factory=list)
    study_Rs: list = field(default_factory=list)
    out: str = "out"
    seed: int = 0

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ValidationError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("nx", "ny"):
            if int(getattr(self, name)) < 2:
                raise ValidationError(f"{name} must be >= 2")
        if len(self.bounds) != 4 or not (self.bounds[1] > self.bounds[0] and self.bounds[3] > self.bounds[2]):
            raise ValidationError(f"bounds must be (x0, x1, y0, y1) with positive extents, got {self.bounds}")
        if not self.nu > 0:
            raise ValidationError(f"nu must be positive, got {self.nu}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T}")
        m = self.T / self.dt
        if abs(m - round(m)) > 1e-8 * max(1.0, m):
            raise ValidationError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        if self.r < 1:
            raise ValidationError(f"r must be >= 1, got {self.r}")
        if not 0 <= self.R <= self.r:
            raise ValidationError(f"need 0 <= R <= r, got R={self.R}, r={self.r}")
        if not self.nu_t >= 0:
            raise ValidationError(f"nu_t must be non-negative, got {self.nu_t}")
        if self.stride < 1 or self.warmup < 0:
            raise ValidationError("stride must be >= 1 and warmup >= 0")
        if self.warmup >= round(m):
            raise ValidationError(f"warmup={self.warmup} leaves no snapshots")
        if self.rom_dt is not None and not self.rom_dt > 0:
            raise ValidationError(f"rom_dt must be positive, got {self.rom_dt}")
        if any(not d > 0 for d in self.study_dts):
            raise ValidationError("study_dts must be positive")
        if any(not 0 <= R <= self.r for R in self.study_Rs):
            raise ValidationError("study_Rs must lie in 0..r")

    @property
    def effective_rom_dt(self):
        return self.rom_dt if self.rom_dt is not None else self.dt * self.stride

    def to_dict(self):
        d = asdict(self)
        d["bounds"] = list(self.bounds)
        return d

    def config_hash(self):
        """16-hex blake2b of the canonical JSON, excluding the output directory."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
