"""Run configuration: strict JSON schema, defaults and provenance hashing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

from .battery import BatteryParams
from .costs import CostParams
from .errors import ValidationError
from .models import RegimeSchedule, SeasonalOuSpec, SeasonalProfile
from .policy import PolicyKind
from .problem import KineticStorageProblem
from .solver import TrainingConfig

SCHEMA_VERSION = 1


def december_price_spec() -> SeasonalOuSpec:
    """Synthetic winter day-ahead price (EUR/kWh, log-space): evening peak, early-morning trough."""
    return SeasonalOuSpec(
        SeasonalProfile((-2.2, 0.0, -0.15, 0.05, 0.0)),
        RegimeSchedule(0.8, 0.5), RegimeSchedule(0.15, 0.10),
        space="log", initial_value=0.115)


def december_load_spec() -> SeasonalOuSpec:
    """Synthetic household net load (kW): positive at night, small PV surplus around noon."""
    return SeasonalOuSpec(
        SeasonalProfile((0.3, 0.6, 0.0, 0.1, 0.0)),
        RegimeSchedule(1.5, 1.0), RegimeSchedule(0.3, 0.15),
        space="level", initial_value=1.0)


@dataclass
class EvaluationConfig:
    n_particles: int = 512
    band_level: float = 0.9
    bootstrap_resamples: int = 2000
    epoch: int = 1_000_000  # noise key of evaluation runs, disjoint from training epochs

    def __post_init__(self):
        if self.n_particles < 2 or not 0 < self.band_level < 1 or self.bootstrap_resamples < 1:
            raise ValidationError("invalid evaluation settings")


@dataclass
class RunConfig:
    price: SeasonalOuSpec = field(default_factory=december_price_spec)
    load: SeasonalOuSpec = field(default_factory=december_load_spec)
    battery: BatteryParams = field(default_factory=BatteryParams)
    cost: CostParams = field(default_factory=CostParams)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    policy: PolicyKind = PolicyKind.NEURAL
    horizon: float = 24.0
    start_hour: float = 0.0
    literal_sigma: bool = False
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        self.policy = PolicyKind(self.policy)
        # the master seed is the single source of randomness
        self.training.master_seed = int(self.seed)
        self.training.literal_sigma = bool(self.literal_sigma)

    def problem(self) -> KineticStorageProblem:
        return KineticStorageProblem(self.price, self.load, self.battery, self.cost,
                                     self.horizon, self.start_hour, self.literal_sigma)

    def to_dict(self) -> dict:
        train = self.training.to_dict()
        train.pop("master_seed")
        train.pop("literal_sigma")
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "horizon": self.horizon,
            "start_hour": self.start_hour,
            "literal_sigma": self.literal_sigma,
            "policy": self.policy.value,
            "output_dir": self.output_dir,
            "price": self.price.to_dict(),
            "load": self.load.to_dict(),
            "battery": self.battery.to_dict(),
            "cost": self.cost.to_dict(),
            "training": train,
            "evaluation": {f.name: getattr(self.evaluation, f.name) for f in fields(EvaluationConfig)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"schema_version must be {SCHEMA_VERSION}")
        top = {"schema_version", "seed", "horizon", "start_hour", "literal_sigma", "policy",
               "output_dir", "price", "load", "battery", "cost", "training", "evaluation"}
        _reject_unknown(d, top, "config")
        kw = {}
        for key in ("seed", "horizon", "start_hour", "literal_sigma", "policy", "output_dir"):
            if key in d:
                kw[key] = d[key]
        if "price" in d:
            kw["price"] = SeasonalOuSpec.from_dict(d["price"])
        if "load" in d:
            kw["load"] = SeasonalOuSpec.from_dict(d["load"])
        for key, typ in (("battery", BatteryParams), ("cost", CostParams),
                         ("evaluation", EvaluationConfig)):
            if key in d:
                _reject_unknown(d[key], {f.name for f in fields(typ)}, key)
                kw[key] = typ(**d[key])
        if "training" in d:
            allowed = {f.name for f in fields(TrainingConfig)} - {"master_seed", "literal_sigma"}
            _reject_unknown(d["training"], allowed, "training")
            kw["training"] = TrainingConfig(**d["training"])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(d)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def provenance(self) -> dict:
        return {"config_hash": self.hash(), "master_seed": self.seed, "schema_version": SCHEMA_VERSION}


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ValidationError(f"{where} must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
