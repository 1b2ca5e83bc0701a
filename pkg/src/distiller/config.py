"""Distillation configurations, named presets and the finite search space."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace

from .augment import AugPolicy
from .io import ConfigError
from .losses import INTER_KINDS, PRED_KINDS, InterLossKind
from .mapping import STRATEGIES

SEARCH_ALPHAS = (0.1, 0.5, 0.9)


@dataclass(frozen=True)
class DistillerConfig:
    """One point of the distillation design space plus optimisation settings.

    Loss weights left as ``None`` take the defaults: ``beta1 = beta2 = 1`` and
    ``gamma1 = gamma2 = 0.5`` with augmentation; without augmentation
    ``beta2 = gamma1 = gamma2 = 0``.
    """
    inter_loss: InterLossKind = InterLossKind("MI_alpha", 0.9)
    pred_loss: str = "CE"
    mapping: str = "Skip"
    aug: AugPolicy = AugPolicy()
    beta1: float | None = None
    beta2: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 5e-5
    seed: int = 0

    def __post_init__(self):
        if self.pred_loss not in PRED_KINDS:
            raise ConfigError(f"pred_loss must be one of {PRED_KINDS}, got {self.pred_loss!r}")
        if self.mapping not in STRATEGIES:
            raise ConfigError(f"mapping must be one of {STRATEGIES}, got {self.mapping!r}")
        has_aug = bool(self.aug.ops)
        defaults = {"beta1": 1.0, "beta2": 1.0 if has_aug else 0.0,
                    "gamma1": 0.5 if has_aug else 0.0, "gamma2": 0.5 if has_aug else 0.0}
        for name, default in defaults.items():
            val = getattr(self, name)
            val = default if val is None else float(val)
            if val < 0:
                raise ConfigError(f"{name} must be nonnegative")
            object.__setattr__(self, name, val)
        if not has_aug and (self.beta2 or self.gamma2):
            raise ConfigError("beta2/gamma2 weight augmented samples but the policy is empty")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.inter_loss.kind == "MI_alpha" and self.batch_size < 2:
            raise ConfigError("MI_alpha needs batch_size >= 2")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def axes(self) -> dict[str, str]:
        """Categorical coordinates of this config in the search space."""
        return {"inter_loss": self.inter_loss.label, "pred_loss": self.pred_loss,
                "mapping": self.mapping, "aug": self.aug.label}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aug"]["ops"] = list(self.aug.ops)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistillerConfig":
        d = dict(d)
        d["inter_loss"] = InterLossKind(**d["inter_loss"])
        aug = dict(d["aug"])
        aug["ops"] = tuple(aug["ops"])
        d["aug"] = AugPolicy(**aug)
        return cls(**d)


PRESETS = {
    # prior pipelines expressed as points of the space
    "tinybert-style": dict(pred_loss="CE", inter_loss=InterLossKind("MSE"), mapping="Skip",
                           aug=AugPolicy(("CA",))),
    "bert-emd-style": dict(pred_loss="CE", inter_loss=InterLossKind("MSE"), mapping="EMD"),
    "mixkd-style": dict(pred_loss="CE", inter_loss=InterLossKind("none"), aug=AugPolicy(("Mixup",))),
}


def preset(name: str, **overrides) -> DistillerConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return DistillerConfig(**{**PRESETS[name], **overrides})


# -------------------------------------------------------------- key = value

_FLOAT_KEYS = {"beta1", "beta2", "gamma1", "gamma2", "learning_rate"}
_INT_KEYS = {"epochs", "batch_size", "seed"}
_AUG_KEYS = {"aug.ca_prob": "ca_prob", "aug.ra_swap": "ra_swap", "aug.ra_replace": "ra_replace",
             "aug.mixup_a": "mixup_a"}


def config_from_kv(kv: dict[str, str], seed: int | None = None) -> DistillerConfig:
    """Build a config from dotted keys; keys outside the distillation namespace are ignored.

    Recognised keys: ``preset``, ``inter_loss.kind``, ``inter_loss.alpha``,
    ``pred_loss``, ``mapping``, ``aug.ops`` (comma separated, ``none`` for empty),
    ``aug.ca_prob``, ``aug.ra_swap``, ``aug.ra_replace``, ``aug.mixup``,
    ``aug.mixup_a``, ``beta1``, ``beta2``, ``gamma1``, ``gamma2``, ``epochs``,
    ``batch_size``, ``learning_rate``, ``seed``.
    """
    try:
        base = dict(PRESETS[kv["preset"]]) if "preset" in kv else {}
    except KeyError:
        raise ConfigError(f"unknown preset {kv['preset']!r}") from None
    args: dict = dict(base)
    try:
        if "inter_loss.kind" in kv or "inter_loss.alpha" in kv:
            cur = base.get("inter_loss", InterLossKind("MI_alpha", 0.9))
            args["inter_loss"] = InterLossKind(kv.get("inter_loss.kind", cur.kind),
                                               float(kv.get("inter_loss.alpha", cur.alpha)))
        for key in ("pred_loss", "mapping"):
            if key in kv:
                args[key] = kv[key]
        aug_args = {}
        cur_aug = base.get("aug", AugPolicy())
        if "aug.ops" in kv:
            raw = kv["aug.ops"].strip()
            aug_args["ops"] = () if raw in ("", "none") else tuple(
                o.strip() for o in raw.replace("+", ",").split(",") if o.strip())
        for key, attr in _AUG_KEYS.items():
            if key in kv:
                aug_args[attr] = float(kv[key])
        if "aug.mixup" in kv:
            aug_args["mixup_dist"] = kv["aug.mixup"]
        if aug_args:
            args["aug"] = replace(cur_aug, **aug_args)
        for key in _FLOAT_KEYS:
            if key in kv:
                args[key] = float(kv[key])
        for key in _INT_KEYS:
            if key in kv:
                args[key] = int(kv[key])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if seed is not None:
        args["seed"] = seed
    return DistillerConfig(**args)


# ------------------------------------------------------------ search space

def _aug_policies() -> list[AugPolicy]:
    out = []
    for mix in (False, True):
        for r in range(4):
            for combo in itertools.combinations(("CA", "RA", "BT"), r):
                out.append(AugPolicy(combo + (("Mixup",) if mix else ())))
    return out


@dataclass(frozen=True)
class SearchSpace:
    """Finite product of the four categorical axes."""
    inter_loss: tuple = tuple(InterLossKind(k) for k in ("MSE", "L2", "Cos", "PKD", "CE")) + tuple(
        InterLossKind("MI_alpha", a) for a in SEARCH_ALPHAS)
    pred_loss: tuple = PRED_KINDS
    mapping: tuple = STRATEGIES
    aug: tuple = field(default_factory=lambda: tuple(_aug_policies()))

    AXES = ("inter_loss", "pred_loss", "mapping", "aug")

    def axis_labels(self) -> dict[str, list[str]]:
        return {
            "inter_loss": [k.label for k in self.inter_loss],
            "pred_loss": list(self.pred_loss),
            "mapping": list(self.mapping),
            "aug": [a.label for a in self.aug],
        }

    def size(self) -> int:
        return len(self.inter_loss) * len(self.pred_loss) * len(self.mapping) * len(self.aug)

    def configs(self, **base) -> list[DistillerConfig]:
        """Every point in canonical (lexicographic by axis index) order."""
        return [DistillerConfig(inter_loss=i, pred_loss=p, mapping=m, aug=a, **base)
                for i, p, m, a in itertools.product(self.inter_loss, self.pred_loss,
                                                    self.mapping, self.aug)]

    def sample(self, rng, **base) -> DistillerConfig:
        i = self.inter_loss[rng.integers(len(self.inter_loss))]
        p = self.pred_loss[rng.integers(len(self.pred_loss))]
        m = self.mapping[rng.integers(len(self.mapping))]
        a = self.aug[rng.integers(len(self.aug))]
        return DistillerConfig(inter_loss=i, pred_loss=p, mapping=m, aug=a, **base)

    def contains(self, cfg: DistillerConfig) -> bool:
        return (cfg.inter_loss in self.inter_loss and cfg.pred_loss in self.pred_loss
                and cfg.mapping in self.mapping and cfg.aug in self.aug)
