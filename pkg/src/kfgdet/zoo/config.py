"""Model configuration and the plain-text ``key=value`` file format."""
from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import ConfigError

FLAGS = ("kwconv", "c2f_kw", "fdpn", "gsdhead")

# Ablation variants from baseline to the full model ("kfg").
VARIANTS = {
    "v8n": (),
    "v8n+kwconv": ("kwconv",),
    "v8n+c2f-kw": ("c2f_kw",),
    "v8n+kwconv+c2f-kw": ("kwconv", "c2f_kw"),
    "v8n+fdpn": ("fdpn",),
    "v8n+gsdhead": ("gsdhead",),
    "v8n+kwconv+c2f-kw+fdpn": ("kwconv", "c2f_kw", "fdpn"),
    "v8n+kwconv+c2f-kw+gsdhead": ("kwconv", "c2f_kw", "gsdhead"),
    "v8n+fdpn+gsdhead": ("fdpn", "gsdhead"),
    "kfg": FLAGS,
}

_TOKENS = {"kwconv": "kwconv", "c2f-kw": "c2f_kw", "c2f_kw": "c2f_kw", "fdpn": "fdpn", "gsdhead": "gsdhead"}


@dataclass(frozen=True)
class ModelConfig:
    kwconv: bool = False
    c2f_kw: bool = False
    fdpn: bool = False
    gsdhead: bool = False
    nc: int = 3
    width: float = 0.25
    depth: float = 0.33
    K: int = 4
    r: int = 4
    dw_kernels: tuple = field(default=(1, 3, 5, 7))
    cs: int = 0  # 0 -> smallest level width
    reg_max: int = 16
    imgsz: int = 640

    def __post_init__(self):
        object.__setattr__(self, "dw_kernels", tuple(int(k) for k in self.dw_kernels))
        self.validate()

    def validate(self):
        if self.nc < 1:
            raise ConfigError(f"nc must be >= 1, got {self.nc}")
        if self.imgsz < 32 or self.imgsz % 32:
            raise ConfigError(f"imgsz must be a positive multiple of 32, got {self.imgsz}")
        if not (0 < self.width <= 4 and 0 < self.depth <= 4):
            raise ConfigError("width/depth multiples must be in (0, 4]")
        if self.K < 1 or self.r < 1:
            raise ConfigError("K and r must be >= 1")
        if self.reg_max < 2:
            raise ConfigError("reg_max must be >= 2")
        if self.cs < 0:
            raise ConfigError("cs must be >= 0")
        if any(k < 1 or k % 2 == 0 for k in self.dw_kernels):
            raise ConfigError(f"dw_kernels must be odd positive sizes, got {self.dw_kernels}")

    @property
    def variant(self):
        on = tuple(f for f in FLAGS if getattr(self, f))
        for name, flags in VARIANTS.items():
            if flags == on:
                return name
        return "v8n+" + "+".join(on)

    def with_flags(self, **kw):
        return replace(self, **kw)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return asdict(self)


def variant_config(name, **overrides):
    """Config for a variant shorthand such as ``v8n+fdpn`` or ``kfg``."""
    name = name.strip().lower()
    if name in VARIANTS:
        flags = VARIANTS[name]
    else:
        parts = name.split("+")
        if parts[0] != "v8n":
            raise ConfigError(f"unknown variant {name!r}")
        try:
            flags = tuple(_TOKENS[p] for p in parts[1:])
        except KeyError as exc:
            raise ConfigError(f"unknown variant component {exc.args[0]!r} in {name!r}") from None
    return ModelConfig(**{f: f in flags for f in FLAGS}, **overrides)


def _parse_bool(key, v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def parse_config_text(text):
    types = {f.name: f for f in fields(ModelConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        default = types[key].default if key != "dw_kernels" else (1,)
        try:
            if isinstance(default, bool):
                values[key] = _parse_bool(key, val)
            elif key == "dw_kernels":
                values[key] = tuple(int(x) for x in val.split(",") if x.strip())
            elif isinstance(default, int):
                values[key] = int(val)
            else:
                values[key] = float(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from None
    return ModelConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
