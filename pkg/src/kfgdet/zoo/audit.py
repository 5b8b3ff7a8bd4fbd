"""Parameter audit: per-tensor rows, per-module subtotals, raw vs shared totals."""
from dataclasses import dataclass, field


@dataclass(frozen=True)
class AuditRow:
    name: str
    shape: tuple
    count: int
    group: str  # canonical name of the shared storage, "" when unshared


@dataclass
class ParamAudit:
    rows: list = field(default_factory=list)
    raw_total: int = 0
    dedup_total: int = 0
    modules: dict = field(default_factory=dict)  # top-level module -> dedup count

    @property
    def total_m(self):
        return self.dedup_total / 1e6

    def shared_groups(self):
        groups = {}
        for r in self.rows:
            if r.group:
                groups.setdefault(r.group, []).append(r.name)
        return groups

    def format_table(self, title=None):
        lines = [title] if title else []
        width = max([len(k) for k in self.modules] + [6])
        lines.append(f"{'module':<{width}}  {'params':>10}  {'M':>6}")
        for name, n in self.modules.items():
            lines.append(f"{name:<{width}}  {n:>10d}  {n / 1e6:>6.2f}")
        lines.append(f"{'total':<{width}}  {self.dedup_total:>10d}  {self.total_m:>6.2f}")
        if self.raw_total != self.dedup_total:
            lines.append(f"{'raw':<{width}}  {self.raw_total:>10d}  {self.raw_total / 1e6:>6.2f}"
                         "  (shared storage counted per member)")
        return "\n".join(lines)

    def subtotal(self, prefix):
        """Deduplicated count of parameters under a dotted name prefix such as ``head``."""
        return sum(n for k, n in self.modules.items() if k == prefix or k.startswith(prefix + "."))

    def kv_lines(self, prefix=""):
        return [f"{prefix}params_total={self.dedup_total}",
                f"{prefix}params_raw={self.raw_total}",
                f"{prefix}params_m={self.total_m:.2f}"]


def _module_key(name, depth):
    parts = name.split(".")
    return ".".join(parts[:min(depth, len(parts) - 1)]) or parts[0]


def audit_params(model, depth=3):
    """Audit ``model``; ``depth`` controls how finely subtotals are grouped."""
    canon = {id(p): n for n, p in model.named_parameters()}
    every = model.named_parameters(remove_duplicate=False)
    multi = {}
    for _, p in every:
        multi[id(p)] = multi.get(id(p), 0) + 1
    rows = [AuditRow(n, tuple(p.shape), int(p.size), canon[id(p)] if multi[id(p)] > 1 else "")
            for n, p in every]
    audit = ParamAudit(rows=rows)
    audit.raw_total = sum(r.count for r in rows)
    for n, p in model.named_parameters():
        audit.dedup_total += int(p.size)
        key = _module_key(n, depth)
        audit.modules[key] = audit.modules.get(key, 0) + int(p.size)
    return audit


def reduction(base, other):
    """Fractional parameter reduction of ``other`` relative to ``base``."""
    b = base.dedup_total if isinstance(base, ParamAudit) else base
    o = other.dedup_total if isinstance(other, ParamAudit) else other
    return (b - o) / b if b else 0.0
