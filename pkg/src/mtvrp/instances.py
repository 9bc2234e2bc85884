"""Task variants, synthetic instance generation and benchmark file I/O.

Node numbering used throughout the package: depots first (``0 .. n_depots-1``),
then customers (``n_depots .. n_depots+N-1``).
"""

from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field, fields

import numpy as np

HORIZON_INF = 1e6
"""Padding for absent late times and duration limits."""

N_MD_DEPOTS = 3
FORMAT_VERSION = 1


class ParseError(ValueError):
    """Raised for malformed task names or benchmark files."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class VariantSpec:
    open: bool = False
    duration_limited: bool = False
    backhaul: bool = False
    mixed_backhaul: bool = False
    time_windows: bool = False
    multi_depot: bool = False

    def __post_init__(self):
        if self.backhaul and self.mixed_backhaul:
            raise ValueError("backhaul and mixed_backhaul are mutually exclusive")

    @property
    def any_backhaul(self) -> bool:
        return self.backhaul or self.mixed_backhaul

    def name(self) -> str:
        parts = ["MD" if self.multi_depot else "", "O" if self.open else "", "VRP"]
        parts.append("B" if self.backhaul else "MB" if self.mixed_backhaul else "")
        parts.append("L" if self.duration_limited else "")
        parts.append("TW" if self.time_windows else "")
        name = "".join(parts)
        return "CVRP" if name == "VRP" else "MDCVRP" if name == "MDVRP" else name

    def constraint_flags(self) -> list[float]:
        """The 4-slot constraint label ``[B, O, L, TW]`` fed to the encoder.

        Mixed backhaul has no slot of its own and leaves ``B`` unset.
        """
        return [float(self.backhaul), float(self.open), float(self.duration_limited), float(self.time_windows)]

    def __str__(self) -> str:
        return self.name()


_NAME_RE = re.compile(r"^(MD)?(O)?(C?VRP)(MB|B)?(L)?(TW)?$")


def variant_from_name(name: str) -> VariantSpec:
    """Parse a task label such as ``"OVRPBLTW"`` or ``"MDOVRPMBLTW"``."""
    m = _NAME_RE.match(name)
    if m is None:
        raise ParseError(f"unrecognized task name {name!r} (offending fragment: {_offending_fragment(name)!r})")
    md, o, core, bh, l, tw = m.groups()
    if core == "CVRP" and (o or bh or l or tw):
        raise ParseError(f"unrecognized task name {name!r} (offending fragment: 'CVRP')")
    return VariantSpec(
        open=bool(o),
        duration_limited=bool(l),
        backhaul=bh == "B",
        mixed_backhaul=bh == "MB",
        time_windows=bool(tw),
        multi_depot=bool(md),
    )


def _offending_fragment(name: str) -> str:
    # Consume the grammar greedily and report whatever is left over.
    rest = name
    for token in ("MD", "O"):
        if rest.startswith(token):
            rest = rest[len(token):]
    for core in ("CVRP", "VRP"):
        if rest.startswith(core):
            rest = rest[len(core):]
            break
    else:
        return rest or name
    for token in ("MB", "B", "L", "TW"):
        if rest.startswith(token):
            rest = rest[len(token):]
    return rest or name


def in_distribution_variants() -> list[VariantSpec]:
    """The 16 training tasks: every combination of O, L, B and TW."""
    return [
        VariantSpec(open=o, duration_limited=l, backhaul=b, time_windows=tw)
        for tw, b, l, o in itertools.product([False, True], repeat=4)
    ]


def all_variants() -> list[VariantSpec]:
    """The 48-task catalog: the 16 training tasks plus MB and MD combinations."""
    out = []
    for md in (False, True):
        for bh in ("", "B", "MB"):
            for o, l, tw in itertools.product([False, True], repeat=3):
                v = VariantSpec(
                    open=o,
                    duration_limited=l,
                    backhaul=bh == "B",
                    mixed_backhaul=bh == "MB",
                    time_windows=tw,
                    multi_depot=md,
                )
                out.append(v)
    return out


VARIANT_SETS = {
    "in16": in_distribution_variants,
    "all48": all_variants,
}


@dataclass
class Instance:
    depot_coords: np.ndarray
    customer_coords: np.ndarray
    linehaul_demand: np.ndarray
    backhaul_demand: np.ndarray
    tw_early: np.ndarray
    tw_late: np.ndarray
    tw_service: np.ndarray
    variant: VariantSpec = field(default_factory=VariantSpec)
    capacity: float = 1.0
    duration_limit: float = HORIZON_INF
    depot_late: float = HORIZON_INF
    scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.depot_coords = np.asarray(self.depot_coords, dtype=np.float64).reshape(-1, 2)
        self.customer_coords = np.asarray(self.customer_coords, dtype=np.float64).reshape(-1, 2)
        for f in ("linehaul_demand", "backhaul_demand", "tw_early", "tw_late", "tw_service"):
            setattr(self, f, np.asarray(getattr(self, f), dtype=np.float64).reshape(-1))
        n = len(self.customer_coords)
        for f in ("linehaul_demand", "backhaul_demand", "tw_early", "tw_late", "tw_service"):
            if len(getattr(self, f)) != n:
                raise ValueError(f"{f} has length {len(getattr(self, f))}, expected {n}")
        if len(self.depot_coords) < 1:
            raise ValueError("an instance needs at least one depot")

    @property
    def n_customers(self) -> int:
        return len(self.customer_coords)

    @property
    def n_depots(self) -> int:
        return len(self.depot_coords)

    @property
    def n_nodes(self) -> int:
        return self.n_depots + self.n_customers

    def coords(self) -> np.ndarray:
        """All node coordinates, depots first."""
        return np.concatenate([self.depot_coords, self.customer_coords], axis=0)

    def distance_matrix(self) -> np.ndarray:
        c = self.coords()
        dx = c[:, None, 0] - c[None, :, 0]
        dy = c[:, None, 1] - c[None, :, 1]
        return np.sqrt(dx**2 + dy**2)

    def node_arrays(self) -> dict[str, np.ndarray]:
        """Per-node attribute arrays including depot rows (zero demand, open window)."""
        d = self.n_depots
        z = np.zeros(d)
        return {
            "linehaul": np.concatenate([z, self.linehaul_demand]),
            "backhaul": np.concatenate([z, self.backhaul_demand]),
            "early": np.concatenate([z, self.tw_early]),
            "late": np.concatenate([np.full(d, self.depot_late), self.tw_late]),
            "service": np.concatenate([z, self.tw_service]),
        }

    def with_variant(self, variant: VariantSpec) -> "Instance":
        """Copy with different flags; only flags that do not change node data are meaningful."""
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw["variant"] = variant
        return Instance(**kw)

    # -- JSON --------------------------------------------------------------

    def to_dict(self) -> dict:
        customers = [
            {
                "x": float(x), "y": float(y), "dl": float(dl), "db": float(db),
                "te": float(te), "tl": float(tl), "ts": float(ts),
            }
            for (x, y), dl, db, te, tl, ts in zip(
                self.customer_coords, self.linehaul_demand, self.backhaul_demand,
                self.tw_early, self.tw_late, self.tw_service,
            )
        ]
        doc = {
            "version": FORMAT_VERSION,
            "variant": self.variant.name(),
            "n": self.n_customers,
            "depots": [[float(x), float(y)] for x, y in self.depot_coords],
            "customers": customers,
            "capacity": float(self.capacity),
            "duration_limit": float(self.duration_limit),
        }
        if self.depot_late != HORIZON_INF:
            doc["depot_late"] = float(self.depot_late)
        if self.scale != 1.0:
            doc["scale"] = float(self.scale)
        if self.name:
            doc["name"] = self.name
        return doc

    def to_json(self) -> str:
        return _dumps17(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "Instance":
        if doc.get("version") != FORMAT_VERSION:
            raise ParseError(f"unsupported instance format version {doc.get('version')!r}")
        cust = doc["customers"]
        if len(cust) != doc["n"]:
            raise ParseError(f"n={doc['n']} but {len(cust)} customers listed")
        col = lambda k: [c[k] for c in cust]  # noqa: E731
        return cls(
            depot_coords=doc["depots"],
            customer_coords=[[c["x"], c["y"]] for c in cust] or np.zeros((0, 2)),
            linehaul_demand=col("dl"),
            backhaul_demand=col("db"),
            tw_early=col("te"),
            tw_late=col("tl"),
            tw_service=col("ts"),
            variant=variant_from_name(doc["variant"]),
            capacity=doc["capacity"],
            duration_limit=doc["duration_limit"],
            depot_late=doc.get("depot_late", HORIZON_INF),
            scale=doc.get("scale", 1.0),
            name=doc.get("name", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))


def _dumps17(obj) -> str:
    """JSON with every float written at 17 significant digits."""

    def enc(o):
        if isinstance(o, float):
            return format(o, ".17g") if math.isfinite(o) else json.dumps(o)
        if isinstance(o, dict):
            return "{" + ", ".join(f"{json.dumps(k)}: {enc(v)}" for k, v in o.items()) + "}"
        if isinstance(o, (list, tuple)):
            return "[" + ", ".join(enc(v) for v in o) + "]"
        return json.dumps(o)

    return enc(obj)


def save_instances(path, instances: list[Instance]) -> None:
    with open(path, "w") as fh:
        fh.write("[\n" + ",\n".join(inst.to_json() for inst in instances) + "\n]\n")


def load_instances(path) -> list[Instance]:
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = [doc]
    return [Instance.from_dict(d) for d in doc]


# -- generation -------------------------------------------------------------


def demand_scale(n: int) -> float:
    return 30 + n / 5


def generate(variant: VariantSpec | str, n: int, seed: int) -> Instance:
    """Sample one instance of ``variant`` with ``n`` customers."""
    if isinstance(variant, str):
        variant = variant_from_name(variant)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)

    n_depots = N_MD_DEPOTS if variant.multi_depot else 1
    depots = rng.random((n_depots, 2))
    customers = rng.random((n, 2))
    raw = rng.integers(1, 10, size=n)
    demand = raw / demand_scale(n)

    linehaul = demand.copy()
    backhaul = np.zeros(n)
    # the backhaul split is drawn even when unused so the coordinate/demand stream
    # is identical across variants sharing a seed
    order = rng.permutation(n)
    if variant.any_backhaul:
        n_back = math.ceil(0.2 * n)
        back = order[:n_back]
        backhaul[back] = demand[back]
        linehaul[back] = 0.0

    early = rng.uniform(0.0126, 4.25, size=n)
    service = rng.uniform(0.0, 0.15, size=n)
    length = rng.uniform(1.8, 2.0, size=n)
    if variant.time_windows:
        tw_early, tw_service, tw_late = early, service, early + length
    else:
        tw_early, tw_service, tw_late = np.zeros(n), np.zeros(n), np.full(n, HORIZON_INF)

    return Instance(
        depot_coords=depots,
        customer_coords=customers,
        linehaul_demand=linehaul,
        backhaul_demand=backhaul,
        tw_early=tw_early,
        tw_late=tw_late,
        tw_service=tw_service,
        variant=variant,
        capacity=1.0,
        duration_limit=3.0 if variant.duration_limited else HORIZON_INF,
    )


def generate_batch(variant: VariantSpec | str, n: int, count: int, seed: int) -> list[Instance]:
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    return [generate(variant, n, int(s)) for s in seeds]


# -- Solomon format ---------------------------------------------------------

_SOLOMON_COLUMNS = ("CUST", "XCOORD", "YCOORD", "DEMAND", "READY", "DUE", "SERVICE")


def parse_solomon(text: str) -> Instance:
    """Parse a Solomon/Homberger VRPTW file.

    Customer 0 becomes the depot. Coordinates and times share one scale factor
    (the largest absolute coordinate) so travel time still equals distance.
    Demands are divided by the vehicle capacity.
    """
    lines = text.splitlines()
    name = ""
    capacity = None
    header_at = None
    for i, line in enumerate(lines):
        s = line.strip()
        if not s:
            continue
        if not name:
            name = s
        up = s.upper()
        if up.startswith("NUMBER") and "CAPACITY" in up:
            j = _next_nonblank(lines, i + 1)
            if j is None:
                raise ParseError("VEHICLE section has no NUMBER/CAPACITY row", i + 1)
            parts = lines[j].split()
            if len(parts) != 2:
                raise ParseError(f"expected 'NUMBER CAPACITY', got {lines[j].strip()!r}", j + 1)
            _num(parts[0], j)
            capacity = _num(parts[1], j)
        if re.match(r"CUST\s*NO", up):
            header_at = i
            break
    if capacity is None:
        raise ParseError("missing VEHICLE section (NUMBER/CAPACITY)")
    if header_at is None:
        raise ParseError("missing CUSTOMER section (CUST NO. header)")
    if capacity <= 0:
        raise ParseError("vehicle capacity must be positive")

    rows: dict[int, tuple[int, list[float]]] = {}
    for k in range(header_at + 1, len(lines)):
        parts = lines[k].split()
        if not parts:
            continue
        if len(parts) != len(_SOLOMON_COLUMNS):
            raise ParseError(f"expected {len(_SOLOMON_COLUMNS)} fields, got {len(parts)}", k + 1)
        vals = [_num(p, k) for p in parts]
        cid = int(vals[0])
        if cid != vals[0]:
            raise ParseError(f"customer id {parts[0]!r} is not an integer", k + 1)
        if cid in rows:
            raise ParseError(f"duplicate customer id {cid}", k + 1)
        rows[cid] = (k + 1, vals[1:])
    if 0 not in rows:
        raise ParseError("customer table has no depot row (CUST NO. 0)", header_at + 1)
    if len(rows) < 2:
        raise ParseError("customer table has no customer rows", header_at + 1)

    ids = sorted(rows)
    table = np.array([rows[c][1] for c in ids])
    xy, demand, ready, due, service = table[:, 0:2], table[:, 2], table[:, 3], table[:, 4], table[:, 5]
    scale = float(np.abs(xy).max()) or 1.0
    return Instance(
        depot_coords=xy[:1] / scale,
        customer_coords=xy[1:] / scale,
        linehaul_demand=demand[1:] / capacity,
        backhaul_demand=np.zeros(len(ids) - 1),
        tw_early=ready[1:] / scale,
        tw_late=due[1:] / scale,
        tw_service=service[1:] / scale,
        variant=VariantSpec(time_windows=True),
        capacity=1.0,
        duration_limit=HORIZON_INF,
        depot_late=due[0] / scale,
        scale=scale,
        name=name,
    )


def format_solomon(inst: Instance, capacity: float = 200, vehicles: int = 25) -> str:
    """Write an instance back out in Solomon layout (raw units restored)."""
    s = inst.scale
    out = [
        inst.name or "INSTANCE",
        "",
        "VEHICLE",
        "NUMBER     CAPACITY",
        f"  {vehicles}         {_fmt(capacity)}",
        "",
        "CUSTOMER",
        "CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME",
        "",
    ]
    x0, y0 = inst.depot_coords[0] * s
    out.append(f"    0 {_fmt(x0)} {_fmt(y0)} 0 0 {_fmt(inst.depot_late * s)} 0")
    for i in range(inst.n_customers):
        x, y = inst.customer_coords[i] * s
        out.append(
            f"    {i + 1} {_fmt(x)} {_fmt(y)} {_fmt(inst.linehaul_demand[i] * capacity)} "
            f"{_fmt(inst.tw_early[i] * s)} {_fmt(inst.tw_late[i] * s)} {_fmt(inst.tw_service[i] * s)}"
        )
    return "\n".join(out) + "\n"


def _fmt(v: float) -> str:
    r = round(v)
    return str(int(r)) if abs(v - r) < 1e-9 else format(v, ".17g")


def _next_nonblank(lines, start):
    for j in range(start, len(lines)):
        if lines[j].strip():
            return j
    return None


def _num(token: str, idx: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"non-numeric field {token!r}", idx + 1) from None
