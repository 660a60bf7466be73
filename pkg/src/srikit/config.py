"""Experiment configuration: parsing, validation, and object construction.

Configs are JSON documents. Kernel matrices may be given inline or as paths
to plain-text matrix files, resolved relative to the config file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import svmap
from .engine import NoiseModel, StepSchedule, make_policy
from .errors import ValidationError
from .geometry import ConvexBody
from .markov import ControlledKernel, MatrixKernel, check_stochastic, load_matrix, sigmoid_switch_kernel

DRIFTS = (
    "linear",
    "approximate",
    "max-affine",
    "controlled-hull",
    "filippov-sign",
    "shifted-bodies",
    "zero",
    "expanding",
    "jump",
)


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ValidationError(f"{where}.{key} is required", field=f"{where}.{key}")
    return d[key]


def _positive(v, name):
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {v!r}", field=name) from None
    if not v > 0:
        raise ValidationError(f"{name} must be positive, got {v}", field=name)
    return v


def _nonneg(v, name):
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {v!r}", field=name) from None
    if not v >= 0:
        raise ValidationError(f"{name} must be >= 0, got {v}", field=name)
    return v


def _matrix(spec, base_dir: Path, name: str) -> np.ndarray:
    if isinstance(spec, str):
        path = Path(spec)
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ValidationError(f"{name}: file not found: {path}", field=name)
        return load_matrix(path)
    try:
        return np.array(spec, dtype=float, ndmin=2)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a matrix or a file path", field=name) from None


def _state_rows(values, n_states, dim, name):
    arr = np.array(values, dtype=float, ndmin=2)
    if arr.shape != (n_states, dim):
        raise ValidationError(f"{name} must have shape ({n_states}, {dim}), got {list(arr.shape)}", field=name)
    return arr


@dataclass
class ExperimentConfig:
    dim: int
    n_states: int
    drift: dict
    kernel: dict
    schedule: dict
    noise: dict
    policy: dict
    x0: list
    s0: int
    n_steps: int
    seed: int
    blowup: float = 1e6
    analysis: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    name: str = ""
    base_dir: Path = field(default_factory=Path.cwd, compare=False, repr=False)

    FIELDS = (
        "name", "dim", "n_states", "drift", "kernel", "schedule", "noise", "policy",
        "x0", "s0", "n_steps", "seed", "blowup", "analysis", "checks",
    )  # fmt: skip

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(d) - set(cls.FIELDS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}", field=sorted(unknown)[0])
        for key in ("dim", "n_states", "drift", "kernel", "schedule", "x0", "n_steps"):
            _require(d, key, "config")
        cfg = cls(
            name=str(d.get("name", "")),
            dim=d["dim"],
            n_states=d["n_states"],
            drift=copy.deepcopy(d["drift"]),
            kernel=copy.deepcopy(d["kernel"]),
            schedule=copy.deepcopy(d["schedule"]),
            noise=copy.deepcopy(d.get("noise", {"kind": "none"})),
            policy=copy.deepcopy(d.get("policy", {"kind": "random-vertex"})),
            x0=list(d["x0"]) if isinstance(d["x0"], (list, tuple)) else d["x0"],
            s0=d.get("s0", 0),
            n_steps=d["n_steps"],
            seed=d.get("seed", 0),
            blowup=d.get("blowup", 1e6),
            analysis=copy.deepcopy(d.get("analysis", {})),
            checks=copy.deepcopy(d.get("checks", {})),
            base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}", field="config")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})", field="config") from None
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        c = copy.deepcopy(self)
        c.seed = int(seed)
        return c

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        for key in ("dim", "n_states", "n_steps"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValidationError(f"{key} must be a positive integer, got {v!r}", field=key)
        if not isinstance(self.s0, int) or not 0 <= self.s0 < self.n_states:
            raise ValidationError(f"s0 must be an integer in [0, {self.n_states}), got {self.s0!r}", field="s0")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative integer, got {self.seed!r}", field="seed")
        x0 = np.asarray(self.x0, dtype=float) if isinstance(self.x0, list) else None
        if x0 is None or x0.shape != (self.dim,) or not np.all(np.isfinite(x0)):
            raise ValidationError(f"x0 must be a list of {self.dim} finite numbers", field="x0")
        _positive(self.blowup, "blowup")
        self.build_schedule()
        self.build_noise()
        self.build_policy()
        drift = self.build_drift()
        kernel = self.build_kernel()
        if drift.dim != self.dim:
            raise ValidationError(f"drift dimension {drift.dim} != dim {self.dim}", field="drift")
        if drift.n_states != self.n_states or kernel.n_states != self.n_states:
            raise ValidationError(
                f"n_states={self.n_states} but drift has {drift.n_states} and kernel {kernel.n_states}",
                field="n_states",
            )
        self._validate_analysis()
        unknown = set(self.checks) - {"seed", "box", "growth_samples", "closed_graph_point", "closed_graph_radii", "A4_T"}
        if unknown:
            raise ValidationError(f"unknown checks options: {sorted(unknown)}", field="checks")

    def _validate_analysis(self):
        a = self.analysis
        unknown = set(a) - {"apt", "limit_set", "attractor", "support_dump"}
        if unknown:
            raise ValidationError(f"unknown analysis blocks: {sorted(unknown)}", field="analysis")
        if "apt" in a:
            apt = a["apt"]
            _positive(_require(apt, "T", "analysis.apt"), "analysis.apt.T")
            _positive(_require(apt, "dt", "analysis.apt.dt"), "analysis.apt.dt")
            if "t_grid" in apt:
                if not isinstance(apt["t_grid"], list) or not apt["t_grid"]:
                    raise ValidationError("analysis.apt.t_grid must be a nonempty list", field="analysis.apt.t_grid")
                for v in apt["t_grid"]:
                    _nonneg(v, "analysis.apt.t_grid")
            else:
                n = apt.get("n_points", 8)
                if not isinstance(n, int) or n < 1:
                    raise ValidationError("analysis.apt.n_points must be a positive integer", field="analysis.apt.n_points")
                _positive(apt.get("t_min", 1.0), "analysis.apt.t_min")
        if "limit_set" in a:
            tf = a["limit_set"].get("tail_fraction", 0.1)
            if not (isinstance(tf, (int, float)) and 0 < tf < 1):
                raise ValidationError(f"tail_fraction must lie in (0, 1), got {tf!r}", field="analysis.limit_set.tail_fraction")
        if "attractor" in a:
            self.attractor_body()
            _nonneg(a["attractor"].get("eps", 0.0), "analysis.attractor.eps")
        if "support_dump" in a:
            sd = a["support_dump"]
            pts = np.array(_require(sd, "points", "analysis.support_dump"), dtype=float, ndmin=2)
            if pts.shape[1] != self.dim:
                raise ValidationError(f"support_dump points must have dimension {self.dim}", field="analysis.support_dump.points")
            if "dirs" in sd:
                D = np.array(sd["dirs"], dtype=float, ndmin=2)
                if D.shape[1] != self.dim:
                    raise ValidationError(f"support_dump dirs must have dimension {self.dim}", field="analysis.support_dump.dirs")

    # -- builders ----------------------------------------------------------

    def build_schedule(self) -> StepSchedule:
        s = self.schedule
        if not isinstance(s, dict):
            raise ValidationError("schedule must be an object", field="schedule")
        a0 = _positive(s.get("a0", 1.0), "schedule.a0")
        gamma = _nonneg(_require(s, "gamma", "schedule"), "schedule.gamma")
        return StepSchedule(a0, gamma)

    def build_noise(self) -> NoiseModel:
        n = self.noise
        kind = n.get("kind", "none")
        if kind == "bounded-iid":
            return NoiseModel(kind, bound=_nonneg(_require(n, "bound", "noise"), "noise.bound"))
        if kind == "gaussian-md":
            return NoiseModel(kind, sigma=_nonneg(_require(n, "sigma", "noise"), "noise.sigma"))
        if kind == "constant":
            vec = tuple(float(v) for v in _require(n, "vector", "noise"))
            if len(vec) != self.dim:
                raise ValidationError(f"noise.vector must have length {self.dim}", field="noise.vector")
            return NoiseModel(kind, vector=vec)
        return NoiseModel(kind)

    def build_policy(self):
        p = make_policy(self.policy)
        if p.name == "toward-target" and len(p.direction) != self.dim:
            raise ValidationError(f"policy.direction must have length {self.dim}", field="policy.direction")
        return p

    def build_drift(self) -> svmap.DriftMap:
        d = self.drift
        name = _require(d, "name", "drift")
        if name not in DRIFTS:
            raise ValidationError(f"unknown drift {name!r}; expected one of {DRIFTS}", field="drift.name")
        n, dim = self.n_states, self.dim
        K = d.get("K")
        if name != "max-affine":
            K = _positive(_require(d, "K", "drift"), "drift.K")
        if name in ("linear", "approximate"):
            b = _state_rows(d.get("b", np.zeros((n, dim))), n, dim, "drift.b")
            base = svmap.affine_singleton(b, K, slope=float(d.get("slope", -1.0)))
            if name == "approximate":
                eps = _nonneg(_require(d, "eps", "drift"), "drift.eps")
                # the declared K is the growth constant of the inflated map
                return replace(svmap.approximate_drift(base, eps), growth_K=K, name="approximate")
            return base
        if name == "max-affine":
            tie = _positive(d.get("tie_tol", svmap.TIE_TOL), "drift.tie_tol")
            if "thetas" in d:
                if dim != 1:
                    raise ValidationError("drift.thetas shortcut is one-dimensional", field="drift.thetas")
                thetas = d["thetas"]
                if len(thetas) != n:
                    raise ValidationError(f"drift.thetas must have {n} entries", field="drift.thetas")
                pieces = svmap.abs_deviation_pieces(thetas)
            else:
                pieces = _require(d, "pieces", "drift")
                if len(pieces) != n:
                    raise ValidationError(f"drift.pieces must have one list per state ({n})", field="drift.pieces")
            try:
                dm = svmap.max_affine_subgradient(pieces, None if K is None else _positive(K, "drift.K"), tie)
            except (TypeError, IndexError) as exc:
                raise ValidationError(f"drift.pieces malformed: {exc}", field="drift.pieces") from None
            if dm.dim != dim:
                raise ValidationError(f"drift.pieces slopes must have dimension {dim}", field="drift.pieces")
            return dm
        if name == "controlled-hull":
            b = _state_rows(d.get("b", np.zeros((n, dim))), n, dim, "drift.b")
            controls = np.array(_require(d, "controls", "drift"), dtype=float, ndmin=2)
            if controls.shape[1] != dim or controls.shape[0] == 0:
                raise ValidationError(f"drift.controls must be a nonempty list of {dim}-vectors", field="drift.controls")

            def h(x, z, s):
                return -x + z + b[s]

            return svmap.controlled_hull(h, list(controls), K, dim, n)
        if name == "filippov-sign":
            b = _state_rows(d.get("b", np.zeros((n, dim))), n, dim, "drift.b")
            eps = _positive(_require(d, "eps", "drift"), "drift.eps")
            ns = d.get("n_samples", 64)
            if not isinstance(ns, int) or ns < 1:
                raise ValidationError("drift.n_samples must be a positive integer", field="drift.n_samples")

            def h(x, s):
                return -np.sign(x) + b[s]

            return svmap.filippov_envelope(h, eps, ns, d.get("sample_seed", 0), K, dim, n)
        if name == "shifted-bodies":
            specs = _require(d, "bodies", "drift")
            if len(specs) != n:
                raise ValidationError(f"drift.bodies must have one body per state ({n})", field="drift.bodies")
            bodies = []
            for i, bs in enumerate(specs):
                try:
                    body = ConvexBody(bs["generators"], bs.get("radius", 0.0))
                except (KeyError, TypeError) as exc:
                    raise ValidationError(f"drift.bodies[{i}] malformed: {exc}", field=f"drift.bodies[{i}]") from None
                if body.dim != dim:
                    raise ValidationError(f"drift.bodies[{i}] has dimension {body.dim}", field=f"drift.bodies[{i}]")
                bodies.append(body)
            slope = float(d.get("slope", -1.0))

            def ev(x, s):
                c = bodies[s]
                return ConvexBody(c.generators + slope * x, c.radius)

            return svmap.DriftMap(ev, K, dim, n, name="shifted-bodies")
        if name == "zero":
            return svmap.singleton_map(lambda x, s: np.zeros(dim), K, dim, n, name="zero")
        if name == "expanding":
            return svmap.singleton_map(lambda x, s: x, K, dim, n, name="expanding")
        return svmap.jump_fixture(dim, n)

    def build_kernel(self):
        k = self.kernel
        variant = _require(k, "variant", "kernel")
        if variant == "independent":
            P = _matrix(_require(k, "matrix", "kernel"), self.base_dir, "kernel.matrix")
            try:
                return MatrixKernel(check_stochastic(P, "kernel.matrix"))
            except ValidationError as exc:
                raise ValidationError(str(exc), field="kernel.matrix") from None
        if variant == "controlled":
            mats = _require(k, "matrices", "kernel")
            if not isinstance(mats, list) or not mats:
                raise ValidationError("kernel.matrices must be a nonempty list", field="kernel.matrices")
            kernels = []
            for i, m in enumerate(mats):
                P = _matrix(m, self.base_dir, f"kernel.matrices[{i}]")
                try:
                    kernels.append(MatrixKernel(check_stochastic(P, f"kernel.matrices[{i}]")))
                except ValidationError as exc:
                    raise ValidationError(str(exc), field=f"kernel.matrices[{i}]") from None
            pol = _matrix(_require(k, "policy", "kernel"), self.base_dir, "kernel.policy")
            try:
                return ControlledKernel(tuple(kernels), pol)
            except ValidationError as exc:
                raise ValidationError(str(exc), field="kernel.policy") from None
        if variant == "dependent":
            name = _require(k, "name", "kernel")
            if name != "sigmoid-switch":
                raise ValidationError(f"unknown iterate-dependent kernel {name!r}", field="kernel.name")
            params = k.get("params", {})
            floor = float(params.get("floor", 0.1))
            if not 0 <= floor <= 0.5:
                raise ValidationError("kernel.params.floor must lie in [0, 0.5]", field="kernel.params.floor")
            return sigmoid_switch_kernel(float(params.get("scale", 1.0)), floor)
        raise ValidationError(
            f"unknown kernel variant {variant!r}; expected independent, controlled or dependent", field="kernel.variant"
        )

    def attractor_body(self) -> ConvexBody | None:
        a = self.analysis.get("attractor")
        if a is None:
            return None
        try:
            body = ConvexBody(_require(a, "generators", "analysis.attractor"), a.get("radius", 0.0))
        except ValidationError as exc:
            raise ValidationError(str(exc), field="analysis.attractor") from None
        if body.dim != self.dim:
            raise ValidationError(f"attractor must have dimension {self.dim}", field="analysis.attractor.generators")
        return body


def preset_names() -> list[str]:
    root = resources.files("srikit") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    root = resources.files("srikit") / "presets"
    path = root / f"{name}.json"
    if not path.is_file():
        raise ValidationError(f"unknown preset {name!r}; available: {preset_names()}", field="preset")
    return ExperimentConfig.load(Path(str(path)))
