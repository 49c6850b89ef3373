"""Run configuration (JSON, schema-validated) and initial-condition builders."""

import json
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import hamiltonians as hm
from . import models as md
from . import spin_algebra as sa
from .errors import ConfigurationError
from .integrator import SCHEMES, IntegratorConfig
from .sphere_grid import SphereGrid

MODEL_NAMES = ("liouville", "kvn", "kvh", "hybrid_kvh", "ehrenfest", "nonlinear", "nonlinear_factored")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Strict):
    n_theta: int = 32
    n_phi: int = 64


class VMFComponent(_Strict):
    mu: list[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0], min_length=3, max_length=3)
    kappa: float = Field(default=0.0, ge=0.0)
    weight: float = Field(default=1.0, gt=0.0)


class DensityConfig(_Strict):
    """``uniform``, ``vmf`` (``mu``, ``kappa``), ``mixture`` of vMF bumps or ``random``.

    ``random`` draws a smooth positive density ``exp(p(u))`` with ``p`` a
    polynomial of degree ``degree`` whose coefficients come from the run seed.
    """

    kind: Literal["uniform", "vmf", "mixture", "random"] = "uniform"
    mu: list[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0], min_length=3, max_length=3)
    kappa: float = Field(default=0.0, ge=0.0)
    components: list[VMFComponent] = Field(default_factory=list)
    degree: int = Field(default=2, ge=1, le=4)
    amplitude: float = Field(default=0.5, ge=0.0)

    @model_validator(mode="after")
    def _mixture_needs_components(self):
        if self.kind == "mixture" and not self.components:
            raise ValueError("mixture density needs at least one component")
        return self


class SpinorConfig(_Strict):
    """``constant`` spinor ``(c0, c1)`` or a ``texture``.

    Complex amplitudes are ``[re, im]`` pairs. The texture is the smooth field
    ``exp(-i beta (axis.n) axis.sigma / 2) (c0, c1)``: the Bloch vector of the
    base spinor is rotated about ``axis`` by an angle proportional to the
    projection of ``n`` on that axis.
    """

    kind: Literal["constant", "texture"] = "constant"
    c0: list[float] = Field(default_factory=lambda: [1.0, 0.0], min_length=2, max_length=2)
    c1: list[float] = Field(default_factory=lambda: [0.0, 0.0], min_length=2, max_length=2)
    axis: list[float] = Field(default_factory=lambda: [1.0, 0.0, 0.0], min_length=3, max_length=3)
    beta: float = 0.0

    @model_validator(mode="after")
    def _nonzero(self):
        if self.c0 == [0.0, 0.0] and self.c1 == [0.0, 0.0]:
            raise ValueError("spinor amplitudes must not both vanish")
        if not any(self.axis):
            raise ValueError("texture axis must be nonzero")
        return self


class PhaseConfig(_Strict):
    """Koopman phase ``exp(i slope n_z)``; ``zero`` means ``slope = 0``."""

    kind: Literal["zero", "linear"] = "zero"
    slope: float = 0.0


class InitialConfig(_Strict):
    density: DensityConfig = Field(default_factory=DensityConfig)
    spinor: SpinorConfig = Field(default_factory=SpinorConfig)
    phase: PhaseConfig = Field(default_factory=PhaseConfig)


class IntegratorSection(_Strict):
    dt: float = Field(gt=0.0)
    t_end: float = Field(ge=0.0)
    scheme: Literal[SCHEMES] = "RK4"
    symmetrize: bool = True
    renormalize: bool = False
    diagnostic_stride: int = Field(default=1, ge=0)
    snapshot_stride: int = Field(default=0, ge=0)


class OutputConfig(_Strict):
    directory: str = "output"
    diagnostics: str = "diagnostics.csv"
    casimirs: list[Literal["x", "x2", "entropy"]] = Field(default_factory=lambda: ["x", "x2", "entropy"])


class RunConfig(_Strict):
    model: Literal[MODEL_NAMES]
    grid: GridConfig = Field(default_factory=GridConfig)
    hamiltonian: Union[dict, list] = Field(default_factory=lambda: {"family": "zero"})
    initial: InitialConfig = Field(default_factory=InitialConfig)
    integrator: IntegratorSection
    hbar: float = Field(default=1.0, gt=0.0)
    seed: int = 0
    conservative: bool = True
    vector_field_form: Literal["bivector", "direct"] = "bivector"
    abort_on_positivity: bool = False
    output: OutputConfig = Field(default_factory=OutputConfig)
    name: Optional[str] = None

    @field_validator("hamiltonian")
    @classmethod
    def _hamiltonian_builds(cls, v):
        try:
            hm.from_spec(v)
        except ConfigurationError as exc:
            raise ValueError(str(exc)) from None
        return v

    @model_validator(mode="after")
    def _checks(self):
        try:
            SphereGrid(self.grid.n_theta, self.grid.n_phi)
            self.integrator_config()
        except ConfigurationError as exc:
            raise ValueError(str(exc)) from None
        return self

    # -- builders ------------------------------------------------------------------------

    def build_grid(self):
        return SphereGrid(self.grid.n_theta, self.grid.n_phi)

    def build_hamiltonian(self):
        return hm.from_spec(self.hamiltonian)

    def integrator_config(self):
        return IntegratorConfig(**self.integrator.model_dump())

    def build_context(self, grid=None):
        return md.ModelContext(
            grid or self.build_grid(),
            self.build_hamiltonian(),
            hbar=self.hbar,
            conservative=self.conservative,
            vector_field_form=self.vector_field_form,
        )

    def physics_key(self):
        """Everything but the model choice and outputs; equal keys make runs comparable."""
        d = self.model_dump()
        for k in ("model", "output", "name", "integrator", "abort_on_positivity"):
            d.pop(k)
        return json.dumps(d, sort_keys=True)


def _format_validation_error(exc):
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(text, source="<config>"):
    """Parse and validate a JSON configuration string."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"{source}: {_format_validation_error(exc)}") from None


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))


def dump_config(cfg):
    return cfg.model_dump_json(indent=2)


# -- initial conditions ------------------------------------------------------------------


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ConfigurationError("direction vector must be nonzero")
    return v / n


def vmf_density(nodes, mu, kappa):
    """Unnormalized von Mises-Fisher profile ``exp(kappa (mu.u - 1))``."""
    return np.exp(kappa * (nodes @ _unit(mu) - 1.0))


def density_values(spec, nodes, seed=0):
    """Unnormalized density of ``spec`` at arbitrary unit vectors ``nodes``."""
    if spec.kind == "uniform":
        return np.ones(nodes.shape[:-1])
    if spec.kind == "vmf":
        return vmf_density(nodes, spec.mu, spec.kappa)
    if spec.kind == "mixture":
        return sum(c.weight * vmf_density(nodes, c.mu, c.kappa) for c in spec.components)
    rng = np.random.default_rng(seed)
    p = np.zeros(nodes.shape[:-1])
    for deg in range(1, spec.degree + 1):
        for idx in np.ndindex(*(3,) * deg):
            if list(idx) != sorted(idx):
                continue
            term = np.prod([nodes[..., i] for i in idx], axis=0)
            p = p + spec.amplitude * rng.standard_normal() * term
    return np.exp(p)


def initial_density(spec, grid, seed=0):
    """Density normalized to unit quadrature mass."""
    rho = density_values(spec, grid.nodes, seed)
    return rho / grid.integrate(rho)


def initial_spinor(spec, grid):
    c = np.array([complex(*spec.c0), complex(*spec.c1)])
    c = c / np.linalg.norm(c)
    psi = np.broadcast_to(c, grid.shape + (2,)).copy()
    if spec.kind == "texture" and spec.beta != 0:
        axis = _unit(spec.axis)
        angle = spec.beta * (grid.nodes @ axis)
        half = 0.5 * angle
        gen = np.einsum("k,kij->ij", axis, sa.SIGMA[1:])
        U = np.cos(half)[..., None, None] * sa.SIGMA[0] - 1j * np.sin(half)[..., None, None] * gen
        psi = np.einsum("...ij,...j->...i", U, psi)
    return psi


def initial_phase(spec, grid):
    slope = spec.slope if spec.kind == "linear" else 0.0
    return np.exp(1j * slope * grid.nodes[..., 2])


def initial_state(cfg, grid=None):
    """Model state described by ``cfg.initial`` on ``grid``."""
    grid = grid or cfg.build_grid()
    rho = initial_density(cfg.initial.density, grid, cfg.seed)
    model = cfg.model
    if model == "liouville":
        return md.ClassicalDensity(rho)
    if model in ("kvn", "kvh"):
        return md.Koopman(np.sqrt(rho) * initial_phase(cfg.initial.phase, grid))
    psi = initial_spinor(cfg.initial.spinor, grid)
    if model == "hybrid_kvh":
        amp = np.sqrt(rho) * initial_phase(cfg.initial.phase, grid)
        return md.HybridSpinor(amp[..., None] * psi)
    if model in ("ehrenfest", "nonlinear_factored"):
        return md.Factored(rho, psi)
    return md.density_from_factored(rho, psi)
