import json
from datetime import datetime
from functools import cached_property

from pydantic import BaseModel, Field, ValidationError, field_validator


class SolverSettings(BaseModel):
    """Numerical parameters of the expansion builder and of the reference solver."""
    # regular series
    degree: int = Field(32, ge=4)
    tol: float = Field(1e-12, gt=0)
    newton_max_iter: int = Field(50, ge=1)
    newton_max_halvings: int = Field(30, ge=0)
    # structure checks
    t_floor: float = Field(1e-3, gt=0)
    structure_grid: int = Field(32, ge=4)
    # boundary layers
    layer_nodes: int = Field(400, ge=16)
    grading: float = Field(4.0, gt=0)
    tau_max: float | None = Field(None, gt=0)
    fixed_point_max_iter: int = Field(200, ge=1)
    propagator_rtol: float = Field(1e-11, gt=0)
    propagator_atol: float = Field(1e-14, gt=0)
    # matching
    match_tol: float = Field(1e-11, gt=0)
    match_max_iter: int = Field(100, ge=1)
    fixed_point_damping: float = Field(1.0, gt=0, le=1)
    newton_switch_ratio: float = Field(0.9, gt=0)
    # reference solver and validation
    reference_intervals: int = Field(4096, ge=16)
    reference_tol: float = Field(1e-10, gt=0)
    shishkin_constant: float | None = Field(None, gt=0)
    richardson: bool = True
    probe_count: int = Field(1001, ge=3)
    interior_margin: float = Field(0.1, gt=0)
    slope_floor: float = Field(1e-10, gt=0)
    jobs: int = 1
    verbose: bool = True

    @field_validator('reference_intervals')
    @classmethod
    def _multiple_of_four(cls, v: int) -> int:
        if v % 4 != 0:
            raise ValueError('reference_intervals must be a multiple of 4')
        return v

    def merged(self, **overrides) -> 'SolverSettings':
        """Copy with the given fields replaced, skipping overrides that are None."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        return self.model_validate({**self.model_dump(), **updates})


class RunConfig(BaseModel):
    name: str | None = None
    problem: str
    order: int = Field(0, ge=0)
    epsilons: list[float]
    T: float | None = None
    settings: dict | None = None

    @field_validator('epsilons')
    @classmethod
    def _decreasing(cls, v: list[float]) -> list[float]:
        if len(v) < 3:
            raise ValueError('at least three values of eps are needed for a slope')
        if any(e <= 0 for e in v) or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError('epsilons must be positive and strictly decreasing')
        return v

    @property
    def resolved_name(self) -> str:
        if self.name is not None:
            return self.name.replace('$problem', self.problem).replace('$order', str(self.order))
        return f'{self.problem}-l{self.order}'

    def resolved_settings(self, defaults: SolverSettings) -> SolverSettings:
        return defaults.merged(**(self.settings or {}))


class ReportConfig(BaseModel):
    report_name: str
    default_settings: SolverSettings = SolverSettings()
    run_configs: list[RunConfig]
    create_log_files: bool = False

    @cached_property
    def timestamp(self) -> int:
        return int(datetime.now().timestamp())

    @property
    def resolved_report_name(self) -> str:
        if '$ts' not in self.report_name:
            raise ValueError("Report name must contain a timestamp declared by $ts")
        return self.report_name.replace('$ts', str(self.timestamp))


def read_report_config_file(config_file_path: str) -> ReportConfig:
    with open(config_file_path, 'r') as config_file:
        config_data = json.load(config_file)

    try:
        return ReportConfig.model_validate(config_data)
    except ValidationError as e:
        for error in e.errors():
            print(error['msg'])
        raise
