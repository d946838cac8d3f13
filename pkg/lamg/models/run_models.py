from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field


class MethodTag(str, Enum):
    LAMG = "lamg"
    AMR = "amr"
    WOS = "wos"
    UNIFORM = "uniform"
    AMG = "amg"


class NormKind(str, Enum):
    L2 = "L2"
    LINF = "Linf"


# Columns that hold wall-clock measurements; excluded from reproducibility checks
TIMING_COLUMNS = ("mc_time", "inference_time", "meshing_time", "refinement_time", "fem_time", "total_time")


class RunRecord(BaseModel):
    problem_id: str
    method: MethodTag
    mc_time: float = Field(default=0.0, ge=0.0)
    inference_time: float = Field(default=0.0, ge=0.0)
    meshing_time: float = Field(default=0.0, ge=0.0)
    refinement_time: float = Field(default=0.0, ge=0.0)
    fem_time: float = Field(default=0.0, ge=0.0)
    vertex_count: int = Field(default=0, ge=0)
    tet_count: int = Field(default=0, ge=0)
    eta: Optional[float] = Field(default=None, gt=0.0)
    n_points: Optional[int] = None
    walks: Optional[int] = None
    re_l2: Optional[float] = Field(default=None, ge=0.0)
    re_linf: Optional[float] = Field(default=None, ge=0.0)
    label: str = ""

    @property
    def total_time(self) -> float:
        return self.mc_time + self.inference_time + self.meshing_time + self.refinement_time + self.fem_time

    def to_row(self) -> dict:
        row = self.model_dump(mode="json")
        row["total_time"] = self.total_time
        return row
