import json
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class ModelSize(str, Enum):
    H1 = "h1"
    H2 = "h2"
    H3 = "h3"
    H4 = "h4"
    H5 = "h5"


class ShapeKind(str, Enum):
    CUBE = "cube"
    SPHERE = "sphere"
    TORUS = "torus"
    SLAB = "slab"
    FILE = "file"


class WosConfig(BaseModel):
    # None resolves to 1e-3 * bbox diagonal of the problem's boundary mesh
    shell_eps: Optional[float] = Field(default=None, gt=0)
    max_steps: int = Field(default=1000, ge=1)
    m: int = Field(default=500, ge=1)

    def resolved_shell_eps(self, bbox_diagonal: float) -> float:
        if self.shell_eps is not None:
            return self.shell_eps
        return 1e-3 * bbox_diagonal


class AmrConfig(BaseModel):
    threshold: float = Field(default=0.7, gt=0.0, le=1.0)
    vertex_budget: int = Field(default=10000, ge=1)
    max_iterations: int = Field(default=50, ge=0)


class MesherConfig(BaseModel):
    gradation: float = Field(default=2.0, ge=1.0)
    quality_floor_deg: float = Field(default=1.0, ge=0.0)
    # boundary vertices closer than this fraction of the local size are snapped
    snap_fraction: float = Field(default=0.3, gt=0.0)
    # memory guard, relative to the bbox diagonal
    min_size_fraction: float = Field(default=1e-3, gt=0.0)


class ModelPreset(BaseModel):
    encoder_dims: List[int] = Field(default_factory=lambda: [1, 8, 16])
    decoder_dims: List[int] = Field(default_factory=lambda: [16, 8, 1])
    gnn_levels: int = Field(default=2, ge=0)

    @model_validator(mode="after")
    def _check_dims(self) -> "ModelPreset":
        if self.encoder_dims[0] != 1 or self.decoder_dims[-1] != 1:
            raise ValueError("network maps one value per node to one size per node")
        if self.encoder_dims[-1] != self.decoder_dims[0]:
            raise ValueError("encoder output width must match decoder input width")
        return self

    @property
    def latent_dim(self) -> int:
        return self.encoder_dims[-1]

    @classmethod
    def from_size(cls, size: ModelSize) -> "ModelPreset":
        if size in (ModelSize.H1, ModelSize.H2, ModelSize.H3):
            return cls(encoder_dims=[1, 8, 16], decoder_dims=[16, 8, 1], gnn_levels=2)
        if size == ModelSize.H4:
            return cls(encoder_dims=[1, 16, 32], decoder_dims=[32, 16, 1], gnn_levels=2)
        return cls(encoder_dims=[1, 16, 32, 48], decoder_dims=[48, 32, 16, 1], gnn_levels=3)


class TrainConfig(BaseModel):
    alpha: float = Field(default=0.8, ge=0.0)
    beta: float = Field(default=0.08, gt=0.0, lt=1.0)
    delta: float = Field(default=1.0, gt=0.0)
    s_lo: float = Field(default=0.05, gt=0.0, lt=1.0)
    s_hi: float = Field(default=0.17, gt=0.0, lt=1.0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    epochs: int = Field(default=200, ge=1)
    # epoch order of the training graphs
    shuffle_seed: int = 0
    k_neighbors: int = Field(default=8, ge=1)
    validation_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    # second-moment-only adaptive step; set adam_beta1 > 0 for classic Adam
    adam_beta1: float = Field(default=0.0, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, gt=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)

    @model_validator(mode="after")
    def _check_thresholds(self) -> "TrainConfig":
        if self.s_lo >= self.s_hi:
            raise ValueError("s_lo must be below s_hi")
        return self


class ShapeSpec(BaseModel):
    name: str
    kind: ShapeKind = ShapeKind.CUBE
    path: Optional[str] = None
    size: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def _check_path(self) -> "ShapeSpec":
        if self.kind == ShapeKind.FILE and not self.path:
            raise ValueError(f"shape {self.name} of kind 'file' needs a path")
        return self


class ProblemRanges(BaseModel):
    gaussians: Tuple[int, int] = (40, 50)
    spheres: Tuple[int, int] = (20, 30)
    n_points: Tuple[int, int] = (200, 2000)
    walks: Tuple[int, int] = (500, 1000)
    gaussian_amplitude: Tuple[float, float] = (-1.0, 1.0)
    # widths and radii are fractions of the bbox diagonal
    gaussian_width: Tuple[float, float] = (0.02, 0.15)
    sphere_radius: Tuple[float, float] = (0.01, 0.08)
    sphere_amplitude: Tuple[float, float] = (-20.0, 20.0)

    @field_validator("*")
    @classmethod
    def _nonempty(cls, value):
        lo, hi = value
        if lo > hi:
            raise ValueError(f"empty range {value}")
        return value


class ExperimentConfig(BaseModel):
    shapes: List[ShapeSpec] = Field(default_factory=lambda: [ShapeSpec(name="cube")], min_length=1)
    ranges: ProblemRanges = Field(default_factory=ProblemRanges)
    n_problems: int = Field(default=100, ge=1)
    n_eval: int = Field(default=20, ge=1)
    wos: WosConfig = Field(default_factory=WosConfig)
    # reference fields for training come from AMR from ~5500 to ~15000 vertices
    training_amr: AmrConfig = Field(default_factory=lambda: AmrConfig(threshold=0.7, vertex_budget=15000))
    coarse_vertices: int = Field(default=5500, ge=8)
    baseline_amr: AmrConfig = Field(default_factory=lambda: AmrConfig(threshold=0.7, vertex_budget=10000))
    mesher: MesherConfig = Field(default_factory=MesherConfig)
    model_size: ModelSize = ModelSize.H1
    train: TrainConfig = Field(default_factory=TrainConfig)
    eta: float = Field(default=1.0, gt=0.0)
    eta_sweep: List[float] = Field(default_factory=lambda: [0.7, 0.85, 1.0, 1.2])
    robustness_m: List[int] = Field(default_factory=lambda: [50, 500, 2000])
    robustness_n: List[int] = Field(default_factory=lambda: [50, 500, 3000])
    inference_n: int = Field(default=500, ge=1)
    inference_m: int = Field(default=500, ge=1)
    reference_vertices: int = Field(default=50000, ge=8)
    wos_baseline_points: int = Field(default=2000, ge=1)
    wos_baseline_walks: int = Field(default=1000, ge=1)
    probe_points: int = Field(default=4096, ge=1)
    uniform_sweep: List[int] = Field(default_factory=lambda: [2000, 5000, 10000, 20000])
    dataset_seed: int = 0
    train_seed: int = 1
    eval_seed: int = 2
    output_dir: str = "output"
    # persist each AMR reference mesh next to its problem
    save_meshes: bool = True
    workers: int = Field(default=1, ge=1)

    @property
    def model_preset(self) -> ModelPreset:
        return ModelPreset.from_size(self.model_size)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with Path(path).open("r", encoding="utf-8") as f:
            return cls(**json.load(f))
