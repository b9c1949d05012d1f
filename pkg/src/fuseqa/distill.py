"""Per-modality student MLPs that imitate the frozen fusion teacher.

Each student block is two row-wise MLPs: the first maps the raw encoder
output to an inter-stage imitation, the second maps that to an
intra-stage imitation. Training minimizes the summed MSE against the
teacher pair of its own modality; teacher values are constants.
"""

from dataclasses import dataclass

from .autodiff import ShapeError, Tensor, add, matmul, mse, relu
from .fusion import FusionOutputs


@dataclass
class MlpParams:
    w1: Tensor  # (d, d_h)
    b1: Tensor  # (d_h,)
    w2: Tensor  # (d_h, d)
    b2: Tensor  # (d,)


@dataclass
class StudentParams:
    mlp1: MlpParams  # encoder output -> inter-stage student
    mlp2: MlpParams  # inter-stage student -> intra-stage student
    modality: str    # "audio" | "text"


@dataclass
class StudentOutputs:
    inter: Tensor  # (len, d)
    intra: Tensor  # (len, d)
    modality: str


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    """Row-wise two-layer MLP with ReLU."""
    return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2)


def student_forward(encoded: Tensor, params: StudentParams) -> StudentOutputs:
    """Run both student stages on a single-modality encoder output."""
    if encoded.data.ndim != 2 or encoded.data.shape[1] != params.mlp1.w1.data.shape[0]:
        raise ShapeError("student_forward", encoded.data.shape, params.mlp1.w1.data.shape)
    inter = mlp_forward(encoded, params.mlp1)
    intra = mlp_forward(inter, params.mlp2)
    return StudentOutputs(inter=inter, intra=intra, modality=params.modality)


def distill_loss(teacher: FusionOutputs, students: StudentOutputs) -> Tensor:
    """MSE(teacher_inter, student_inter) + MSE(teacher_intra, student_intra).

    The teacher pair is selected by the student's modality; teacher values
    are detached so no gradient reaches the frozen teacher.
    """
    if students.modality == "audio":
        t_inter, t_intra = teacher.audio_inter, teacher.audio_intra
    elif students.modality == "text":
        t_inter, t_intra = teacher.text_inter, teacher.text_intra
    else:
        raise ValueError(f"distill_loss: unknown modality {students.modality!r}")
    return add(mse(students.inter, t_inter.detach()),
               mse(students.intra, t_intra.detach()))
