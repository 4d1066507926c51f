"""Early video-label prediction from the tubes built so far."""

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from tubelink.linker import LinkerState, tube_mean_score


class VideoPrediction(BaseModel):
    model_config = ConfigDict(frozen=True)

    class_id: int = Field(ge=0)
    tube_id: int = Field(ge=0)
    score: float = Field(ge=0.0, le=1.0)
    observed_fraction: float = Field(1.0, gt=0.0, le=1.0)


def predict_label(state: LinkerState, observed_fraction: float = 1.0) -> Optional[VideoPrediction]:
    """Label of the highest mean-scoring tube, active or terminated.

    Returns None while no tube exists. Ties go to the lower class id, then
    to the older tube.
    """
    best: Optional[VideoPrediction] = None
    for class_id in range(state.config.class_count):
        for tube in state.tubes(class_id):
            score = tube_mean_score(tube)
            if best is None or score > best.score:
                best = VideoPrediction(
                    class_id=class_id,
                    tube_id=tube.tube_id,
                    score=score,
                    observed_fraction=observed_fraction,
                )
    return best
