from typing import Dict, List, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from objtx.core.models.models import Video
from objtx.utils.errors import ConfigError, DataError
from objtx.utils.rng import SPLIT, stream

SPLIT_NAMES = ("train", "val", "test")


class DatasetSplits(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    train: List[Video]
    val: List[Video]
    test: List[Video]

    def as_dict(self) -> Dict[str, List[Video]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def slice_groups(groups: Sequence[str], ratios: Tuple[float, float, float]) -> Tuple[set, set, set]:
    n = len(groups)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return set(groups[:n_train]), set(groups[n_train : n_train + n_val]), set(groups[n_train + n_val :])


def split_dataset(
    videos: Sequence[Video],
    ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15),
    movie_disjoint: bool = True,
    seed: int = 0,
) -> DatasetSplits:
    """
    Shuffle videos (or whole movies when `movie_disjoint`) and cut them into train/val/test
    by rounded ratio counts. Videos keep their input order inside each split.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    key = (lambda v: v.movie_id) if movie_disjoint else (lambda v: v.video_id)
    groups = sorted({key(v) for v in videos})
    if movie_disjoint and len(groups) < 3:
        raise DataError(f"movie-disjoint splits need at least 3 movies, got {len(groups)}")
    order = list(groups)
    stream(seed, SPLIT).shuffle(order)
    train, val, test = slice_groups(order, ratios)
    return DatasetSplits(
        train=[v for v in videos if key(v) in train],
        val=[v for v in videos if key(v) in val],
        test=[v for v in videos if key(v) in test],
    )
