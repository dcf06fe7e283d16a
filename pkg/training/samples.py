"""
EGA - Training samples
One request: the candidate pool, the K exposed ads in slot order with their
in-request clicks, and N_s unexposed ads with platform-wide click labels.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import InvalidSampleError


@dataclass(frozen=True)
class RequestSample:
    request_id: int
    user_id: int
    candidates: Tuple[int, ...]
    exposed: Tuple[int, ...]
    exposed_clicks: Tuple[int, ...]
    unexposed: Tuple[int, ...]
    unexposed_clicks: Tuple[int, ...]

    def __post_init__(self):
        if len(self.exposed) != len(self.exposed_clicks):
            raise InvalidSampleError(f"request {self.request_id}: exposed ads and clicks differ in length")
        if len(self.unexposed) != len(self.unexposed_clicks):
            raise InvalidSampleError(f"request {self.request_id}: unexposed ads and labels differ in length")
        if any(c not in (0, 1) for c in self.exposed_clicks + self.unexposed_clicks):
            raise InvalidSampleError(f"request {self.request_id}: click labels must be 0 or 1")
        if len(set(self.exposed)) != len(self.exposed):
            raise InvalidSampleError(f"request {self.request_id}: an ad is exposed twice")

    def check_sizes(self, k: int, n_s: int) -> None:
        if len(self.exposed) != k or len(self.unexposed) != n_s:
            raise InvalidSampleError(
                f"request {self.request_id}: {len(self.exposed)} exposed / {len(self.unexposed)} unexposed, "
                f"expected K={k} / N_s={n_s}"
            )

    @property
    def sample_ads(self) -> Tuple[int, ...]:
        """Exposed ads first (slot order), then unexposed."""
        return self.exposed + self.unexposed

    @property
    def sample_labels(self) -> np.ndarray:
        return np.array(self.exposed_clicks + self.unexposed_clicks, dtype=np.float64).reshape(-1, 1)
