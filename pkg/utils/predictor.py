import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .features import MODEL_FIELDS, NormalizationSpec, extract_telemetry, raw_features, unit_scale
from .networks import Mlp, mlp_forward
from .params import load_params, save_params
from .simenv import Grant, ServerSpec, ServiceTelemetry

MAX_QOS_RATIO = 10.0


@dataclass(frozen=True)
class OAAPrediction:
    oaa_cores: float
    oaa_ways: float
    oaa_bw_units: float
    rcliff_cores: float
    rcliff_ways: float

    @property
    def oaa_grant(self) -> Grant:
        """Rounded up; at least one unit of everything."""
        return Grant(
            max(1, math.ceil(self.oaa_cores)),
            max(1, math.ceil(self.oaa_ways)),
            max(1, math.ceil(self.oaa_bw_units)),
        )

    @property
    def rcliff_grant(self) -> Grant:
        return Grant(
            max(1, math.ceil(self.rcliff_cores)),
            max(1, math.ceil(self.rcliff_ways)),
            max(1, math.ceil(self.oaa_bw_units)),
        )


@dataclass(frozen=True)
class QosPrediction:
    predicted_qos: float

    @property
    def met(self) -> bool:
        return self.predicted_qos <= 1.0


class Predictor:
    name: str = ""
    model_path: str = ""
    model: Optional[Mlp] = None
    model_key: str = ""
    n_out: int = 1

    def __init__(
        self,
        server: ServerSpec,
        norm: NormalizationSpec,
        model_path: str = "",
        model: Optional[Mlp] = None,
        dropout_rate: float = 0.3,
        seed: int = 0,
    ):
        self.server = server
        self.norm = norm
        self.model_path = model_path
        if model is not None:
            self.model = model
        elif model_path:
            self.load()
        else:
            self.model = Mlp(len(MODEL_FIELDS[self.model_key]), self.n_out, dropout_rate=dropout_rate, seed=seed)

    def load(self):
        self.model = load_params(self.model_path)[self.name]

    def save(self, path: str = ""):
        save_params(path or self.model_path, {self.name: self.model})

    def raw_output(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != len(MODEL_FIELDS[self.model_key]):
            raise ValueError(f"{self.name} expects {len(MODEL_FIELDS[self.model_key])} features, got {features.shape[-1]}")
        return mlp_forward(self.model, features).numpy()


class OaaPredictor(Predictor):
    """Model-A: OAA, OAA bandwidth and RCliff from a 12-field projection."""
    name = "model_a"
    model_key = "A"
    n_out = 5

    def predict_counts(self, features) -> np.ndarray:
        """Outputs in resource units, clamped to the platform; works on batches."""
        scale = unit_scale(self.server)
        return np.clip(self.raw_output(features), 0.0, 1.0) * scale

    def predict(self, features) -> OAAPrediction:
        return OAAPrediction(*(float(v) for v in self.predict_counts(features)))

    def predict_telemetry(self, telemetry: ServiceTelemetry) -> OAAPrediction:
        return self.predict(extract_telemetry(telemetry, "A", self.norm, self.server))


class QosPredictor(Predictor):
    """Model-B: latency over QoS target after moving to an expected allocation."""
    name = "model_b"
    model_key = "B"
    n_out = 1

    def predict_ratios(self, features) -> np.ndarray:
        return np.clip(self.raw_output(features)[..., 0], 0.0, MAX_QOS_RATIO)

    def predict(self, features) -> QosPrediction:
        return QosPrediction(float(self.predict_ratios(features)))

    def predict_after(self, telemetry: ServiceTelemetry, expected_cores: float, expected_ways: float) -> QosPrediction:
        """QoS the service would reach holding ``expected_cores`` cores and ``expected_ways`` ways."""
        raw = raw_features(telemetry, self.server)
        raw["expected_cores"] = float(expected_cores)
        raw["expected_cache"] = expected_ways * self.server.way_size_mb
        return self.predict(self.norm.normalize(raw, "B"))


def oaa_targets(labels: np.ndarray, server: ServerSpec) -> np.ndarray:
    """Scale raw OAA/RCliff labels into the network's [0, 1] output space."""
    return np.asarray(labels, dtype=float) / unit_scale(server)


