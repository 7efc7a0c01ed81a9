"""Curvature of local activation (CLA) probing for piecewise-linear generators.

Finds internal neurons whose activation is confined to a small patch of
latent space, scores generated samples by them, and dampens the responsible
units to correct low-fidelity outputs.
"""

from .correction import CorrectionConfig, UnitScore, correct, identify_artifact_units, unit_cla
from .netcore import (
    Activation,
    Layer,
    NetworkSpec,
    NeuronSite,
    forward,
    forward_from,
    load_model,
    neuron_value,
    save_model,
)
from .probe import (
    ChangePointPair,
    ClaRecord,
    ProbeConfig,
    activation_profile,
    axis_curvature,
    cla,
    find_change_points,
    layer_cla,
)
from .scoring import GroupSelection, SampleScore, rank_and_select, sample_score

__version__ = "0.1.0"
