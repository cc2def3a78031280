"""Few-shot prompt-based fine-tuning toolkit."""

from .schema import (
    LabeledExample,
    Prompt,
    Template,
    Verbalizer,
    parse_template,
    render,
    render_filled,
)
from .backend import BackendCapabilities, HashBagEncoder, ToyGenerator, ToyMLMBackend
from .inference import (
    ClassDistribution,
    RegressionSpec,
    class_probabilities,
    classification_loss,
    regression_loss,
    regression_predict,
    regression_target,
)
from .datasets import Task, load_dataset
from .protocol import FewShotSplit, grid_search, run_protocol, sample_split

__all__ = [
    "LabeledExample",
    "Prompt",
    "Template",
    "Verbalizer",
    "parse_template",
    "render",
    "render_filled",
    "BackendCapabilities",
    "HashBagEncoder",
    "ToyGenerator",
    "ToyMLMBackend",
    "ClassDistribution",
    "RegressionSpec",
    "class_probabilities",
    "classification_loss",
    "regression_loss",
    "regression_predict",
    "regression_target",
    "Task",
    "load_dataset",
    "FewShotSplit",
    "grid_search",
    "run_protocol",
    "sample_split",
]

__version__ = "0.1.0"
