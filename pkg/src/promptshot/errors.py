"""Exception hierarchy shared across the toolkit."""


class PromptshotError(Exception):
    """Base class for all toolkit errors."""


# --- template / prompt schema ---

class MalformedTemplate(PromptshotError):
    """Template DSL string violates the template invariants."""


class SlotUnfilled(PromptshotError):
    """A template references a sentence slot the example does not provide."""


class UnknownLabel(PromptshotError):
    """A label is missing from the verbalizer or the task label set."""


# --- backends ---

class InputTooLong(PromptshotError):
    """Tokenized input exceeds the backend's maximum input length."""


class NoMaskPresent(PromptshotError):
    """Input text does not contain exactly one mask token."""


class CapabilityError(PromptshotError):
    """Operation requires a capability the backend does not provide."""


class EmptyBatch(PromptshotError):
    """A training step was given an empty minibatch."""


class EmptyInput(PromptshotError):
    """Empty text where non-empty text is required."""


class UnknownToken(PromptshotError):
    """A word does not resolve to a single backend vocabulary token."""


# --- inference ---

class OutOfInterval(PromptshotError):
    """Regression gold value lies outside the task interval."""


class ShapeError(PromptshotError):
    """Vector/matrix dimensions do not agree."""


# --- search ---

class NoValidAssignment(PromptshotError):
    """No label-word assignment survives duplicate exclusion."""


class FormMismatch(PromptshotError):
    """Generation conversion form incompatible with the example shape."""


class DegenerateTemplate(PromptshotError):
    """Generated template candidate cannot be finalized."""


class NoUsableTemplate(PromptshotError):
    """Every template candidate failed training."""


# --- demonstrations ---

class EmptyClassPool(PromptshotError):
    """A class has no eligible demonstration instances."""


# --- evaluation protocol ---

class InsufficientData(PromptshotError):
    """A class is too small to sample the requested split."""


class NoSuccessfulTrial(PromptshotError):
    """Every grid-search trial failed."""


# --- cli / io ---

class ParseError(PromptshotError):
    """Malformed dataset or config file."""


class EmptyResults(PromptshotError):
    """Report requested over zero result records."""
