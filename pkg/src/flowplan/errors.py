"""Exception hierarchy for the flowplan toolkit.

Every domain error derives from FlowPlanError so callers (and the CLI)
can distinguish domain failures (exit code 1) from usage errors (exit 2).
"""


class FlowPlanError(Exception):
    """Base class for all domain errors raised by flowplan."""


class EmptySelection(FlowPlanError):
    """A mask selected no pixel with valid depth."""


class BehindCamera(FlowPlanError):
    """A point with z <= 0 cannot be projected."""


class ShapeMismatch(FlowPlanError):
    """Array shapes are inconsistent with the declared configuration."""


class DegenerateScene(FlowPlanError):
    """The scripted scene never shows the part in frame 0."""


class TooFewPoints(FlowPlanError):
    """Fewer than 3 usable points; a rigid transform is unsolvable."""


class AllInvalid(FlowPlanError):
    """No flow step has enough valid points to solve for a transform."""


class DegenerateGeometry(FlowPlanError):
    """Valid points are collinear; rotation about the line is unobservable."""


class NoFeasibleGrasp(FlowPlanError):
    """The part exceeds the gripper opening along every axis."""


class AllCollide(FlowPlanError):
    """Every grasp candidate intersects the scene."""


class NonFiniteLoss(FlowPlanError):
    """A training step produced a non-finite loss."""


class NonFiniteSample(FlowPlanError):
    """Sampling produced non-finite values."""


class PipelineStageError(FlowPlanError):
    """Wraps a module error with the pipeline stage where it occurred."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class SequenceFitError(FlowPlanError):
    """A per-step fit failed; carries the step index and the fits solved so far."""

    def __init__(self, step, cause, partial):
        self.step = step
        self.cause = cause
        self.partial = partial
        super().__init__(f"step {step}: {cause}")
