"""Motion data ingestion, annotation, windowing and synthetic corpora."""

from .annotations import Annotations, SchemaError, annotate, load_annotations, write_annotations
from .bvh import BVHParseError, attach_robot, parse_bvh
from .clip import (
    ACTIVITIES,
    ACTIVITY_PARAMS,
    AnnotationError,
    HandoverState,
    MotionClip,
    Possession,
    facing_transforms,
    feature_width,
    normalize_clip,
    one_hot,
    segment_handovers,
    to_hip_frame,
    transfer_frame,
)
from .storage import read_corpus, write_clip_csv, write_corpus
from .synth import SynthConfig, minimum_jerk, minimum_jerk_profile, sub_seed, synth_clip, synth_corpus
from .windows import (
    DEFAULT_T,
    ClipTooShortError,
    MotionWindow,
    WindowSet,
    choose_test_pairs,
    make_windows,
    participant_split,
)
