"""Mine daily object-usage routines from household movement logs with LDA."""

__version__ = "0.1.0"

from ._jit import BACKEND
from .corpus import Corpus, Document, TokenizerConfig, WordToken, build_corpus, corpus_from_events, \
    load_corpus, save_corpus, tokenize
from .errors import ParseError, RoutineMinerError, SchemaVersionError
from .ingest import DetectionConfig, MovementEvent, SensorSample, amplitude, detect_all, \
    detect_events, parse_samples, read_events_csv, write_events_csv
from .lda import KSelection, LdaConfig, LdaModel, fit, infer_theta, load_model, perplexity, \
    save_model, select_k
from .report import build_report, detect_duplicates, extract_couse, salience, summarize_topics
from .svg import render_svg
from .synth import RoutineSpec, ScenarioSpec, generate_events, generate_samples, household_scenario

__all__ = [
    "BACKEND", "Corpus", "DetectionConfig", "Document", "KSelection", "LdaConfig", "LdaModel",
    "MovementEvent", "ParseError", "RoutineMinerError", "RoutineSpec", "ScenarioSpec",
    "SchemaVersionError", "SensorSample", "TokenizerConfig", "WordToken", "amplitude",
    "build_corpus", "build_report", "corpus_from_events", "detect_all", "detect_duplicates",
    "detect_events", "extract_couse", "fit", "generate_events", "generate_samples", "infer_theta",
    "load_corpus", "load_model", "household_scenario", "parse_samples", "perplexity",
    "read_events_csv", "render_svg", "salience", "save_corpus", "save_model", "select_k",
    "summarize_topics", "tokenize", "write_events_csv",
]
