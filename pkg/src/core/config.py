"""
Configuration and settings for ConceptLens.
"""
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parents[2]


def _optional_int(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return None
    return int(raw)


class Settings:
    """Application settings loaded from environment variables."""

    # Reproducibility
    PIPELINE_SEED: Optional[int] = _optional_int("PIPELINE_SEED")

    # Workers and logging
    JOBS: int = int(os.getenv("CONCEPTLENS_JOBS", "1"))
    LOG_LEVEL: str = os.getenv("CONCEPTLENS_LOG_LEVEL", "INFO")

    # Shipped fixtures (table_s1.csv)
    DATA_DIR: Path = Path(os.getenv("CONCEPTLENS_DATA_DIR", str(PROJECT_ROOT / "data")))

    # Application metadata
    APP_TITLE: str = "ConceptLens"
    VERSION: str = "0.1.0"

    # Concept and attribute names used when a synthetic run fits inside the
    # 27-emotion / 14-attribute layout of the human rating tables.
    EMOTIONS: list[str] = [
        "admiration", "amusement", "anger", "annoyance", "approval", "caring",
        "confusion", "curiosity", "desire", "disappointment", "disapproval",
        "disgust", "embarrassment", "excitement", "fear", "gratitude", "grief",
        "joy", "love", "nervousness", "optimism", "pride", "realization",
        "relief", "remorse", "sadness", "surprise",
    ]
    ATTRIBUTES: list[str] = [
        "arousal", "valence", "happy", "anger", "sad", "fear", "surprise",
        "disgust", "control", "fairness", "self-related", "other-related",
        "expectedness", "non-novelty",
    ]
    NEUTRAL_CONCEPT: str = "neutral"

    @property
    def table_s1_path(self) -> Path:
        return self.DATA_DIR / "table_s1.csv"


# Singleton instance
settings = Settings()
