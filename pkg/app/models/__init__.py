"""
Models package initialization
Export all models for easy importing
"""

from app.models.ann import AnnParams, AnnPrediction, Variant
from app.models.dataset import Dataset, DayCtr, FeedbackLoopOutput
from app.models.job_queue_model import JobStatus, JobType, SweepJob
from app.models.network import Activation, DenseLayer, Network
from app.models.ranker import LogisticRanker

__all__ = [
    "Activation",
    "AnnParams",
    "AnnPrediction",
    "Dataset",
    "DayCtr",
    "DenseLayer",
    "FeedbackLoopOutput",
    "JobStatus",
    "JobType",
    "LogisticRanker",
    "Network",
    "SweepJob",
    "Variant",
]
