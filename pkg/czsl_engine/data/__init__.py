"""
Dataset formats, split construction, triplet sampling and the synthetic benchmark.
"""

from .embeddings import load_word_embeddings, lookup, write_word_embeddings
from .features import FeatureStore, load_features, write_features
from .manifest import DatasetManifest, SampleRecord, load_manifest
from .split import SplitSpec, build_czsl_split, load_split, load_synonyms
from .synthetic import (
    BlockMask,
    SyntheticDataset,
    attention_mass_on_mask,
    generate_synthetic,
    load_masks,
    write_synthetic,
)
from .triplets import LabeledSample, TripletIndex, TripletSample, find_source_triplet, mates_for, sample_triplet, stack_triplets

__all__ = [
    "BlockMask",
    "DatasetManifest",
    "FeatureStore",
    "LabeledSample",
    "SampleRecord",
    "SplitSpec",
    "SyntheticDataset",
    "TripletIndex",
    "TripletSample",
    "attention_mass_on_mask",
    "build_czsl_split",
    "find_source_triplet",
    "generate_synthetic",
    "load_features",
    "load_manifest",
    "load_masks",
    "load_split",
    "load_synonyms",
    "load_word_embeddings",
    "lookup",
    "mates_for",
    "sample_triplet",
    "stack_triplets",
    "write_features",
    "write_synthetic",
    "write_word_embeddings",
]
