"""Sparse bit-vector coding, code-space layout, detection and embeddings.

The package is organised around one data currency, the fixed-length sparse
bit code, and a pipeline that encodes stimuli into such codes, lays the
codes out on a 2D grid so similar codes become neighbours, builds a
hierarchy of circular detectors over the laid-out grid, and reads detector
activity back out as compact structural embeddings.

Modules:
    bitcode   -- bit/feature vectors, similarity measures, thresholding
    chroma    -- colour-ranked codes and saturation-bounded merging
    encoders  -- wide-detector encoders for scalars, polar/cyclic values,
                 lexical numbers and words
    memory    -- fuzzy associative store, list encoding and traversal
    layout    -- the stochastic swap-based grid layout engine
    detect    -- space activation, detector hierarchies, embeddings
    morph     -- subword fragment dictionary and morphology code spaces
    formats   -- container/image file formats shared by the CLI
    cli       -- command-line front end
"""

from damp.bitcode import BitCode, FeatureVector, SimilarityConfig, similarity, sim_lambda
from damp.chroma import ColouredCode, MergePolicy, colour_merge

__all__ = [
    "BitCode",
    "FeatureVector",
    "SimilarityConfig",
    "similarity",
    "sim_lambda",
    "ColouredCode",
    "MergePolicy",
    "colour_merge",
]
