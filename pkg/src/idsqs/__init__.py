"""In-place double-stimulus image quality studies.

Subpackages cover the full workflow: study configuration and rating
ingestion (`domain`), the shared statistical kernel (`numerics`), rater
screening (`screening`), bias-corrected DMOS reconstruction with
bootstrap confidence intervals (`reconstruction`), Beta score modeling
(`distfit`), JND-scale alignment (`alignment`), a synthetic-population
oracle (`simulator`), the HTTP study runner (`service`) and the `idsqs`
command line (`cli`).
"""

__version__ = "0.1.0"
