"""Partition perturbations built on Kakutani-Rokhlin towers."""

from .encoding import Codebook, DecodeFailure, DecodeResult, decode_factor, encode_factor
from .markers import marker_scan
from .relabel import codeword_allocator, generator_relabel
from .rosenblatt import WitnessPair, evaluate_witness, rosenblatt_breaker
