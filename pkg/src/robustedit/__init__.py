"""Robust knowledge editing of a toy multimodal classifier.

Adversarial latent variants (:mod:`robustedit.lar`) plus a rank-one
alignment objective on edit-layer hidden states (:mod:`robustedit.rcsl`),
driven by :mod:`robustedit.editor` and scored by :mod:`robustedit.evaluate`.
"""

from .dataset import KBConfig, KnowledgeBase, generate_knowledge_base, make_edit_request, make_edit_requests
from .editor import EditConfig, edit, sequential_edit
from .model import ModelDims, ToyMultimodalModel, train_base

__all__ = [
    "EditConfig",
    "KBConfig",
    "KnowledgeBase",
    "ModelDims",
    "ToyMultimodalModel",
    "edit",
    "generate_knowledge_base",
    "make_edit_request",
    "make_edit_requests",
    "sequential_edit",
    "train_base",
]

__version__ = "0.1.0"
