"""Text-to-image person retrieval trained with bidirectional masked modeling.

Dual transformer encoders align sprite images with templated captions via
identity and similarity-distribution losses; a training-only cross-modal
encoder adds masked-token prediction in both directions (word ids for text,
per-patch part labels for images). Everything runs on a small float64
autodiff kernel and a procedurally generated, exactly-labeled dataset.
"""

__version__ = "0.1.0"
