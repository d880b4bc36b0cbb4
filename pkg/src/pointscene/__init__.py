"""pointscene: hierarchical 3D scene graphs and navigation graphs from raw
indoor point clouds, with open-vocabulary room and object labeling."""

__version__ = "0.1.0"
