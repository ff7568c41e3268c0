from .dataset import Dataset, build_dataset, dataset_from_csv, dataset_to_csv, relabel
from .mi import FeatureImportance, discrete_mi, entropy, mutual_information
from .pca import PCAResult, jacobi_eigh, pca
from .tree import CVReport, TreeModel, fit_tree, predict, train_tree, tree_from_text, tree_to_text

__all__ = [
    "CVReport",
    "Dataset",
    "FeatureImportance",
    "PCAResult",
    "TreeModel",
    "build_dataset",
    "dataset_from_csv",
    "dataset_to_csv",
    "discrete_mi",
    "entropy",
    "fit_tree",
    "jacobi_eigh",
    "mutual_information",
    "pca",
    "predict",
    "relabel",
    "train_tree",
    "tree_from_text",
    "tree_to_text",
]
