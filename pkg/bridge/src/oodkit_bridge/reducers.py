"""Seeded UMAP and t-SNE reductions over flattened embeddings.

UMAP fits on the train split and transforms the test split. t-SNE has no
out-of-sample transform, so it fits once on the train+test union and the
joint-fit caveat is recorded in the output metadata. Both run with the
libraries' default parameters apart from n_components and the seed.
"""

from __future__ import annotations

import numpy as np

from .io import BridgeError

UMAP_MAX_COMPONENTS = 256
TSNE_MAX_COMPONENTS = 3  # standard t-SNE implementations embed into <= 3 dims


def check_request(method: str, n_components: int) -> None:
    if method == "umap":
        if not 2 <= n_components <= UMAP_MAX_COMPONENTS:
            raise BridgeError(
                f"umap n_components must be in 2..{UMAP_MAX_COMPONENTS}, got {n_components}"
            )
    elif method == "tsne":
        if not 1 <= n_components <= TSNE_MAX_COMPONENTS:
            raise BridgeError(
                f"tsne n_components must be in 1..{TSNE_MAX_COMPONENTS}, got {n_components}"
            )
    else:
        raise BridgeError(f"unknown method {method!r} (expected umap or tsne)")


def umap_available() -> tuple[bool, str]:
    try:
        import umap  # noqa: F401
    except ImportError as exc:
        return False, f"umap backend not installed ({exc}); pip install oodkit-bridge[umap]"
    return True, ""


def reduce_umap(
    train: np.ndarray, test: np.ndarray, n_components: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    ok, why = umap_available()
    if not ok:
        raise BridgeError(why)
    import umap

    try:
        model = umap.UMAP(n_components=n_components, random_state=seed)
        train_out = model.fit_transform(train)
        test_out = model.transform(test)
    except (ValueError, TypeError) as exc:
        raise BridgeError(f"umap failed: {exc}") from exc
    return np.asarray(train_out, np.float64), np.asarray(test_out, np.float64)


def reduce_tsne(
    train: np.ndarray, test: np.ndarray, n_components: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    from sklearn.manifold import TSNE

    union = np.vstack([train, test])
    try:
        embedded = TSNE(n_components=n_components, random_state=seed).fit_transform(union)
    except ValueError as exc:
        raise BridgeError(f"tsne failed: {exc}") from exc
    embedded = np.asarray(embedded, np.float64)
    return embedded[: len(train)], embedded[len(train):]
