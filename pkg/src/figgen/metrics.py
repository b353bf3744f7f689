"""Generative evaluation suite: FID, IS, KID, and OCR-SIM.

All scores are computed over a pluggable frozen feature extractor; the
report records the extractor identity because values are only comparable
between runs that used the same extractor.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from figgen import imageio
from figgen.autoencoder.features import ConvFeatureExtractor, FeatureExtractor, feature_rms_distance
from figgen.corpus.manifest import load_manifest
from figgen.corpus.records import pad_to_square, resize_bilinear


class MetricsError(ValueError):
    pass


@dataclass
class FeatureSet:
    """Per-image feature rows plus optional classifier logits."""

    features: np.ndarray  # N x d
    logits: Optional[np.ndarray]  # N x C
    extractor_identity: str

    def validate(self, min_rows: int = 1) -> None:
        if self.features.ndim != 2:
            raise MetricsError(f"features must be N x d, got {self.features.shape}")
        if self.features.shape[0] < min_rows:
            raise MetricsError(f"need at least {min_rows} rows, got {self.features.shape[0]}")
        if not np.isfinite(self.features).all():
            raise MetricsError("non-finite feature rows")


@dataclass
class MetricReport:
    fid: float
    is_mean: float
    kid: float
    ocr_sim: float
    n_generated: int
    n_reference: int
    extractor_identity: str

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def table_row(self) -> str:
        header = f"{'FID':>10}  {'IS':>8}  {'KID':>10}  {'OCR-SIM':>10}"
        row = f"{self.fid:>10.4f}  {self.is_mean:>8.4f}  {self.kid:>10.6f}  {self.ocr_sim:>10.4f}"
        return header + "\n" + row


def _check_pair(ref: FeatureSet, gen: FeatureSet, min_rows: int) -> None:
    ref.validate(min_rows)
    gen.validate(min_rows)
    if ref.features.shape[1] != gen.features.shape[1]:
        raise MetricsError(
            f"feature width mismatch: {ref.features.shape[1]} vs {gen.features.shape[1]}"
        )


def fid(ref: FeatureSet, gen: FeatureSet) -> float:
    """Frechet distance between Gaussian fits of the two feature sets.

    ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), with the matrix
    square root taken by eigendecomposition of the symmetrized product;
    small negative eigenvalues are clipped to zero.
    """
    _check_pair(ref, gen, min_rows=2)
    a = ref.features.astype(np.float64)
    b = gen.features.astype(np.float64)
    mu_r, mu_g = a.mean(axis=0), b.mean(axis=0)
    d = a.shape[1]
    cov_r = np.cov(a, rowvar=False).reshape(d, d)
    cov_g = np.cov(b, rowvar=False).reshape(d, d)
    if not (np.isfinite(cov_r).all() and np.isfinite(cov_g).all()):
        raise MetricsError("non-finite covariance")

    evals_r, evecs_r = np.linalg.eigh(cov_r)
    sqrt_r = (evecs_r * np.sqrt(np.clip(evals_r, 0.0, None))) @ evecs_r.T
    product = sqrt_r @ cov_g @ sqrt_r
    product = (product + product.T) / 2.0
    evals = np.linalg.eigvalsh(product)
    evals = np.where(evals > -1e-6, np.clip(evals, 0.0, None), evals)
    if (evals < 0).any():
        raise MetricsError("covariance product has large negative eigenvalues")
    trace_sqrt = np.sqrt(evals).sum()
    return float(((mu_r - mu_g) ** 2).sum() + np.trace(cov_r) + np.trace(cov_g) - 2.0 * trace_sqrt)


def inception_score(gen_logits: np.ndarray) -> float:
    """exp(mean_i KL(p(y|x_i) || mean_j p(y|x_j))), softmax applied here."""
    logits = np.asarray(gen_logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise MetricsError(f"logits must be N x C with N >= 1, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    marginal = probs.mean(axis=0)
    ratio = np.divide(probs, marginal, out=np.ones_like(probs), where=probs > 0)
    kl = np.where(probs > 0, probs * np.log(ratio), 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(ref: FeatureSet, gen: FeatureSet) -> float:
    """Unbiased MMD^2 with the degree-3 polynomial kernel (x.y/d + 1)^3.

    Within-set sums exclude the diagonal; a single full-set estimate
    (no subset averaging) is returned.
    """
    _check_pair(ref, gen, min_rows=2)
    x = ref.features.astype(np.float64)
    y = gen.features.astype(np.float64)
    m, n = x.shape[0], y.shape[0]
    k_xx = _poly_kernel(x, x)
    k_yy = _poly_kernel(y, y)
    k_xy = _poly_kernel(x, y)
    sum_xx = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    sum_yy = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    sum_xy = k_xy.sum() / (m * n)
    return float(sum_xx + sum_yy - 2.0 * sum_xy)


def ocr_sim(
    extractor: FeatureExtractor,
    pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> float:
    """Mean over same-caption pairs of the weighted RMS feature distance.

    Lower is better; zero iff the paired images produce equal features.
    """
    if len(pairs) == 0:
        raise MetricsError("ocr_sim needs at least one (generated, reference) pair")
    total = 0.0
    with torch.no_grad():
        for gen_img, ref_img in pairs:
            if gen_img.shape != ref_img.shape:
                raise MetricsError(
                    f"paired shape mismatch: {gen_img.shape} vs {ref_img.shape}"
                )
            total += float(
                feature_rms_distance(
                    extractor, imageio.to_tensor(gen_img), imageio.to_tensor(ref_img)
                )
            )
    return total / len(pairs)


class ScoringFeatureExtractor(nn.Module):
    """Seeded conv backbone with pooled features and a small softmax head.

    Desk-scale stand-in for an externally pretrained scoring network; the
    identity string ties every report to this extractor's seed and shape.
    """

    def __init__(self, seed: int = 909, num_classes: int = 16, widths=(32, 64, 128, 256)):
        super().__init__()
        self.backbone = ConvFeatureExtractor(seed=seed, widths=widths, name="scoring")
        gen = torch.Generator().manual_seed(seed + 1)
        feat_dim = widths[-1]
        self.head_weight = nn.Parameter(
            torch.randn(feat_dim, num_classes, generator=gen) / feat_dim**0.5,
            requires_grad=False,
        )
        self.num_classes = num_classes
        self.identity = f"{self.backbone.identity}+head(C={num_classes})"

    @torch.no_grad()
    def featurize(self, images: Sequence[np.ndarray], batch_size: int = 32) -> FeatureSet:
        feats, logits = [], []
        for start in range(0, len(images), batch_size):
            batch = imageio.batch_to_tensor(images[start : start + batch_size])
            fmap = self.backbone.extract(batch)[-1]
            pooled = fmap.mean(dim=(2, 3))
            # Rows scaled to norm sqrt(d) keep the polynomial kernel x.y/d + 1
            # in its intended range regardless of activation magnitude.
            scale = pooled.shape[1] ** 0.5 / pooled.norm(dim=1, keepdim=True).clamp(min=1e-12)
            pooled = pooled * scale
            feats.append(pooled.numpy())
            logits.append((pooled @ self.head_weight).numpy())
        return FeatureSet(
            features=np.concatenate(feats, axis=0).astype(np.float64),
            logits=np.concatenate(logits, axis=0).astype(np.float64),
            extractor_identity=self.identity,
        )


def load_generated_images(directory) -> Dict[str, np.ndarray]:
    """PNG files in a directory keyed by filename stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MetricsError(f"generated directory not found: {directory}")
    images = {}
    for path in sorted(directory.glob("*.png")):
        images[path.stem] = imageio.load_png(path)
    if not images:
        raise MetricsError(f"no PNG samples in {directory}")
    return images


def evaluate(
    generated_dir,
    reference_manifest,
    scoring_extractor: ScoringFeatureExtractor,
    ocr_extractor: FeatureExtractor,
    n: int = 256,
) -> MetricReport:
    """All four metrics over n samples per side.

    Generated files pair with reference records by id (the PNG stem must be
    a manifest id); references are white-padded and resized to the generated
    resolution for the paired OCR-SIM distance.
    """
    generated = load_generated_images(generated_dir)
    references = {r.id: r for r in load_manifest(reference_manifest)}
    if n > len(generated) or n > len(references):
        raise MetricsError(
            f"requested n={n} but have {len(generated)} generated / {len(references)} reference samples"
        )

    gen_ids = sorted(generated)[:n]
    ref_ids = sorted(references)[:n]
    unpaired = [gid for gid in gen_ids if gid not in references]
    if unpaired:
        raise MetricsError(f"generated samples without reference ids for OCR-SIM: {unpaired}")

    gen_images = [generated[g] for g in gen_ids]
    ref_for_scores = [
        resize_bilinear(pad_to_square(references[r].image), gen_images[0].shape[0]) for r in ref_ids
    ]
    gen_set = scoring_extractor.featurize(gen_images)
    ref_set = scoring_extractor.featurize(ref_for_scores)

    pairs = []
    for gid in gen_ids:
        ref_img = resize_bilinear(pad_to_square(references[gid].image), generated[gid].shape[0])
        pairs.append((generated[gid], ref_img))

    return MetricReport(
        fid=fid(ref_set, gen_set),
        is_mean=inception_score(gen_set.logits),
        kid=kid(ref_set, gen_set),
        ocr_sim=ocr_sim(ocr_extractor, pairs),
        n_generated=len(gen_ids),
        n_reference=len(ref_ids),
        extractor_identity=scoring_extractor.identity,
    )
