"""
The full evaluation battery, before and after alignment.

Stages:
- ``before``: source rows read directly as target coordinates (only when d == d_tilde);
- ``after``: source rows mapped by the alignment map; image rows use the map's stored
  means, text rows use the text means when given (modality-specific centering);
- ``native``: each model's own zero-shot accuracy, as a reference.

Metric families: paired image/text cosine and L2, image->image and text->text class
retrieval across models, and three zero-shot variants (aligned images vs target
prototypes, target images vs aligned source prototypes, aligned images vs aligned
source prototypes). A family whose inputs lack labels is skipped with a warning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from isoalign.align.maps import apply_rows
from isoalign.core.console import get_logger
from isoalign.core.exceptions import (
    DimensionMismatchError,
    MissingLabelsError,
    PairingError,
    UnknownClassError,
)
from isoalign.core.models import AlignmentMap, ClassPrototypes, EmbeddingSet, MetricsReport
from isoalign.store.embeddings import class_prototypes, normalize

from .paired import paired_cosine, paired_l2, unit_rows
from .report import Report
from .retrieval import class_retrieval_top1, zero_shot

logger = get_logger(__name__)

FAMILIES = (
    "image_cosine",
    "image_l2",
    "text_cosine",
    "text_l2",
    "image_retrieval",
    "text_retrieval",
    "zeroshot_aligned_image",
    "zeroshot_aligned_text",
    "zeroshot_aligned_both",
    "zeroshot_source",
    "zeroshot_target",
)


@dataclass
class BatteryResult:
    metrics: Dict[str, Dict[str, MetricsReport]] = field(default_factory=dict)
    skipped: List[str] = field(default_factory=list)

    def get(self, family: str, stage: str) -> Optional[MetricsReport]:
        return self.metrics.get(family, {}).get(stage)

    def add_to(self, report: Report, subset: str = "all", **keys) -> None:
        for family in FAMILIES:
            for stage, metrics in sorted(self.metrics.get(family, {}).items()):
                report.add_metrics(family, subset, metrics, stage=stage, **keys)

    def to_dict(self) -> Dict:
        return {
            "metrics": {
                family: {stage: m.to_dict() for stage, m in sorted(stages.items())}
                for family, stages in sorted(self.metrics.items())
            },
            "skipped": sorted(set(self.skipped)),
        }


def _prototypes_of(texts: EmbeddingSet) -> Optional[ClassPrototypes]:
    if texts.labels is None or texts.n == 0:
        return None
    prepared = texts if texts.normalized else normalize(texts)
    return class_prototypes(prepared)


def _mapped_prototypes(protos: ClassPrototypes, rows: np.ndarray) -> ClassPrototypes:
    return ClassPrototypes(data=unit_rows(rows), class_ids=protos.class_ids, source=protos.source)


def evaluate_battery(
    src_img: EmbeddingSet,
    src_txt: EmbeddingSet,
    tgt_img: EmbeddingSet,
    tgt_txt: EmbeddingSet,
    amap: AlignmentMap,
    text_mu_source: Optional[np.ndarray] = None,
    text_mu_target: Optional[np.ndarray] = None,
    src_protos: Optional[ClassPrototypes] = None,
    tgt_protos: Optional[ClassPrototypes] = None,
) -> BatteryResult:
    """Run every metric family; prototypes default to the class means of the text sets."""
    if src_img.d != amap.d or src_txt.d != amap.d:
        raise DimensionMismatchError(f"source sets must have d={amap.d}")
    if tgt_img.d != amap.d_tilde or tgt_txt.d != amap.d_tilde:
        raise DimensionMismatchError(f"target sets must have d={amap.d_tilde}")

    result = BatteryResult()
    src_protos = src_protos if src_protos is not None else _prototypes_of(src_txt)
    tgt_protos = tgt_protos if tgt_protos is not None else _prototypes_of(tgt_txt)

    stages = {"after": amap}
    if amap.d == amap.d_tilde:
        stages["before"] = None
    else:
        logger.info("d=%d != d_tilde=%d: no 'before' stage", amap.d, amap.d_tilde)

    def run(family: str, stage: str, fn: Callable[[], MetricsReport]) -> None:
        try:
            result.metrics.setdefault(family, {})[stage] = fn()
        except (MissingLabelsError, UnknownClassError, PairingError) as e:
            logger.warning("skipping %s (%s): %s", family, stage, e)
            result.skipped.append(family)

    for stage, stage_map in stages.items():
        if stage_map is None:
            img, txt = src_img, src_txt
            aligned_protos = src_protos
        else:
            img = src_img.with_data(apply_rows(stage_map, src_img.data), normalized=False)
            txt = src_txt.with_data(
                apply_rows(stage_map, src_txt.data, text_mu_source, text_mu_target),
                normalized=False,
            )
            aligned_protos = None
            if src_protos is not None:
                aligned_protos = _mapped_prototypes(
                    src_protos,
                    apply_rows(stage_map, src_protos.data, text_mu_source, text_mu_target),
                )

        run("image_cosine", stage, lambda: paired_cosine(img, tgt_img))
        run("image_l2", stage, lambda: paired_l2(img, tgt_img))
        run("text_cosine", stage, lambda: paired_cosine(txt, tgt_txt))
        run("text_l2", stage, lambda: paired_l2(txt, tgt_txt))
        run("image_retrieval", stage, lambda: class_retrieval_top1(img, tgt_img))
        run("text_retrieval", stage, lambda: class_retrieval_top1(txt, tgt_txt))
        if tgt_protos is not None:
            run("zeroshot_aligned_image", stage, lambda: zero_shot(img, tgt_protos))
        else:
            result.skipped.append("zeroshot_aligned_image")
        if aligned_protos is not None:
            run("zeroshot_aligned_text", stage, lambda: zero_shot(tgt_img, aligned_protos))
            run("zeroshot_aligned_both", stage, lambda: zero_shot(img, aligned_protos))
        else:
            result.skipped.extend(["zeroshot_aligned_text", "zeroshot_aligned_both"])

    if src_protos is not None:
        run("zeroshot_source", "native", lambda: zero_shot(src_img, src_protos))
    if tgt_protos is not None:
        run("zeroshot_target", "native", lambda: zero_shot(tgt_img, tgt_protos))
    if src_protos is None or tgt_protos is None:
        logger.warning("text sets without labels: zero-shot metrics skipped")
    return result
