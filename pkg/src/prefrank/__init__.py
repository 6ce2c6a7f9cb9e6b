"""prefrank: preference-ranking rewards and evaluation tooling for
generative image super-resolution.

The package covers the full loop around LR-conditioned quality scoring:
exact rank arithmetic and ranking metrics (`ranking`), paired-comparison
rank rewards, format gating and group advantages (`rewards`), detection
filtering and global/local score fusion (`crops`), a scorer-agnostic
request gateway with a deterministic mock (`gateway`), and a persistent
annotation dataset service (`dataset`, `service`) with a CLI (`cli`).
"""

from prefrank.ranking import (
    AnnotationGroup,
    Candidate,
    RankVector,
    aggregate_ranks,
    agreement,
    annotator_agreement,
    evaluation_report,
    filter_at_1,
    midrank,
    pairwise_order,
    preference_label,
    preference_matrix,
    recall_at_1,
    scores_to_ranks,
    win_rate_matrix,
)

__version__ = "0.1.0"
