import numpy as np

from config.exceptions import EpisodeShapeError
from .models import Episode


def sample_episode(dataset, split, n_way, k_shot, m_query, rng):
    """
    Draw one N-way K-shot M-query episode from `split`.

    Classes are drawn without replacement; inside each class K + M rows
    are drawn without replacement, the first K going to the support set
    and the next M to the query set. The i-th drawn class gets local label i.
    """
    if n_way < 1 or k_shot < 1 or m_query < 0:
        raise EpisodeShapeError(
            f"invalid episode shape n_way={n_way}, k_shot={k_shot}, m_query={m_query}"
        )
    dataset.check_episode_shape(split, n_way, k_shot, m_query)

    classes = dataset.split_classes(split)
    chosen = rng.choice(len(classes), size=n_way, replace=False)

    support, query = [], []
    support_rows, query_rows = [], []
    class_map = np.empty(n_way, dtype=np.int64)
    for local, index in enumerate(chosen):
        cls = classes[int(index)]
        rows = rng.choice(cls.n_rows, size=k_shot + m_query, replace=False)
        support.append(cls.features[rows[:k_shot]])
        query.append(cls.features[rows[k_shot:]])
        support_rows.extend((cls.class_id, int(r)) for r in rows[:k_shot])
        query_rows.extend((cls.class_id, int(r)) for r in rows[k_shot:])
        class_map[local] = dataset.label_index(cls.class_id)

    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        m_query=m_query,
        support=np.vstack(support),
        support_labels=np.repeat(np.arange(n_way), k_shot),
        query=np.vstack(query),
        query_labels=np.repeat(np.arange(n_way), m_query),
        class_map=class_map,
        support_rows=support_rows,
        query_rows=query_rows,
    )
