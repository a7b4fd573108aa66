from __future__ import annotations

from docrec.service import RecommenderService, ServiceConfig
from docrec.textengine import build_index
from helpers import store_from_records


def build_service(data_dir, records, config=None, clock=None) -> RecommenderService:
    """Ingest records, build an index, and stand up an in-process service."""
    store = store_from_records(data_dir, records)
    store.index_version += 1
    index = build_index(store.all_docs(), version=store.index_version)
    return RecommenderService(store, index, config or ServiceConfig(),
                              data_dir, clock=clock)
