"""Related-document recommendations as a service.

Ingests partner metadata exports into a canonical document store, serves
related-document recommendations over a REST API using a per-request
randomized algorithm recipe, logs impressions and clicks to an append-only
event log, and computes CTR analytics over that log.
"""

__version__ = "0.1.0"
