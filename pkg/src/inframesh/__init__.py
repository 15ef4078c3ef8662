"""inframesh: desk-scale data mesh for infrastructure project and
procurement records, with a knowledge graph, retrieval gates, and a
multi-agent query orchestrator on top."""

__version__ = "0.1.0"
