"""vqa-miner: aligned QA/VQA pair extraction from layout-parsed documents.

The pipeline ingests MinerU-style content lists, asks an LLM to group
blocks into labeled question/answer pairs by id, reassembles and merges
the results across chunks and documents, and ships evaluation plus
curation tooling around the extracted pairs.
"""

__version__ = "0.1.0"
