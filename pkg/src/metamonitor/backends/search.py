"""Search backends: a fixed on-disk corpus and a live web-search + page-extraction client.

Fixture corpus layout::

    <corpus>/<query fingerprint>/manifest.json
    <corpus>/<query fingerprint>/<rank>_<doc_id>.txt

``manifest.json`` holds ``{"query": ..., "documents": [{"doc_id", "title",
"rank", "file"}]}``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Sequence

import httpx

from ..errors import BackendUnavailable, ParseError
from ..trajectory import RetrievedDocument
from .base import RetryPolicy, SearchResultSet, with_retries

logger = logging.getLogger(__name__)


def query_fingerprint(query_string: str) -> str:
    normalized = " ".join(query_string.split()).lower()
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:16]


def write_fixture(corpus_dir: str | Path, query_string: str,
                  documents: Sequence[RetrievedDocument]) -> Path:
    folder = Path(corpus_dir) / query_fingerprint(query_string)
    folder.mkdir(parents=True, exist_ok=True)
    entries = []
    for d in documents:
        name = f"{d.rank:03d}_{hashlib.sha1(d.doc_id.encode()).hexdigest()[:10]}.txt"
        (folder / name).write_text(d.content, encoding="utf-8")
        entries.append({"doc_id": d.doc_id, "title": d.title, "rank": d.rank, "file": name})
    manifest = {"query": query_string, "documents": entries}
    (folder / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False),
                                          encoding="utf-8")
    return folder


class FixtureSearch:
    def __init__(self, corpus_dir: str | Path):
        self.corpus_dir = Path(corpus_dir)

    def search(self, query_string: str, top_k: int = 5) -> SearchResultSet:
        if not query_string:
            raise ValueError("empty search query")
        folder = self.corpus_dir / query_fingerprint(query_string)
        manifest_path = folder / "manifest.json"
        if not manifest_path.exists():
            return SearchResultSet(query_string, ())
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            entries = sorted(manifest["documents"], key=lambda e: int(e["rank"]))
            docs = tuple(
                RetrievedDocument(str(e["doc_id"]), str(e.get("title", "")),
                                  (folder / e["file"]).read_text(encoding="utf-8"), int(e["rank"]))
                for e in entries[:top_k]
            )
        except (OSError, KeyError, ValueError) as exc:
            raise ParseError(f"corrupt fixture {manifest_path}: {exc}") from None
        return SearchResultSet(query_string, docs)


class LiveSearch:
    """Web search followed by page-to-text extraction.

    The search endpoint receives ``POST {"q": query, "num": top_k}`` and must
    answer with ``{"organic": [{"title", "link", "snippet"}]}``. The extraction
    endpoint is called as ``GET <extract_url><page url>`` and returns plain text.
    Pages that fail to extract fall back to their snippet.
    """

    def __init__(self, search_url: str, extract_url: str | None = None,
                 search_key_env: str = "SEARCH_API_KEY", extract_key_env: str = "EXTRACT_API_KEY",
                 retry: RetryPolicy = RetryPolicy(), max_chars: int = 20000,
                 client: httpx.Client | None = None):
        self.search_url = search_url
        self.extract_url = extract_url
        self.search_key = os.environ.get(search_key_env, "")
        self.extract_key = os.environ.get(extract_key_env, "")
        self.retry = retry
        self.max_chars = max_chars
        self.client = client or httpx.Client(timeout=retry.timeout)

    def _search(self, query_string: str, top_k: int) -> list[dict]:
        resp = self.client.post(self.search_url, json={"q": query_string, "num": top_k},
                                headers={"X-API-KEY": self.search_key})
        resp.raise_for_status()
        return list(resp.json().get("organic", []))[:top_k]

    def _extract(self, url: str) -> str:
        headers = {"Authorization": f"Bearer {self.extract_key}"} if self.extract_key else {}
        resp = self.client.get(f"{self.extract_url}{url}", headers=headers)
        resp.raise_for_status()
        return resp.text

    def search(self, query_string: str, top_k: int = 5) -> SearchResultSet:
        if not query_string:
            raise ValueError("empty search query")
        hits = with_retries(lambda: self._search(query_string, top_k), self.retry, "search",
                            retry_on=(httpx.HTTPError,))
        docs = []
        for rank, hit in enumerate(hits, start=1):
            link = str(hit.get("link", ""))
            content = str(hit.get("snippet", ""))
            if self.extract_url and link:
                try:
                    content = with_retries(lambda: self._extract(link), self.retry, "extract",
                                           retry_on=(httpx.HTTPError,)) or content
                except BackendUnavailable as exc:
                    logger.warning("extraction failed for %s: %s", link, exc)
            content = content[: self.max_chars] or "(empty page)"
            docs.append(RetrievedDocument(link or f"hit-{rank}", str(hit.get("title", "")), content, rank))
        return SearchResultSet(query_string, tuple(docs))
