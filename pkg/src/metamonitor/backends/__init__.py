from .base import (
    ChatBackend,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    EmbeddingBackend,
    FinishReason,
    RetryPolicy,
    SearchBackend,
    SearchResultSet,
    with_retries,
)
from .http import OpenAIChat, OpenAIEmbedder
from .mock import (
    FunctionChat,
    HashingEmbedder,
    InMemorySearch,
    ScriptedChat,
    TableEmbedder,
    TopicEmbedder,
    fingerprint_key,
    response_from_dict,
    response_to_dict,
    step_key,
)
from .search import FixtureSearch, LiveSearch, query_fingerprint, write_fixture

__all__ = [
    "ChatBackend", "ChatMessage", "ChatRequest", "ChatResponse", "EmbeddingBackend",
    "FinishReason", "RetryPolicy", "SearchBackend", "SearchResultSet", "with_retries",
    "FunctionChat", "HashingEmbedder", "InMemorySearch", "ScriptedChat", "TableEmbedder",
    "TopicEmbedder", "fingerprint_key", "response_from_dict", "response_to_dict", "step_key",
    "OpenAIChat", "OpenAIEmbedder", "FixtureSearch", "LiveSearch", "query_fingerprint",
    "write_fixture",
]
