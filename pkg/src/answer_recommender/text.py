"""Text normalization shared by ingestion, retrieval and labeling."""

import re
import warnings
from datetime import datetime, timezone

from bs4 import BeautifulSoup, MarkupResemblesLocatorWarning

__all__ = [
    "parse_tags",
    "parse_timestamp",
    "split_sentences",
    "strip_html",
    "tokenize",
]

_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")
# Words keep inner connectors ("don't", "c++", "node.js", "x86_64"); anything
# else that is not whitespace becomes a token of its own.
_TOKEN = re.compile(r"[a-z0-9]+(?:['_\-+#.][a-z0-9+#]+)*\+*|[^\sa-z0-9]")
_WHITESPACE = re.compile(r"\s+")


def strip_html(html: str) -> str:
    """Remove ``<code>``/``<pre>`` blocks entirely and reduce the rest to text."""
    if not html:
        return ""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarkupResemblesLocatorWarning)
        soup = BeautifulSoup(html, "html.parser")
    for block in soup.find_all(["pre", "code"]):
        block.decompose()
    return _WHITESPACE.sub(" ", soup.get_text(" ")).strip()


def split_sentences(text: str) -> list[str]:
    """Split after ``.``, ``!`` or ``?`` when followed by whitespace."""
    return [s.strip() for s in _SENTENCE_BREAK.split(text.strip()) if s.strip()]


def tokenize(text: str) -> list[str]:
    """Lowercase word tokenization; ``?`` is always its own token."""
    return _TOKEN.findall(text.lower())


def parse_tags(raw: str | None) -> list[str]:
    """Parse ``<a><b>`` (classic dumps) or ``|a|b|`` (newer dumps) tag strings."""
    if not raw:
        return []
    if raw.startswith("|"):
        return [tag for tag in raw.strip("|").split("|") if tag]
    return re.findall(r"<([^<>]+)>", raw)


def parse_timestamp(raw: str) -> datetime:
    """Parse a dump ``CreationDate`` (naive ISO, UTC by convention)."""
    stamp = datetime.fromisoformat(raw.rstrip("Z"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(timezone.utc)
