"""cogrec: a recommender agent whose reasoning core is a production-rule
system (working memory, decision cycle, impasses, chunking) and whose
knowledge source is an external language-model service, plus the
evaluation harness around it."""

__version__ = "0.1.0"

from .symbols import Atom, Identifier, Number, Variable  # noqa: F401
from .memory import WME, WorkingMemory  # noqa: F401
from .dsl import Production, parse_production, serialize_production  # noqa: F401
from .engine import Engine, ProceduralMemory, match_all, resolve_preferences  # noqa: F401
from .chunking import ChunkRaw, build_chunk, internalize  # noqa: F401
from .bridge import symbol_to_text, text_to_chunk  # noqa: F401
from .gateway import Gateway, OracleProvider, ProviderConfig  # noqa: F401
from .agent import SessionConfig, bootstrap, llm_direct, run_session  # noqa: F401
