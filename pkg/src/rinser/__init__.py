"""Static-analysis pipeline for API codeprints in x86 disassembly listings.

Parses annotated listings, extracts API callsites with backtracked parameter
context, normalizes them into token corpora for masked-LM training, builds a
confidence-scored API reference database, applies semantics-preserving
adversarial transformations, and scores API-name predictions.
"""

from .corpus import (
    CorpusError,
    CorpusExample,
    RefDb,
    RefDbEntry,
    build_example,
    build_refdb,
    emit_corpus,
    emit_refdb,
    read_corpus,
    read_refdb,
    validate_refdb,
)
from .evaluate import (
    ContextGroups,
    EvalError,
    EvalReport,
    IntentCatalog,
    PredictionRecord,
    build_context_groups,
    load_intent_catalog,
    macro_average,
    score_context_aware,
    score_exact,
    tag_intents,
)
from .extractor import (
    ApiCodeprint,
    ObfuscatedCallsite,
    ParamContext,
    backtrack_parameter,
    detect_obfuscated_callsites,
    extract_codeprints,
)
from .listing import (
    ApiCatalog,
    ApiEntry,
    CallTarget,
    CatalogError,
    Function,
    Instruction,
    Listing,
    ListingError,
    Operand,
    classify_call_target,
    load_api_catalog,
    parse_listing,
    render_listing,
)
from .normalize import (
    NormalizedCodeprint,
    clean_token,
    map_operand,
    normalize_codeprint,
)
from .transform import (
    TransformError,
    TransformPlan,
    apply_plan,
    displace_code,
    ipr_transform,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
