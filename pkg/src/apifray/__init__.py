"""apifray: an HTTP proxy that bends API responses to measure client fragility.

The pieces compose in layers. `document` parses JSON/XML into a mutable tree
with stable field paths; `mutation` holds the six response operators;
`session` records exchanges and observations; `proxy` serves captures and
rewrites live traffic; `campaign` scripts operator sequences and fingerprints
targets; `report` folds observations into the fragility report; `control`
exposes the whole thing over HTTP; `cli` is the command-line front end;
`simclient` is a scriptable client for end-to-end oracle runs.
"""

from .document import (
    DocumentFormat,
    FieldPath,
    MalformedDocument,
    enumerate_removal_targets,
    parse,
    parse_path,
    serialize,
    trees_equal,
)
from .mutation import (
    KIND_ORDER,
    KIND_TITLES,
    EscalationExhausted,
    InvalidMutationSpec,
    MutationFailed,
    MutationKind,
    MutationSpec,
    NothingToMutate,
    TargetNotEligible,
    apply_mutation,
    spec_from_dict,
    spec_to_dict,
)
from .session import (
    SEVERITY_ORDER,
    Behavior,
    CapturedExchange,
    EventLog,
    ObservationRecord,
    Origin,
    SessionFormatError,
    SessionStore,
    severity,
)
from .proxy import Matcher, ProxyServer, Rule, RuleMode, RuleSet
from .campaign import (
    CachingVerdict,
    CampaignError,
    CampaignPlan,
    TargetProfile,
    VersioningInfo,
    VersioningScheme,
    assess_caching,
    detect_versioning,
    load_plan,
    record_observation,
    run_campaign,
)
from .report import (
    FragilityReport,
    ReportFormat,
    aggregate,
    observations_by_endpoint,
    parse_machine_report,
    render_report,
)
from .config import Config, ConfigError, generate_token, load_config
from .control import ControlServer, ProfileBook

__version__ = "0.1.0"

__all__ = [
    "DocumentFormat",
    "FieldPath",
    "MalformedDocument",
    "enumerate_removal_targets",
    "parse",
    "parse_path",
    "serialize",
    "trees_equal",
    "KIND_ORDER",
    "KIND_TITLES",
    "EscalationExhausted",
    "InvalidMutationSpec",
    "MutationFailed",
    "MutationKind",
    "MutationSpec",
    "NothingToMutate",
    "TargetNotEligible",
    "apply_mutation",
    "spec_from_dict",
    "spec_to_dict",
    "SEVERITY_ORDER",
    "Behavior",
    "CapturedExchange",
    "EventLog",
    "ObservationRecord",
    "Origin",
    "SessionFormatError",
    "SessionStore",
    "severity",
    "Matcher",
    "ProxyServer",
    "Rule",
    "RuleMode",
    "RuleSet",
    "CachingVerdict",
    "CampaignError",
    "CampaignPlan",
    "TargetProfile",
    "VersioningInfo",
    "VersioningScheme",
    "assess_caching",
    "detect_versioning",
    "load_plan",
    "record_observation",
    "run_campaign",
    "FragilityReport",
    "ReportFormat",
    "aggregate",
    "observations_by_endpoint",
    "parse_machine_report",
    "render_report",
    "Config",
    "ConfigError",
    "generate_token",
    "load_config",
    "ControlServer",
    "ProfileBook",
    "__version__",
]
