from ._native import (
    __version__,
    check_replay,
    live_bound,
    replay_bound,
    run_cli,
    sign_agreement,
    tree_accounting,
    two_gaussians,
)

__all__ = [
    "__version__",
    "check_replay",
    "live_bound",
    "replay_bound",
    "run_cli",
    "sign_agreement",
    "tree_accounting",
    "two_gaussians",
]
