from collections import defaultdict

# Recoverable conditions hit while computing losses, e.g.
# 'detection_no_labeled_proposals' or 'mil_box_unlabeled_skipped'.
# The trainer copies these into its stats and resets them per run.
LOSS_WARNINGS = defaultdict(int)


def reset_loss_warnings() -> None:
    LOSS_WARNINGS.clear()
