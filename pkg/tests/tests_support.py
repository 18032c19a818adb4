# one "criterion N: PASS|FAIL - detail" line per acceptance criterion, filled in as they run
ACCEPTANCE_LINES: list[str] = []
