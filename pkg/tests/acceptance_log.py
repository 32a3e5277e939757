"""Per-criterion verdicts collected by test_acceptance and printed at the end of the run."""

RESULTS: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    RESULTS[number] = f"criterion {number} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    print(RESULTS[number])
    return ok
